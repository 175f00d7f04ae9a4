// purple: generate data, embed, train, rank, evaluate and run oracle suites.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 usage or input error, 3 reward
// transport or reward service error, 4 numeric failure (including oracle suite
// violations), 5 shape mismatch.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "purple/core.hpp"
#include "purple/environment.hpp"
#include "purple/errors.hpp"
#include "purple/evalkit.hpp"
#include "purple/oracle_suites.hpp"
#include "purple/reward.hpp"
#include "purple/run_config.hpp"
#include "purple/scorer.hpp"
#include "purple/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace purple;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kUsage = 2, kTransport = 3, kNumeric = 4, kShape = 5 };

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ShapeError*>(&e)) return kShape;
    if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
    if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
        dynamic_cast<const AlignmentError*>(&e))
        return kTransport;
    if (dynamic_cast<const Error*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e) ||
        dynamic_cast<const nlohmann::json::exception*>(&e))
        return kUsage;
    return kFailure;
}

// Flags shared by commands that build a RunConfig: a config file, then generic
// key=value overrides, then the dedicated flags (applied last, so they win).
struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;
    std::map<std::string, std::string> defaults;

    void add_to(CLI::App* app) {
        app->add_option("--config", config_path, "TOML-style key = value file")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "Override one setting, key=value (repeatable)");
    }

    void add_flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(name, [this, key](const std::string& v) { flags[key] = v; }, help);
    }

    RunConfig resolve() const {
        RunConfig config;
        for (const auto& [key, value] : defaults) config.set(key, value);
        if (!config_path.empty()) apply_config_file(config, config_path);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ParseError("--set expects key=value, got \"" + kv + "\"");
            config.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        for (const auto& [key, value] : flags) config.set(key, value);
        return config;
    }
};

void print_json(const json& j) {
    std::cout << j.dump() << '\n';
    std::cout.flush();
}

void attach_embeddings(std::vector<DatasetExample>& examples, const RunConfig& config, std::size_t width) {
    if (config.embedding.mode == EmbeddingProvider::Mode::file) {
        if (config.embedding.path.empty()) throw ParseError("embedding_mode = file needs embedding_path");
        load_embeddings(config.embedding.path, examples, width);
    } else {
        attach_hash_embeddings(examples, width, config.embedding.table_seed);
    }
}

void require_k_fits(const std::vector<DatasetExample>& examples, std::size_t k) {
    for (const auto& ex : examples) {
        if (k > ex.context.size())
            throw ValidationError("k = " + std::to_string(k) + " exceeds the " + std::to_string(ex.context.size()) +
                                  " records of user \"" + ex.user_id + "\"");
    }
}

// ---------------------------------------------------------------------------

fs::path default_world_path(const fs::path& data) { return fs::path(data.string() + ".world.json"); }

int cmd_gen_data(const ConfigFlags& cf, std::size_t users, const fs::path& out, const fs::path& embeddings_out,
                 const fs::path& table_out, fs::path world_out) {
    if (users == 0) throw ParseError("--users must be at least 1");
    auto config = cf.resolve();
    auto data = generate_dataset(config.world, users);
    if (world_out.empty()) world_out = default_world_path(out);
    save_dataset(out, data.examples);
    write_file_atomically(world_out, data.header.dump(2) + "\n");
    if (!embeddings_out.empty()) {
        attach_hash_embeddings(data.examples, config.world.embed_width, config.embedding.table_seed);
        save_embeddings(embeddings_out, data.examples);
    }
    if (!table_out.empty()) save_reward_script(table_out, script_from_worlds(data.examples, data.worlds, config.world.k));
    json summary{{"command", "gen-data"},
                 {"seed", config.world.seed},
                 {"users", users},
                 {"dataset", out.string()},
                 {"world", world_out.string()},
                 {"world_spec", config.world.to_json()}};
    if (!embeddings_out.empty()) summary["embeddings"] = embeddings_out.string();
    if (!table_out.empty()) summary["reward_table"] = table_out.string();
    print_json(summary);
    return kOk;
}

int cmd_embed(const fs::path& data_path, const fs::path& out, std::size_t width, std::uint64_t seed) {
    auto examples = load_dataset(data_path);
    attach_hash_embeddings(examples, width, seed);
    save_embeddings(out, examples);
    print_json({{"command", "embed"}, {"seed", seed}, {"width", width}, {"examples", examples.size()},
                {"embeddings", out.string()}});
    return kOk;
}

// Provenance from --world, else `<data>.world.json`, else a header line inside the dataset.
std::optional<nlohmann::json> load_world_header(const fs::path& data_path, const fs::path& world_path,
                                                const DatasetFile& file) {
    fs::path path = world_path.empty() ? default_world_path(data_path) : world_path;
    if (!world_path.empty() || fs::exists(path)) {
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open world provenance " + path.string());
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ": " + e.what());
        }
    }
    return file.header;
}

std::shared_ptr<const RewardOracle> make_oracle(const RunConfig& config, const DatasetFile& file,
                                                const std::optional<nlohmann::json>& header) {
    if (config.reward == "http") {
        HttpRewardOptions options;
        options.endpoint = resolve_endpoint(config.reward_endpoint);
        options.length_normalize = config.length_normalize;
        if (options.endpoint.empty())
            throw ConfigError("reward = http needs --endpoint, reward_endpoint or PURPLE_REWARD_ENDPOINT");
        return std::make_shared<LlmRewardOracle>(options);
    }
    if (config.reward == "table") {
        if (config.reward_table.empty()) throw ParseError("reward = table needs --reward-table");
        auto script = std::make_shared<const RewardScript>(load_reward_script(config.reward_table));
        return std::make_shared<ScriptedOracle>(script, PromptTemplate{}, config.length_normalize);
    }
    if (!header) throw ValidationError("synthetic reward needs the world provenance written by gen-data");
    auto data = regenerate_from_header(*header);
    auto worlds = data.worlds_by_user();
    for (const auto& ex : file.examples) {
        auto it = worlds.find(ex.user_id);
        if (it == worlds.end()) throw ValidationError("no synthetic world for user \"" + ex.user_id + "\"");
        if (it->second.coverage.size() != ex.context.size())
            throw ValidationError("dataset records of user \"" + ex.user_id + "\" do not match its world");
    }
    std::shared_ptr<const RewardOracle> oracle = std::make_shared<SyntheticOracle>(std::move(worlds));
    const double noise = WorldSpec::from_json((*header)["world_spec"]).noise;
    if (noise > 0.0) oracle = std::make_shared<JitteredOracle>(oracle, noise, config.train.seed);
    return oracle;
}

int cmd_train(const ConfigFlags& cf, const fs::path& data_path, const fs::path& world_path, const fs::path& out,
              bool quiet) {
    auto config = cf.resolve();
    config.train.validate();
    auto file = load_dataset_file(data_path);
    if (file.examples.empty()) throw ValidationError("dataset " + data_path.string() + " has no examples");
    require_k_fits(file.examples, config.train.k);
    attach_embeddings(file.examples, config, config.scorer.d_model);
    std::optional<nlohmann::json> header;
    if (config.reward == "synthetic") header = load_world_header(data_path, world_path, file);
    auto oracle = make_oracle(config, file, header);

    auto [train_set, val_set] = split_dataset(file.examples, config.train.validation_fraction);
    fs::create_directories(out);
    TrainOptions options;
    options.out_dir = out;
    if (!quiet) {
        options.on_epoch = [&](const EpochLog& e) { std::cerr << e.to_json(config.train).dump() << '\n'; };
    }
    auto result = train(train_set, val_set, config.train, *oracle, init_params(config.train.seed, config.scorer),
                        options);
    print_json({{"command", "train"},
                {"seed", config.train.seed},
                {"reward", config.reward},
                {"epochs", result.log.size()},
                {"train_examples", train_set.size()},
                {"validation_examples", val_set.size()},
                {"best_val_reward", result.best_val_reward},
                {"best_checkpoint", result.best_checkpoint.string()},
                {"log", (out / "train_log.jsonl").string()}});
    return kOk;
}

int cmd_rank(const fs::path& checkpoint, const fs::path& data_path, std::size_t k, const fs::path& embeddings,
             std::uint64_t seed) {
    auto params = load_checkpoint(checkpoint);
    auto examples = load_dataset(data_path);
    require_k_fits(examples, k);
    if (!embeddings.empty()) load_embeddings(embeddings, examples, params.config.d_model);
    else attach_hash_embeddings(examples, params.config.d_model, seed);
    for (const auto& ex : examples) {
        const auto scores = encode_records(ex.context, params);
        const auto profile = top_k_profile(PLDistribution(scores, k));
        json ids = json::array();
        for (auto i : profile.indices) ids.push_back(ex.context.records[i].id);
        print_json({{"user_id", ex.user_id}, {"profile", ids}, {"k", k}, {"seed", seed}});
    }
    return kOk;
}

// Lines are either JSON objects with an id ("id" or "user_id") and a text field
// ("output", "prediction", "reference" or "text"), or plain text keyed by line number.
std::vector<std::pair<std::string, std::string>> read_texts(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<std::pair<std::string, std::string>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line.front() == '{') {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
            }
            std::string id = j.contains("id") ? j["id"].get<std::string>()
                             : j.contains("user_id") ? j["user_id"].get<std::string>()
                                                     : std::to_string(rows.size());
            std::optional<std::string> text;
            for (const char* key : {"output", "prediction", "reference", "text"}) {
                if (j.contains(key)) {
                    text = j[key].get<std::string>();
                    break;
                }
            }
            if (!text) throw ParseError(path.string() + " line " + std::to_string(line_no) + ": no text field");
            rows.emplace_back(std::move(id), std::move(*text));
        } else {
            rows.emplace_back(std::to_string(rows.size()), line);
        }
    }
    return rows;
}

int cmd_eval(const fs::path& predictions, const fs::path& references, const std::string& set_name,
             const std::string& format, std::uint64_t seed) {
    const auto set = metric_set_from_name(set_name);
    const auto refs = read_texts(references);
    std::map<std::string, std::string> preds;
    for (auto& [id, text] : read_texts(predictions)) preds.emplace(id, text);
    std::vector<std::string> ids, pred_texts, ref_texts;
    for (const auto& [id, text] : refs) {
        auto it = preds.find(id);
        if (it == preds.end()) throw ValidationError("no prediction for id \"" + id + "\"");
        ids.push_back(id);
        pred_texts.push_back(it->second);
        ref_texts.push_back(text);
    }
    auto report = evaluate_outputs(ids, pred_texts, ref_texts, set);
    if (format == "tsv") {
        std::cout << "# seed\t" << seed << '\n' << report.to_tsv();
    } else {
        auto j = report.to_json();
        j["seed"] = seed;
        print_json(j);
    }
    return kOk;
}

int cmd_oracle(const std::string& suite, const ConfigFlags& cf, std::size_t users, const fs::path& checkpoint) {
    auto config = cf.resolve();
    const auto seed = config.world.seed;
    SuiteResult result;
    if (suite == "pl") result = run_pl_suite(seed);
    else if (suite == "gradient") result = run_gradient_suite(seed);
    else if (suite == "elbo") result = run_elbo_suite(seed);
    else {
        std::optional<ScorerParams> params;
        if (!checkpoint.empty()) params = load_checkpoint(checkpoint);
        if (params) config.world.embed_width = params->config.d_model;
        result = run_regret_suite(config.world, users, params);
    }
    json j{{"command", "oracle"}, {"suite", result.suite}, {"seed", seed}, {"passed", result.passed}};
    j["details"] = result.details;
    print_json(j);
    return result.passed ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Plackett-Luce profile selection: data, training, ranking and evaluation"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with known utilities");
    ConfigFlags gen_cf;
    std::size_t users = 0;
    fs::path gen_out, gen_emb, gen_table, gen_world;
    gen->add_option("--spec", gen_cf.config_path, "World spec (key = value file)")->check(CLI::ExistingFile);
    gen->add_option("--set", gen_cf.sets, "Override one setting, key=value (repeatable)");
    gen->add_option("--users", users, "Number of users")->required();
    gen->add_option("--out", gen_out, "Dataset JSONL path")->required();
    gen->add_option("--embeddings-out", gen_emb, "Hash-embedding sidecar path");
    gen->add_option("--world-out", gen_world, "World provenance JSON (default <out>.world.json)");
    gen->add_option("--reward-table-out", gen_table, "Scripted log-likelihood table for the mock reward server");
    gen_cf.add_flag(gen, "--seed", "seed", "World seed");
    gen_cf.add_flag(gen, "--records", "records", "Records per user");
    gen_cf.add_flag(gen, "--k", "k", "Profile size");

    // embed
    auto* emb = app.add_subcommand("embed", "Write hash embeddings for a dataset");
    fs::path emb_data, emb_out;
    std::size_t emb_width = 32;
    std::uint64_t emb_seed = 0;
    emb->add_option("--data", emb_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    emb->add_option("--out", emb_out, "Sidecar path")->required();
    emb->add_option("--width", emb_width, "Embedding width")->capture_default_str();
    emb->add_option("--seed", emb_seed, "Hash table seed")->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "Train the scorer by REINFORCE");
    ConfigFlags tr_cf;
    fs::path tr_data, tr_out, tr_world;
    bool quiet = false;
    tr_cf.add_to(tr);
    tr->add_option("--data", tr_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    tr->add_option("--world", tr_world, "World provenance for the synthetic reward (default <data>.world.json)")
        ->check(CLI::ExistingFile);
    tr->add_option("--out", tr_out, "Output directory for checkpoints and the log")->required();
    tr->add_flag("--quiet", quiet, "No per-epoch progress on stderr");
    tr_cf.add_flag(tr, "--reward", "reward", "synthetic | http | table");
    tr_cf.add_flag(tr, "--endpoint", "reward_endpoint", "Reward service base URL");
    tr_cf.add_flag(tr, "--reward-table", "reward_table", "Scripted score table (reward = table)");
    tr_cf.add_flag(tr, "--embeddings", "embedding_path", "Embedding sidecar (implies embedding_mode = file)");
    tr_cf.add_flag(tr, "--seed", "seed", "Training seed");
    tr_cf.add_flag(tr, "--epochs", "epochs", "Epochs");
    tr_cf.add_flag(tr, "--batch-size", "batch_size", "Examples per batch (B)");
    tr_cf.add_flag(tr, "--samples", "samples_per_example", "Profiles sampled per example (M)");
    tr_cf.add_flag(tr, "--lr", "learning_rate", "Adam learning rate");
    tr_cf.add_flag(tr, "--k", "k", "Profile size");
    tr_cf.add_flag(tr, "--d-model", "d_model", "Scorer width");
    tr_cf.add_flag(tr, "--heads", "heads", "Attention heads");
    tr_cf.add_flag(tr, "--layers", "layers", "Set-encoder blocks");
    tr_cf.add_flag(tr, "--parallelism", "reward_parallelism", "Concurrent examples per batch");

    // rank
    auto* rk = app.add_subcommand("rank", "Print the top-K profile of every example as JSONL");
    fs::path rk_ckpt, rk_data, rk_emb;
    std::size_t rk_k = 5;
    std::uint64_t rk_seed = 0;
    rk->add_option("--checkpoint", rk_ckpt, "Scorer checkpoint")->required()->check(CLI::ExistingFile);
    rk->add_option("--data", rk_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    rk->add_option("--k", rk_k, "Profile size")->capture_default_str();
    rk->add_option("--embeddings", rk_emb, "Embedding sidecar; hash embeddings when omitted")->check(CLI::ExistingFile);
    rk->add_option("--seed", rk_seed, "Hash table seed")->capture_default_str();

    // eval
    auto* ev = app.add_subcommand("eval", "Score predictions against references");
    fs::path ev_pred, ev_ref;
    std::string ev_set = "all", ev_format = "json";
    std::uint64_t ev_seed = 0;
    ev->add_option("--predictions", ev_pred, "Predictions (JSONL or plain lines)")->required()->check(CLI::ExistingFile);
    ev->add_option("--references", ev_ref, "References (JSONL or plain lines)")->required()->check(CLI::ExistingFile);
    ev->add_option("--metric-set", ev_set, "all | classification | regression | generation")->capture_default_str();
    ev->add_option("--format", ev_format, "json | tsv")
        ->check(CLI::IsMember({"json", "tsv"}))
        ->capture_default_str();
    ev->add_option("--seed", ev_seed, "Echoed in the report")->capture_default_str();

    // oracle
    auto* orc = app.add_subcommand("oracle", "Run a brute-force verification suite");
    ConfigFlags orc_cf;
    std::string suite;
    std::size_t orc_users = 8;
    fs::path orc_ckpt;
    orc_cf.add_to(orc);
    orc->add_option("--suite", suite, "pl | gradient | elbo | regret")
        ->required()
        ->check(CLI::IsMember({"pl", "gradient", "elbo", "regret"}));
    orc->add_option("--users", orc_users, "Users in the regret world")->capture_default_str();
    orc->add_option("--checkpoint", orc_ckpt, "Scorer for the regret suite")->check(CLI::ExistingFile);
    orc_cf.add_flag(orc, "--seed", "seed", "Suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return cmd_gen_data(gen_cf, users, gen_out, gen_emb, gen_table, gen_world);
        if (*emb) return cmd_embed(emb_data, emb_out, emb_width, emb_seed);
        if (*tr) {
            if (tr_cf.flags.count("embedding_path")) tr_cf.flags["embedding_mode"] = "file";
            return cmd_train(tr_cf, tr_data, tr_world, tr_out, quiet);
        }
        if (*rk) return cmd_rank(rk_ckpt, rk_data, rk_k, rk_emb, rk_seed);
        if (*ev) return cmd_eval(ev_pred, ev_ref, ev_set, ev_format, ev_seed);
        if (*orc) {
            if (suite == "regret") {
                // Small world so the enumeration stays cheap unless the config says otherwise.
                orc_cf.defaults = {{"records", "8"}, {"k", "3"}};
            }
            return cmd_oracle(suite, orc_cf, orc_users, orc_ckpt);
        }
    } catch (const std::exception& e) {
        std::cerr << "purple: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kUsage;
}
