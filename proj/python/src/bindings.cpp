#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "purple/environment.hpp"
#include "purple/errors.hpp"
#include "purple/evalkit.hpp"
#include "purple/oracle_suites.hpp"
#include "purple/policy.hpp"
#include "purple/run_config.hpp"
#include "purple/scorer.hpp"
#include "purple/trainer.hpp"

namespace py = pybind11;
using namespace purple;

namespace {

Profile to_profile(const std::vector<std::size_t>& indices) { return Profile{indices}; }

DatasetExample example_with_embeddings(const std::string& json_line, std::size_t width, std::uint64_t table_seed) {
    std::vector<DatasetExample> one{example_from_json(nlohmann::json::parse(json_line))};
    attach_hash_embeddings(one, width, table_seed);
    return one.front();
}

std::string suite_json(const SuiteResult& r) {
    nlohmann::ordered_json j;
    j["suite"] = r.suite;
    j["passed"] = r.passed;
    j["details"] = r.details;
    return j.dump();
}

}  // namespace

PYBIND11_MODULE(_purple, m) {
    m.doc() = "Plackett-Luce profile selection, REINFORCE training and evaluation";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<GuardError>(m, "GuardError", base.ptr());
    py::register_exception<TransportError>(m, "TransportError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<AlignmentError>(m, "AlignmentError", base.ptr());

    // Plackett-Luce over explicit scores.
    m.def("profile_prob", [](const std::vector<double>& s, std::size_t k, const std::vector<std::size_t>& p) {
        return profile_prob(PLDistribution(s, k), to_profile(p));
    }, py::arg("scores"), py::arg("k"), py::arg("profile"));
    m.def("profile_logprob", [](const std::vector<double>& s, std::size_t k, const std::vector<std::size_t>& p) {
        return profile_logprob(PLDistribution(s, k), to_profile(p));
    }, py::arg("scores"), py::arg("k"), py::arg("profile"));
    m.def("sample_profiles", [](const std::vector<double>& s, std::size_t k, std::size_t count, std::uint64_t seed) {
        Rng rng(seed);
        std::vector<std::vector<std::size_t>> out;
        for (const auto& p : sample_profiles(PLDistribution(s, k), count, rng)) out.push_back(p.indices);
        return out;
    }, py::arg("scores"), py::arg("k"), py::arg("count"), py::arg("seed") = 0);
    m.def("top_k_profile", [](const std::vector<double>& s, std::size_t k) {
        return top_k_profile(PLDistribution(s, k)).indices;
    }, py::arg("scores"), py::arg("k"));
    m.def("enumerate_profiles", [](std::size_t n, std::size_t k) {
        std::vector<std::vector<std::size_t>> out;
        for (const auto& p : enumerate_profiles(n, k)) out.push_back(p.indices);
        return out;
    }, py::arg("n"), py::arg("k"));
    m.def("permutation_count", &permutation_count, py::arg("n"), py::arg("k"));
    m.def("normalize_rewards", [](const std::vector<double>& r) { return normalize_rewards(r); }, py::arg("rewards"));

    // Embeddings and synthetic data.
    m.def("hash_embed", [](const std::string& text, std::size_t width, std::uint64_t seed) {
        return hash_embed(text, width, seed).tokens;
    }, py::arg("text"), py::arg("width"), py::arg("table_seed") = 0);

    py::class_<WorldSpec>(m, "WorldSpec")
        .def(py::init<>())
        .def_readwrite("seed", &WorldSpec::seed)
        .def_readwrite("records", &WorldSpec::records)
        .def_readwrite("topics", &WorldSpec::topics)
        .def_readwrite("k", &WorldSpec::k)
        .def_readwrite("gamma", &WorldSpec::gamma)
        .def_readwrite("lambda_", &WorldSpec::lambda)
        .def_readwrite("embed_width", &WorldSpec::embed_width)
        .def_readwrite("noise", &WorldSpec::noise)
        .def("validate", &WorldSpec::validate)
        .def("to_json", [](const WorldSpec& s) { return s.to_json().dump(); });

    m.def("generate_dataset", [](const WorldSpec& spec, std::size_t users) {
        const auto data = generate_dataset(spec, users);
        std::vector<std::string> lines;
        for (const auto& ex : data.examples) lines.push_back(example_to_json(ex).dump());
        return py::make_tuple(lines, data.header.dump());
    }, py::arg("spec"), py::arg("users"), "Returns (dataset JSONL lines, header JSON).");
    m.def("optimal_utilities", [](const WorldSpec& spec, std::size_t users) {
        const auto data = generate_dataset(spec, users);
        std::vector<double> out;
        for (const auto& w : data.worlds) out.push_back(optimal_profile(w, spec.k).second);
        return out;
    }, py::arg("spec"), py::arg("users"));
    m.def("synthetic_utility", [](const WorldSpec& spec, std::size_t users, std::size_t user,
                                  const std::vector<std::size_t>& profile) {
        const auto data = generate_dataset(spec, users);
        if (user >= data.worlds.size()) throw ValidationError("user index out of range");
        return synthetic_utility(data.worlds[user], to_profile(profile));
    }, py::arg("spec"), py::arg("users"), py::arg("user"), py::arg("profile"));

    // Scorer.
    py::class_<ScorerParams>(m, "Scorer")
        .def(py::init([](std::uint64_t seed, std::size_t d_model, std::size_t heads, std::size_t layers,
                         const std::string& pooling) {
            return init_params(seed, ScorerConfig{d_model, heads, layers, pooling_from_name(pooling)});
        }), py::arg("seed") = 0, py::arg("d_model") = 32, py::arg("heads") = 2, py::arg("layers") = 2,
            py::arg("pooling") = "mean")
        .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
        .def("save", [](const ScorerParams& p, const std::filesystem::path& path) { save_checkpoint(path, p); },
             py::arg("path"))
        .def_property_readonly("d_model", [](const ScorerParams& p) { return p.config.d_model; })
        .def_property_readonly("names", [](const ScorerParams& p) { return p.names; })
        .def("parameter", [](const ScorerParams& p, const std::string& name) { return p.at(name); }, py::arg("name"))
        .def("score", [](const ScorerParams& p, const std::string& example_json, std::uint64_t table_seed) {
            return encode_records(example_with_embeddings(example_json, p.config.d_model, table_seed).context, p);
        }, py::arg("example_json"), py::arg("table_seed") = 0,
           "Propensities for every record of one dataset line, using hash embeddings.")
        .def("rank", [](const ScorerParams& p, const std::string& example_json, std::size_t k, std::uint64_t table_seed) {
            const auto ex = example_with_embeddings(example_json, p.config.d_model, table_seed);
            std::vector<std::string> ids;
            for (auto i : top_k_profile(PLDistribution(encode_records(ex.context, p), k)).indices)
                ids.push_back(ex.context.records[i].id);
            return ids;
        }, py::arg("example_json"), py::arg("k"), py::arg("table_seed") = 0);

    // Training on a generated synthetic world.
    m.def("train_synthetic", [](const std::map<std::string, std::string>& settings, std::size_t users,
                                const std::filesystem::path& out_dir) {
        RunConfig cfg;
        for (const auto& [k, v] : settings) cfg.set(k, v);
        cfg.world.k = cfg.train.k;
        auto data = generate_dataset(cfg.world, users);
        attach_hash_embeddings(data.examples, cfg.scorer.d_model, cfg.embedding.table_seed);
        SyntheticOracle oracle(data.worlds_by_user());
        auto [train_set, val_set] = split_dataset(data.examples, cfg.train.validation_fraction);
        TrainOptions opts;
        opts.out_dir = out_dir;
        TrainResult r;
        {
            py::gil_scoped_release release;
            r = train(train_set, val_set, cfg.train, oracle, init_params(cfg.train.seed, cfg.scorer), opts);
        }
        py::list log;
        for (const auto& e : r.log) log.append(e.to_json(cfg.train).dump());
        py::dict out;
        out["best_val_reward"] = r.best_val_reward;
        out["scorer"] = r.best_params;
        out["log"] = log;
        return out;
    }, py::arg("settings") = std::map<std::string, std::string>{}, py::arg("users") = 32,
       py::arg("out_dir") = std::filesystem::path{});

    // Metrics and baselines.
    m.def("rouge1", [](const std::string& c, const std::string& r) { return rouge1(c, r); });
    m.def("rougeL", [](const std::string& c, const std::string& r) { return rougeL(c, r); });
    m.def("bm25_scores", [](const std::string& q, const std::vector<std::string>& docs, double k1, double b) {
        return bm25_scores(q, docs, k1, b);
    }, py::arg("query"), py::arg("docs"), py::arg("k1") = 1.2, py::arg("b") = 0.75);
    m.def("evaluate_outputs", [](const std::vector<std::string>& ids, const std::vector<std::string>& preds,
                                 const std::vector<std::string>& refs, const std::string& metric_set) {
        return evaluate_outputs(ids, preds, refs, metric_set_from_name(metric_set)).to_json().dump();
    }, py::arg("ids"), py::arg("predictions"), py::arg("references"), py::arg("metric_set") = "all");

    m.def("run_oracle_suite", [](const std::string& name, std::uint64_t seed) {
        SuiteResult r;
        {
            py::gil_scoped_release release;
            if (name == "pl") r = run_pl_suite(seed);
            else if (name == "gradient") r = run_gradient_suite(seed);
            else if (name == "elbo") r = run_elbo_suite(seed);
            else throw ValidationError("unknown suite \"" + name + "\" (expected pl, gradient or elbo)");
        }
        return suite_json(r);
    }, py::arg("name"), py::arg("seed") = 0);
}
