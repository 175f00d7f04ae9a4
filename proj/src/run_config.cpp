#include "purple/run_config.hpp"

#include <charconv>
#include <fstream>

#include "purple/errors.hpp"

namespace purple {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_as(const std::string& key, const std::string& value) {
    T out{};
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (value.empty() || ec != std::errc() || ptr != end)
        throw ParseError("config key \"" + key + "\": cannot parse \"" + value + "\"");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ParseError("config key \"" + key + "\": expected true or false, got \"" + value + "\"");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    auto size = [&] { return parse_as<std::size_t>(key, value); };
    auto real = [&] { return parse_as<double>(key, value); };
    if (key == "batch_size" || key == "B") train.batch_size = size();
    else if (key == "samples_per_example" || key == "M") train.samples_per_example = size();
    else if (key == "learning_rate" || key == "lr") train.learning_rate = real();
    else if (key == "adam_beta1") train.adam_beta1 = real();
    else if (key == "adam_beta2") train.adam_beta2 = real();
    else if (key == "adam_eps") train.adam_eps = real();
    else if (key == "clip_norm") train.clip_norm = real();
    else if (key == "epochs") train.epochs = size();
    else if (key == "reward_parallelism") train.reward_parallelism = size();
    else if (key == "validation_fraction") train.validation_fraction = real();
    else if (key == "seed") train.seed = world.seed = parse_as<std::uint64_t>(key, value);
    else if (key == "k") train.k = world.k = size();
    else if (key == "records") world.records = size();
    else if (key == "topics") world.topics = size();
    else if (key == "gamma") world.gamma = real();
    else if (key == "lambda") world.lambda = real();
    else if (key == "noise") world.noise = real();
    else if (key == "embed_width") world.embed_width = embedding.width = size();
    else if (key == "d_model") scorer.d_model = size();
    else if (key == "heads") scorer.heads = size();
    else if (key == "layers") scorer.layers = size();
    else if (key == "pooling") scorer.pooling = pooling_from_name(value);
    else if (key == "embedding_mode") {
        if (value == "hash") embedding.mode = EmbeddingProvider::Mode::hash;
        else if (value == "file") embedding.mode = EmbeddingProvider::Mode::file;
        else throw ParseError("embedding_mode must be hash or file");
    } else if (key == "embedding_path") embedding.path = value;
    else if (key == "embedding_seed") embedding.table_seed = parse_as<std::uint64_t>(key, value);
    else if (key == "reward") {
        if (value != "synthetic" && value != "http" && value != "table")
            throw ParseError("reward must be synthetic, http or table");
        reward = value;
    } else if (key == "reward_endpoint") reward_endpoint = value;
    else if (key == "reward_table") reward_table = value;
    else if (key == "length_normalize") length_normalize = parse_bool(key, value);
    else throw ParseError("unknown config key \"" + key + "\"");
}

std::map<std::string, std::string> parse_key_values(std::istream& in) {
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto text = trim(line);
        if (text.empty() || text[0] == '#' || text[0] == '[') continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
        auto key = trim(text.substr(0, eq));
        auto value = trim(text.substr(eq + 1));
        if (!value.empty() && value.front() == '"') {
            const auto close = value.find('"', 1);
            if (close == std::string::npos) throw ParseError("config line " + std::to_string(line_no) + ": unterminated string");
            value = value.substr(1, close - 1);
        } else if (const auto hash = value.find('#'); hash != std::string::npos) {
            value = trim(value.substr(0, hash));
        }
        if (key.empty()) throw ParseError("config line " + std::to_string(line_no) + ": empty key");
        out[key] = value;
    }
    return out;
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config " + path.string());
    for (const auto& [k, v] : parse_key_values(in)) config.set(k, v);
}

RunConfig load_run_config(const std::filesystem::path& path) {
    RunConfig c;
    apply_config_file(c, path);
    return c;
}

}  // namespace purple
