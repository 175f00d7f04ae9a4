#include "purple/environment.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "purple/errors.hpp"
#include "purple/evalkit.hpp"
#include "purple/policy.hpp"

namespace purple {

namespace {

constexpr std::array<const char*, 12> kTopics = {"cooking", "travel",  "music",  "fitness", "finance", "gardening",
                                                 "movies",  "science", "poetry", "history", "gaming",  "fashion"};
constexpr std::array<const char*, 6> kFillers = {"notes", "thoughts", "ideas", "plans", "memories", "tips"};

// Coverage of a record's main topic is one of three levels, named in its text.
struct QualityLevel {
    const char* word;
    double coverage;
};
constexpr std::array<QualityLevel, 3> kQuality = {{{"brief", 0.6}, {"solid", 0.8}, {"thorough", 1.0}}};
constexpr double kSecondaryCoverage = 0.25;

enum class Stance { neutral, enthusiastic, skeptical };

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += kGolden);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Rng user_rng(std::uint64_t seed, std::size_t user) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(user), 0x9e11u};
    return Rng(seq);
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1);
        std::swap(v[i - 1], v[j]);
    }
}

std::string repeat_word(const std::string& word, std::size_t times) {
    std::string out;
    for (std::size_t i = 0; i < times; ++i) {
        if (!out.empty()) out += ' ';
        out += word;
    }
    return out;
}

struct DraftRecord {
    std::vector<double> coverage;
    Stance stance = Stance::neutral;
    std::string input;
    std::string output;
};

}  // namespace

void WorldSpec::validate() const {
    if (topics < 2) throw ValidationError("world spec needs at least 2 topics");
    if (topics > kTopics.size()) throw ValidationError("world spec supports at most " + std::to_string(kTopics.size()) + " topics");
    if (k < 1) throw ValidationError("world spec k must be >= 1");
    if (records < k) throw ValidationError("world spec needs records >= k");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in (0, 1]");
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
    if (embed_width < 8) throw ValidationError("embed_width must be >= 8");
    if (!(noise >= 0.0)) throw ValidationError("noise must be >= 0");
}

nlohmann::ordered_json WorldSpec::to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["records"] = records;
    j["topics"] = topics;
    j["k"] = k;
    j["gamma"] = gamma;
    j["lambda"] = lambda;
    j["embed_width"] = embed_width;
    j["noise"] = noise;
    return j;
}

WorldSpec WorldSpec::from_json(const nlohmann::json& j) {
    WorldSpec s;
    try {
        s.seed = j.value("seed", s.seed);
        s.records = j.value("records", s.records);
        s.topics = j.value("topics", s.topics);
        s.k = j.value("k", s.k);
        s.gamma = j.value("gamma", s.gamma);
        s.lambda = j.value("lambda", s.lambda);
        s.embed_width = j.value("embed_width", s.embed_width);
        s.noise = j.value("noise", s.noise);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad world spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::map<std::string, SyntheticWorld> GeneratedData::worlds_by_user() const {
    std::map<std::string, SyntheticWorld> out;
    for (std::size_t i = 0; i < examples.size(); ++i) out.emplace(examples[i].user_id, worlds[i]);
    return out;
}

GeneratedData generate_dataset(const WorldSpec& spec, std::size_t users) {
    spec.validate();
    if (users == 0) throw ValidationError("generate_dataset needs at least one user");
    const auto n = spec.records;
    const auto d = spec.topics;
    GeneratedData data;
    data.header["world_spec"] = spec.to_json();
    data.header["users"] = users;

    for (std::size_t u = 0; u < users; ++u) {
        Rng rng = user_rng(spec.seed, u);
        std::vector<std::size_t> priority(d);
        for (std::size_t t = 0; t < d; ++t) priority[t] = t;
        shuffle(priority, rng);

        std::vector<double> weights(d, 0.0);
        weights[priority[0]] = 1.0;
        weights[priority[1]] = 0.6 + 0.3 * uniform01(rng);
        if (d > 2) weights[priority[2]] = 0.35 + 0.2 * uniform01(rng);
        for (std::size_t t = 3; t < d; ++t) weights[priority[t]] = 0.15 * uniform01(rng);

        // Favourite-topic records: at least k of them, so a relevance ranker can fill a profile with them.
        auto n_primary = std::max(spec.k, static_cast<std::size_t>(std::ceil(0.4 * static_cast<double>(n))));
        n_primary = std::min(n_primary, n > spec.k ? n - 1 : n);

        std::vector<DraftRecord> drafts;
        drafts.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const bool primary = i < n_primary;
            const auto topic = primary ? priority[0] : priority[1 + (i - n_primary) % (d - 1)];
            DraftRecord r;
            r.coverage.assign(d, 0.0);
            const auto level = static_cast<std::size_t>(uniform01(rng) * kQuality.size()) % kQuality.size();
            r.coverage[topic] = kQuality[level].coverage;

            std::optional<std::size_t> secondary;
            const bool has_secondary = uniform01(rng) < 0.5;
            if (primary) {
                // Redundant records only ever touch the low-priority topics.
                if (d > 3 && has_secondary)
                    secondary = priority[3 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(d - 3)) % (d - 3)];
            } else if (has_secondary) {
                auto s = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(d - 1)) % (d - 1);
                if (s >= topic) ++s;
                secondary = s;
            }
            if (secondary) r.coverage[*secondary] = std::max(r.coverage[*secondary], kSecondaryCoverage);

            const double sv = uniform01(rng);
            r.stance = sv < 0.5 ? Stance::neutral : (sv < 0.75 ? Stance::enthusiastic : Stance::skeptical);

            const auto filler = kFillers[static_cast<std::size_t>(uniform01(rng) * kFillers.size()) % kFillers.size()];
            r.input = std::string(kQuality[level].word) + " " + filler + " on " + kTopics[topic] + " " + kTopics[topic];
            if (secondary) r.input += " with some " + std::string(kTopics[*secondary]);
            switch (r.stance) {
                case Stance::neutral: r.output = "plain summary"; break;
                case Stance::enthusiastic: r.output = "enthusiastic praise"; break;
                case Stance::skeptical: r.output = "skeptical critique"; break;
            }
            drafts.push_back(std::move(r));
        }
        shuffle(drafts, rng);

        DatasetExample ex;
        ex.user_id = "u" + std::to_string(u);
        std::string query = "help me with";
        for (auto t : priority) {
            const auto reps = static_cast<std::size_t>(std::lround(3.0 * weights[t]));
            if (reps > 0) query += " " + repeat_word(kTopics[t], reps);
        }
        ex.context.query_text = query;
        ex.context.reference = "a personalized answer about " + std::string(kTopics[priority[0]]) + " " +
                               kTopics[priority[1]] + (d > 2 ? std::string(" ") + kTopics[priority[2]] : std::string());

        SyntheticWorld world;
        world.weights = weights;
        world.gamma = spec.gamma;
        world.lambda = spec.lambda;
        world.conflict.assign(n, std::vector<std::uint8_t>(n, 0));
        for (std::size_t i = 0; i < n; ++i) {
            Record rec;
            rec.id = ex.user_id + "_r" + std::to_string(i);
            rec.input_text = drafts[i].input;
            rec.output_text = drafts[i].output;
            ex.context.records.push_back(std::move(rec));
            world.coverage.push_back(drafts[i].coverage);
            for (std::size_t j = 0; j < n; ++j) {
                const auto a = drafts[i].stance, b = drafts[j].stance;
                if ((a == Stance::enthusiastic && b == Stance::skeptical) ||
                    (a == Stance::skeptical && b == Stance::enthusiastic))
                    world.conflict[i][j] = 1;
            }
        }
        world.validate();
        data.examples.push_back(std::move(ex));
        data.worlds.push_back(std::move(world));
    }
    return data;
}

GeneratedData regenerate_from_header(const nlohmann::json& header) {
    if (!header.contains("world_spec") || !header.contains("users"))
        throw ValidationError("dataset header lacks world_spec/users; synthetic rewards need a generated dataset");
    return generate_dataset(WorldSpec::from_json(header["world_spec"]), header["users"].get<std::size_t>());
}

// ---------------------------------------------------------------------------

std::vector<std::string> embedding_tokens(std::string_view text) { return metric_tokens(text); }

HashEmbedding hash_embed(std::string_view text, std::size_t width, std::uint64_t table_seed) {
    if (width < 8) throw ValidationError("hash_embed needs width >= 8");
    const auto tokens = embedding_tokens(text);
    HashEmbedding out;
    if (tokens.empty()) {
        out.tokens = Matrix::Zero(1, static_cast<Eigen::Index>(width));
        out.empty_text = true;
        return out;
    }
    out.tokens.resize(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(width));
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        std::uint64_t state = fnv1a64(tokens[t]) ^ (table_seed * kGolden);
        auto row = out.tokens.row(static_cast<Eigen::Index>(t));
        for (std::size_t c = 0; c < width; ++c)
            row(static_cast<Eigen::Index>(c)) = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
        row /= row.norm();
    }
    return out;
}

void attach_hash_embeddings(std::vector<DatasetExample>& examples, std::size_t width, std::uint64_t table_seed) {
    for (auto& ex : examples) {
        ex.context.query_embeddings = hash_embed(ex.context.query_text, width, table_seed).tokens;
        for (auto& r : ex.context.records)
            r.token_embeddings = hash_embed(r.input_text + " " + r.output_text, width, table_seed).tokens;
    }
}

std::string query_embedding_key(const std::string& user_id) { return "q:" + user_id; }

namespace {

nlohmann::json matrix_json(const Matrix& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void write_embeddings(std::ostream& out, const std::vector<DatasetExample>& examples) {
    auto line = [&](const std::string& id, const std::optional<Matrix>& m) {
        if (!m) throw ValidationError("cannot write embeddings for \"" + id + "\": none attached");
        nlohmann::ordered_json j;
        j["id"] = id;
        j["vectors"] = matrix_json(*m);
        out << j.dump() << '\n';
    };
    for (const auto& ex : examples) {
        line(query_embedding_key(ex.user_id), ex.context.query_embeddings);
        for (const auto& r : ex.context.records) line(r.id, r.token_embeddings);
    }
}

void save_embeddings(const std::filesystem::path& path, const std::vector<DatasetExample>& examples) {
    std::ostringstream os;
    write_embeddings(os, examples);
    write_file_atomically(path, os.str());
}

void load_embeddings(const std::filesystem::path& path, std::vector<DatasetExample>& examples,
                     std::size_t expected_width) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open embedding file " + path.string());
    std::unordered_map<std::string, Matrix> table;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = expected_width;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto id = j.at("id").get<std::string>();
            const auto rows = j.at("vectors").get<std::vector<std::vector<double>>>();
            if (rows.empty()) throw ShapeError("embedding \"" + id + "\" has no rows");
            const auto cols = rows.front().size();
            if (width == 0) width = cols;
            Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (rows[r].size() != width)
                    throw ShapeError("embedding \"" + id + "\" has width " + std::to_string(rows[r].size()) +
                                     ", expected " + std::to_string(width));
                for (std::size_t c = 0; c < cols; ++c)
                    m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
            }
            table[id] = std::move(m);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("embedding file line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    std::vector<std::string> missing;
    for (const auto& ex : examples) {
        if (!table.count(query_embedding_key(ex.user_id))) missing.push_back(query_embedding_key(ex.user_id));
        for (const auto& r : ex.context.records)
            if (!table.count(r.id)) missing.push_back(r.id);
    }
    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", \"" : "\"") + missing[i] + "\"";
        if (missing.size() > 20) list += ", ...";
        throw ValidationError(std::to_string(missing.size()) + " ids missing from " + path.string() + ": " + list);
    }
    for (auto& ex : examples) {
        ex.context.query_embeddings = table.at(query_embedding_key(ex.user_id));
        for (auto& r : ex.context.records) r.token_embeddings = table.at(r.id);
    }
}

void EmbeddingProvider::attach(std::vector<DatasetExample>& examples) const {
    if (mode == Mode::hash)
        attach_hash_embeddings(examples, width, table_seed);
    else
        load_embeddings(path, examples, width);
}

JitteredOracle::JitteredOracle(std::shared_ptr<const RewardOracle> base, double noise, std::uint64_t seed)
    : base_(std::move(base)), noise_(noise), seed_(seed) {
    if (!(noise_ >= 0.0)) throw ValidationError("jitter noise must be >= 0");
}

double JitteredOracle::reward(const DatasetExample& example, const Profile& profile) const {
    const double base = base_->reward(example, profile);
    if (noise_ == 0.0) return base;
    std::uint64_t state = fnv1a64(example.user_id) ^ (seed_ * kGolden);
    for (auto i : profile.indices) state ^= splitmix64(state) + i;
    const double u1 = 1.0 - static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    return base + noise_ * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

RewardScript script_from_worlds(const std::vector<DatasetExample>& examples, const std::vector<SyntheticWorld>& worlds,
                                std::size_t k, const PromptTemplate& prompt_template) {
    if (examples.size() != worlds.size()) throw ValidationError("script_from_worlds: examples and worlds differ in count");
    RewardScript script;
    for (std::size_t e = 0; e < examples.size(); ++e) {
        const auto& ex = examples[e];
        const auto best = optimal_profile(worlds[e], k).second;
        const auto tokens = scoring_tokens(ex.context.reference).size();
        if (tokens == 0) throw ValidationError("example \"" + ex.user_id + "\" has an empty reference");
        for_each_profile(ex.context.size(), k, [&](const Profile& p) {
            const double per_token = (synthetic_utility(worlds[e], p) - best - 1.0) / static_cast<double>(tokens);
            script.add(serialize_profile(p, ex.context, prompt_template), ex.context.reference,
                       std::vector<double>(tokens, per_token));
        });
    }
    return script;
}

}  // namespace purple
