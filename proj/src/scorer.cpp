#include "purple/scorer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "purple/errors.hpp"
#include "purple/policy.hpp"

namespace purple {

const char* pooling_name(Pooling p) { return p == Pooling::mean ? "mean" : "max"; }

Pooling pooling_from_name(const std::string& name) {
    if (name == "mean") return Pooling::mean;
    if (name == "max") return Pooling::max;
    throw ValidationError("unknown pooling \"" + name + "\" (expected mean or max)");
}

namespace {

struct Slot {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
    bool bias;
};

void attention_slots(std::vector<Slot>& out, const std::string& prefix, Eigen::Index d) {
    for (const char* proj : {"q", "k", "v", "o"}) {
        out.push_back({prefix + ".w" + proj, d, d, false});
        out.push_back({prefix + ".b" + proj, 1, d, true});
    }
}

std::vector<Slot> layout(const ScorerConfig& c) {
    const auto d = static_cast<Eigen::Index>(c.d_model);
    std::vector<Slot> s;
    attention_slots(s, "cross", d);
    for (std::size_t l = 0; l < c.layers; ++l) {
        const auto p = "enc" + std::to_string(l);
        attention_slots(s, p + ".attn", d);
        s.push_back({p + ".ff1.w", d, 2 * d, false});
        s.push_back({p + ".ff1.b", 1, 2 * d, true});
        s.push_back({p + ".ff2.w", 2 * d, d, false});
        s.push_back({p + ".ff2.b", 1, d, true});
    }
    s.push_back({"head.w1", d, d, false});
    s.push_back({"head.b1", 1, d, true});
    s.push_back({"head.w2", d, 1, false});
    s.push_back({"head.b2", 1, 1, true});
    return s;
}

void validate_config(const ScorerConfig& c) {
    if (c.d_model == 0 || c.heads == 0) throw ValidationError("scorer dimensions must be positive");
    if (c.d_model % c.heads != 0)
        throw ValidationError("d_model=" + std::to_string(c.d_model) + " is not divisible by heads=" +
                              std::to_string(c.heads));
}

double standard_normal(Rng& rng) {
    // Box-Muller on portable uniforms, so initialisation is identical across standard libraries.
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

struct AttentionVars {
    ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
};

AttentionVars attention_at(std::span<const ad::Var> v, std::size_t at) {
    return {v[at], v[at + 1], v[at + 2], v[at + 3], v[at + 4], v[at + 5], v[at + 6], v[at + 7]};
}

ad::Var attend(ad::Tape& t, ad::Var queries, ad::Var keys_values, const AttentionVars& w, std::size_t heads,
               std::size_t d_model) {
    auto q = t.add(t.matmul(queries, w.wq), w.bq);
    auto k = t.add(t.matmul(keys_values, w.wk), w.bk);
    auto v = t.add(t.matmul(keys_values, w.wv), w.bv);
    const auto dh = d_model / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = heads == 1 ? q : t.slice_cols(q, h * dh, dh);
        auto kh = heads == 1 ? k : t.slice_cols(k, h * dh, dh);
        auto vh = heads == 1 ? v : t.slice_cols(v, h * dh, dh);
        auto weights = t.row_softmax(t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt));
        outs.push_back(t.matmul(weights, vh));
    }
    auto joined = heads == 1 ? outs.front() : t.concat_cols(outs);
    return t.add(t.matmul(joined, w.wo), w.bo);
}

void require_embeddings(const Context& context, std::size_t d_model) {
    auto check = [&](const std::optional<Matrix>& m, const std::string& owner) {
        if (!m)
            throw ValidationError(owner + " has no token embeddings; attach them with an embedder "
                                          "(`purple embed`) or an embedding sidecar first");
        if (m->rows() < 1) throw ValidationError(owner + " has an empty token embedding matrix");
        if (static_cast<std::size_t>(m->cols()) != d_model)
            throw ShapeError(owner + " embedding width " + std::to_string(m->cols()) + " does not match d_model " +
                             std::to_string(d_model));
    };
    if (context.records.empty()) throw ValidationError("context has no records");
    check(context.query_embeddings, "query");
    for (const auto& r : context.records) check(r.token_embeddings, "record \"" + r.id + "\"");
}

}  // namespace

std::size_t ScorerParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += static_cast<std::size_t>(v.size());
    return n;
}

const Matrix& ScorerParams::at(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return values[i];
    throw ValidationError("no scorer parameter named \"" + name + "\"");
}

Matrix& ScorerParams::at(const std::string& name) {
    return const_cast<Matrix&>(static_cast<const ScorerParams&>(*this).at(name));
}

Gradients zeros_like(const ScorerParams& params) {
    Gradients g;
    g.reserve(params.size());
    for (const auto& v : params.values) g.push_back(Matrix::Zero(v.rows(), v.cols()));
    return g;
}

ScorerParams init_params(std::uint64_t seed, const ScorerConfig& config) {
    validate_config(config);
    ScorerParams p;
    p.config = config;
    Rng rng(seed);
    for (const auto& slot : layout(config)) {
        p.names.push_back(slot.name);
        if (slot.bias) {
            p.values.push_back(Matrix::Zero(slot.rows, slot.cols));
            continue;
        }
        const double scale = 1.0 / std::sqrt(static_cast<double>(slot.rows));
        Matrix m(slot.rows, slot.cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng) * scale;
        p.values.push_back(std::move(m));
    }
    round_to_float(p);
    return p;
}

ScorerParams init_params(std::uint64_t seed, std::size_t d_model, std::size_t heads, std::size_t layers) {
    return init_params(seed, ScorerConfig{d_model, heads, layers, Pooling::mean});
}

void round_to_float(ScorerParams& params) {
    for (auto& v : params.values)
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<double>(static_cast<float>(v.data()[i]));
}

Matrix cross_attend(const Matrix& record_tokens, const Matrix& query_tokens, const ScorerParams& params) {
    const auto d = params.config.d_model;
    if (static_cast<std::size_t>(record_tokens.cols()) != d || static_cast<std::size_t>(query_tokens.cols()) != d)
        throw ShapeError("cross_attend: record tokens (" + std::to_string(record_tokens.rows()) + "x" +
                         std::to_string(record_tokens.cols()) + ") and query tokens (" +
                         std::to_string(query_tokens.rows()) + "x" + std::to_string(query_tokens.cols()) +
                         ") must both have width d_model=" + std::to_string(d));
    ad::Tape t;
    std::vector<ad::Var> w;
    for (std::size_t i = 0; i < 8; ++i) w.push_back(t.constant(params.values[i]));
    auto out = attend(t, t.constant(record_tokens), t.constant(query_tokens), attention_at(w, 0),
                      params.config.heads, d);
    return t.value(out);
}

ad::Var build_scores(ad::Tape& t, std::span<const ad::Var> w, const ScorerConfig& config, const Context& context) {
    validate_config(config);
    require_embeddings(context, config.d_model);
    const auto d = config.d_model;
    auto query = t.constant(*context.query_embeddings);
    const auto cross = attention_at(w, 0);

    std::vector<ad::Var> pooled;
    pooled.reserve(context.records.size());
    for (const auto& r : context.records) {
        auto tokens = t.constant(*r.token_embeddings);
        auto fused = t.add(tokens, attend(t, tokens, query, cross, config.heads, d));
        pooled.push_back(config.pooling == Pooling::mean ? t.mean_rows(fused) : t.max_rows(fused));
    }
    auto x = t.concat_rows(pooled);

    std::size_t at = 8;
    for (std::size_t l = 0; l < config.layers; ++l) {
        x = t.add(x, attend(t, x, x, attention_at(w, at), config.heads, d));
        at += 8;
        auto hidden = t.relu(t.add(t.matmul(x, w[at]), w[at + 1]));
        x = t.add(x, t.add(t.matmul(hidden, w[at + 2]), w[at + 3]));
        at += 4;
    }
    auto head = t.relu(t.add(t.matmul(x, w[at]), w[at + 1]));
    return t.sigmoid(t.add(t.matmul(head, w[at + 2]), w[at + 3]));
}

ScorerGraph build_scorer(ad::Tape& tape, const ScorerParams& params, const Context& context) {
    ScorerGraph g;
    g.params.reserve(params.size());
    for (const auto& v : params.values) g.params.push_back(tape.leaf(v));
    g.scores = build_scores(tape, g.params, params.config, context);
    return g;
}

PropensityVector encode_records(const Context& context, const ScorerParams& params) {
    ad::Tape t;
    std::vector<ad::Var> w;
    w.reserve(params.size());
    for (const auto& v : params.values) w.push_back(t.constant(v));
    const auto& s = t.value(build_scores(t, w, params.config, context));
    return PropensityVector(s.data(), s.data() + s.size());
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

std::string encode_checkpoint(const ScorerParams& params) {
    nlohmann::ordered_json header;
    header["d_model"] = params.config.d_model;
    header["heads"] = params.config.heads;
    header["layers"] = params.config.layers;
    header["pooling"] = pooling_name(params.config.pooling);
    header["param_order"] = params.names;
    auto shapes = nlohmann::ordered_json::array();
    for (const auto& v : params.values) shapes.push_back({v.rows(), v.cols()});
    header["shapes"] = shapes;
    const auto text = header.dump();

    std::string out = "PRPL";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out.reserve(out.size() + 4 * params.scalar_count());
    for (const auto& v : params.values) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            // Narrowing; parameters kept on the float grid (round_to_float) survive exactly.
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v.data()[i])));
        }
    }
    return out;
}

ScorerParams decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 12 || bytes.compare(0, 4, "PRPL") != 0) throw ParseError("not a PRPL checkpoint");
    const auto version = get_u32(bytes, 4);
    if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
    const auto header_len = get_u32(bytes, 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) throw ParseError("truncated checkpoint header");
    nlohmann::json header;
    ScorerConfig config;
    std::vector<std::string> order;
    try {
        header = nlohmann::json::parse(bytes.substr(12, header_len));
        config.d_model = header.at("d_model").get<std::size_t>();
        config.heads = header.at("heads").get<std::size_t>();
        config.layers = header.at("layers").get<std::size_t>();
        config.pooling = pooling_from_name(header.value("pooling", std::string("mean")));
        order = header.at("param_order").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad checkpoint header: ") + e.what());
    }
    validate_config(config);
    const auto slots = layout(config);
    if (order.size() != slots.size()) throw ParseError("checkpoint parameter list does not match its dimensions");
    ScorerParams p;
    p.config = config;
    std::size_t at = 12 + header_len;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (order[i] != slots[i].name)
            throw ParseError("checkpoint parameter " + std::to_string(i) + " is \"" + order[i] + "\", expected \"" +
                             slots[i].name + "\"");
        Matrix m(slots[i].rows, slots[i].cols);
        const auto need = 4 * static_cast<std::size_t>(m.size());
        if (bytes.size() < at + need) throw ParseError("truncated checkpoint payload");
        for (Eigen::Index j = 0; j < m.size(); ++j, at += 4)
            m.data()[j] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, at)));
        p.names.push_back(order[i]);
        p.values.push_back(std::move(m));
    }
    if (at != bytes.size()) throw ParseError("trailing bytes after checkpoint payload");
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const ScorerParams& params) {
    write_file_atomically(path, encode_checkpoint(params));
}

ScorerParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace purple
