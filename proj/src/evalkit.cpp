#include "purple/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "purple/errors.hpp"

namespace purple {

std::vector<std::string> metric_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace {

double f1(double overlap, std::size_t cand, std::size_t ref) {
    if (cand == 0 || ref == 0 || overlap == 0.0) return 0.0;
    const double p = overlap / static_cast<double>(cand);
    const double r = overlap / static_cast<double>(ref);
    return 2.0 * p * r / (p + r);
}

}  // namespace

double rouge1(std::string_view candidate, std::string_view reference) {
    const auto c = metric_tokens(candidate);
    const auto r = metric_tokens(reference);
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& t : r) ++counts[t];
    std::size_t overlap = 0;
    for (const auto& t : c) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    return f1(static_cast<double>(overlap), c.size(), r.size());
}

double rougeL(std::string_view candidate, std::string_view reference) {
    const auto c = metric_tokens(candidate);
    const auto r = metric_tokens(reference);
    std::vector<std::size_t> prev(r.size() + 1, 0), cur(r.size() + 1, 0);
    for (std::size_t i = 1; i <= c.size(); ++i) {
        for (std::size_t j = 1; j <= r.size(); ++j)
            cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return f1(static_cast<double>(prev[r.size()]), c.size(), r.size());
}

ClassificationScores classification_metrics(std::span<const std::string> preds, std::span<const std::string> labels) {
    if (preds.size() != labels.size())
        throw ValidationError("classification_metrics: " + std::to_string(preds.size()) + " predictions vs " +
                              std::to_string(labels.size()) + " labels");
    ClassificationScores s;
    if (labels.empty()) return s;
    std::map<std::string, std::array<std::size_t, 3>> per_class;  // tp, fp, fn
    std::size_t correct = 0;
    for (const auto& l : labels) per_class.try_emplace(l, std::array<std::size_t, 3>{0, 0, 0});
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == labels[i]) {
            ++correct;
            ++per_class[labels[i]][0];
        } else {
            ++per_class[labels[i]][2];
            if (auto it = per_class.find(preds[i]); it != per_class.end()) ++it->second[1];
        }
    }
    s.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    double total = 0.0;
    for (const auto& [cls, c] : per_class) {
        const double tp = static_cast<double>(c[0]);
        const double denom = 2.0 * tp + static_cast<double>(c[1] + c[2]);
        total += denom > 0.0 ? 2.0 * tp / denom : 0.0;
    }
    s.macro_f1 = total / static_cast<double>(per_class.size());
    return s;
}

RegressionScores regression_metrics(std::span<const double> preds, std::span<const double> targets) {
    if (preds.size() != targets.size())
        throw ValidationError("regression_metrics: " + std::to_string(preds.size()) + " predictions vs " +
                              std::to_string(targets.size()) + " targets");
    RegressionScores s;
    if (preds.empty()) return s;
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = preds[i] - targets[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const auto n = static_cast<double>(preds.size());
    s.mae = abs_sum / n;
    s.rmse = std::sqrt(sq_sum / n);
    return s;
}

namespace {

std::optional<double> try_number(const std::string& text) {
    const auto b = text.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return std::nullopt;
    const auto e = text.find_last_not_of(" \t\r\n");
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data() + b, text.data() + e + 1, v);
    if (ec != std::errc() || ptr != text.data() + e + 1 || !std::isfinite(v)) return std::nullopt;
    return v;
}

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

MetricSet metric_set_from_name(const std::string& name) {
    if (name == "all") return MetricSet::all;
    if (name == "classification") return MetricSet::classification;
    if (name == "regression") return MetricSet::regression;
    if (name == "generation") return MetricSet::generation;
    throw ValidationError("unknown metric set \"" + name + "\" (expected all, classification, regression, generation)");
}

MetricReport evaluate_outputs(std::span<const std::string> ids, std::span<const std::string> predictions,
                              std::span<const std::string> references, MetricSet set) {
    if (predictions.size() != references.size() || ids.size() != predictions.size())
        throw ValidationError("evaluate_outputs: ids, predictions and references differ in length");
    MetricReport report;
    std::vector<double> pn, rn;
    bool numeric = true;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        ExampleScores ex;
        ex.id = ids[i];
        ex.accuracy = predictions[i] == references[i] ? 1.0 : 0.0;
        ex.rouge1 = rouge1(predictions[i], references[i]);
        ex.rougeL = rougeL(predictions[i], references[i]);
        auto p = try_number(predictions[i]);
        auto r = try_number(references[i]);
        if (p && r) {
            ex.abs_error = std::abs(*p - *r);
            pn.push_back(*p);
            rn.push_back(*r);
        } else {
            numeric = false;
        }
        report.examples.push_back(std::move(ex));
    }
    if (set == MetricSet::regression && !numeric) throw ParseError("regression metrics need numeric predictions and references");
    const auto n = static_cast<double>(std::max<std::size_t>(1, predictions.size()));
    if (set == MetricSet::all || set == MetricSet::classification) {
        auto c = classification_metrics(predictions, references);
        report.accuracy = c.accuracy;
        report.macro_f1 = c.macro_f1;
    }
    if ((set == MetricSet::all || set == MetricSet::regression) && numeric && !pn.empty()) {
        auto r = regression_metrics(pn, rn);
        report.mae = r.mae;
        report.rmse = r.rmse;
    }
    if (set == MetricSet::all || set == MetricSet::generation) {
        double r1 = 0.0, rl = 0.0;
        for (const auto& e : report.examples) {
            r1 += e.rouge1;
            rl += e.rougeL;
        }
        report.rouge1 = r1 / n;
        report.rougeL = rl / n;
    }
    return report;
}

nlohmann::ordered_json MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["accuracy"] = optional_json(accuracy);
    j["macro_f1"] = optional_json(macro_f1);
    j["mae"] = optional_json(mae);
    j["rmse"] = optional_json(rmse);
    j["rouge1"] = optional_json(rouge1);
    j["rougeL"] = optional_json(rougeL);
    auto rows = nlohmann::ordered_json::array();
    for (const auto& e : examples) {
        nlohmann::ordered_json r;
        r["id"] = e.id;
        r["accuracy"] = e.accuracy;
        r["rouge1"] = e.rouge1;
        r["rougeL"] = e.rougeL;
        r["abs_error"] = optional_json(e.abs_error);
        rows.push_back(std::move(r));
    }
    j["examples"] = std::move(rows);
    return j;
}

std::string MetricReport::to_tsv() const {
    std::ostringstream os;
    os.precision(17);
    auto line = [&](const char* name, const std::optional<double>& v) {
        if (v) os << name << '\t' << *v << '\n';
    };
    os << "metric\tvalue\n";
    line("accuracy", accuracy);
    line("macro_f1", macro_f1);
    line("mae", mae);
    line("rmse", rmse);
    line("rouge1", rouge1);
    line("rougeL", rougeL);
    os << "\nid\taccuracy\trouge1\trougeL\tabs_error\n";
    for (const auto& e : examples) {
        os << e.id << '\t' << e.accuracy << '\t' << e.rouge1 << '\t' << e.rougeL << '\t';
        if (e.abs_error) os << *e.abs_error;
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> rank_descending(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<double> bm25_scores(std::string_view query, std::span<const std::string> docs, double k1, double b) {
    if (docs.empty()) throw ValidationError("bm25 over an empty corpus");
    std::vector<std::unordered_map<std::string, std::size_t>> tf(docs.size());
    std::vector<double> len(docs.size());
    std::unordered_map<std::string, std::size_t> df;
    double total_len = 0.0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto toks = metric_tokens(docs[i]);
        len[i] = static_cast<double>(toks.size());
        total_len += len[i];
        for (const auto& t : toks) ++tf[i][t];
        for (const auto& [t, c] : tf[i]) ++df[t];
    }
    const double n_docs = static_cast<double>(docs.size());
    const double avgdl = total_len > 0.0 ? total_len / n_docs : 1.0;
    std::vector<double> scores(docs.size(), 0.0);
    for (const auto& term : metric_tokens(query)) {
        auto d = df.find(term);
        if (d == df.end()) continue;
        const double dfv = static_cast<double>(d->second);
        const double idf = std::log(1.0 + (n_docs - dfv + 0.5) / (dfv + 0.5));
        for (std::size_t i = 0; i < docs.size(); ++i) {
            auto it = tf[i].find(term);
            if (it == tf[i].end()) continue;
            const double f = static_cast<double>(it->second);
            scores[i] += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * len[i] / avgdl));
        }
    }
    return scores;
}

std::vector<std::size_t> bm25_rank(std::string_view query, std::span<const std::string> docs, double k1, double b) {
    const auto s = bm25_scores(query, docs, k1, b);
    return rank_descending(s);
}

RowVector mean_pool(const Matrix& tokens) {
    if (tokens.rows() == 0) throw ShapeError("mean_pool of an empty token matrix");
    return tokens.colwise().mean();
}

double cosine_similarity(const RowVector& a, const RowVector& b) {
    if (a.size() != b.size()) throw ShapeError("cosine of vectors with different widths");
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

std::vector<std::size_t> cosine_rank(const RowVector& query, std::span<const RowVector> docs) {
    if (docs.empty()) throw ValidationError("cosine_rank over an empty corpus");
    std::vector<double> s;
    s.reserve(docs.size());
    for (const auto& d : docs) s.push_back(cosine_similarity(query, d));
    return rank_descending(s);
}

std::vector<std::size_t> cosine_rank(const Context& context) {
    if (!context.has_embeddings()) throw ValidationError("cosine ranking needs token embeddings on the query and records");
    std::vector<RowVector> docs;
    docs.reserve(context.size());
    for (const auto& r : context.records) docs.push_back(mean_pool(*r.token_embeddings));
    return cosine_rank(mean_pool(*context.query_embeddings), docs);
}

std::vector<std::size_t> bm25_rank(const Context& context) {
    std::vector<std::string> docs;
    docs.reserve(context.size());
    for (const auto& r : context.records) docs.push_back(r.input_text + " " + r.output_text);
    return bm25_rank(context.query_text, docs);
}

// ---------------------------------------------------------------------------

double exact_expected_reward(const PLDistribution& dist, const ProfileReward& reward) {
    const auto count = permutation_count(dist.n(), dist.k());
    if (count > kEnumerationLimit)
        throw GuardError("exact_expected_reward would enumerate " + std::to_string(count) + " profiles");
    double total = 0.0;
    for_each_profile(dist.n(), dist.k(), [&](const Profile& p) { total += profile_prob(dist, p) * reward(p); });
    return total;
}

Gradients exact_gradient(const ScorerParams& params, const Context& context, std::size_t k,
                         const ProfileReward& reward) {
    const auto count = permutation_count(context.size(), k);
    if (count > kGradientEnumerationLimit)
        throw GuardError("exact_gradient would enumerate " + std::to_string(count) + " profiles (limit " +
                         std::to_string(kGradientEnumerationLimit) + ")");
    ad::Tape tape;
    auto graph = build_scorer(tape, params, context);
    const auto& s = tape.value(graph.scores);
    PLDistribution dist(std::vector<double>(s.data(), s.data() + s.size()), k);
    std::optional<ad::Var> total;
    for_each_profile(dist.n(), k, [&](const Profile& p) {
        const double weight = profile_prob(dist, p) * reward(p);
        auto term = tape.scale(tape.pl_logprob(graph.scores, p.indices, kScoreFloor), weight);
        total = total ? tape.add(*total, term) : term;
    });
    tape.backward(*total);
    Gradients g;
    g.reserve(graph.params.size());
    for (auto v : graph.params) g.push_back(tape.grad(v));
    return g;
}

ElboResult elbo_check(const PLDistribution& dist, const std::function<double(const Profile&)>& likelihood) {
    const auto count = permutation_count(dist.n(), dist.k());
    if (count > kEnumerationLimit) throw GuardError("elbo_check would enumerate " + std::to_string(count) + " profiles");
    double marginal = 0.0;
    double expected_log = 0.0;
    for_each_profile(dist.n(), dist.k(), [&](const Profile& p) {
        const double lik = likelihood(p);
        if (!(lik > 0.0)) throw NumericError("elbo_check: zero likelihood has no logarithm");
        if (lik > 1.0) throw ValidationError("elbo_check: likelihood above 1");
        const double pi = profile_prob(dist, p);
        marginal += pi * lik;
        expected_log += pi * std::log(lik);
    });
    ElboResult r;
    r.lhs = std::log(marginal);
    r.rhs = expected_log;
    r.holds = r.lhs >= r.rhs - 1e-12;
    return r;
}

std::pair<Profile, double> optimal_profile(const SyntheticWorld& world, std::size_t k) {
    const auto count = permutation_count(world.records(), k);
    if (k < 1 || k > world.records()) throw ValidationError("optimal_profile needs 1 <= k <= N");
    if (count > kEnumerationLimit) throw GuardError("optimal_profile would enumerate " + std::to_string(count) + " profiles");
    Profile best;
    double best_u = -std::numeric_limits<double>::infinity();
    for_each_profile(world.records(), k, [&](const Profile& p) {
        const double u = synthetic_utility(world, p);
        if (u > best_u) {
            best_u = u;
            best = p;
        }
    });
    return {best, best_u};
}

namespace {

Profile head(const std::vector<std::size_t>& order, std::size_t k) {
    return Profile{std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k))};
}

double ratio(double value, double optimum) { return optimum != 0.0 ? value / optimum : 0.0; }

nlohmann::ordered_json profile_json(const Profile& p) { return p.indices; }

}  // namespace

double RegretReport::policy_ratio() const { return ratio(policy, optimal); }
double RegretReport::cosine_ratio() const { return ratio(cosine_greedy, optimal); }
double RegretReport::bm25_ratio() const { return ratio(bm25, optimal); }

nlohmann::ordered_json RegretReport::to_json() const {
    nlohmann::ordered_json j;
    j["optimal"] = optimal;
    j["policy"] = policy;
    j["cosine_greedy"] = cosine_greedy;
    j["bm25"] = bm25;
    j["policy_ratio"] = policy_ratio();
    j["cosine_ratio"] = cosine_ratio();
    j["bm25_ratio"] = bm25_ratio();
    j["optimal_profile"] = profile_json(optimal_profile);
    j["policy_profile"] = profile_json(policy_profile);
    j["cosine_profile"] = profile_json(cosine_profile);
    j["bm25_profile"] = profile_json(bm25_profile);
    return j;
}

RegretReport regret_report(const SyntheticWorld& world, const DatasetExample& example, const ScorerParams& params,
                           std::size_t k) {
    if (world.records() != example.context.size())
        throw ShapeError("regret_report: world and context differ in record count");
    RegretReport r;
    std::tie(r.optimal_profile, r.optimal) = optimal_profile(world, k);
    r.policy_profile = top_k_profile(PLDistribution(encode_records(example.context, params), k));
    r.cosine_profile = head(cosine_rank(example.context), k);
    r.bm25_profile = head(bm25_rank(example.context), k);
    r.policy = synthetic_utility(world, r.policy_profile);
    r.cosine_greedy = synthetic_utility(world, r.cosine_profile);
    r.bm25 = synthetic_utility(world, r.bm25_profile);
    return r;
}

}  // namespace purple
