#include "purple/oracle_suites.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "purple/evalkit.hpp"
#include "purple/policy.hpp"

namespace purple {

namespace {

std::vector<double> random_scores(Rng& rng, std::size_t n) {
    std::vector<double> s(n);
    for (auto& x : s) x = 0.01 + uniform01(rng);
    return s;
}

Context random_context(Rng& rng, std::size_t n, std::size_t d) {
    Context c;
    auto matrix = [&](std::size_t rows) {
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 2.0 * uniform01(rng) - 1.0;
        return m;
    };
    c.query_text = "q";
    c.reference = "y";
    c.query_embeddings = matrix(1 + static_cast<std::size_t>(uniform01(rng) * 3));
    for (std::size_t i = 0; i < n; ++i) {
        Record r;
        r.id = "r" + std::to_string(i);
        r.token_embeddings = matrix(1 + static_cast<std::size_t>(uniform01(rng) * 3));
        c.records.push_back(std::move(r));
    }
    return c;
}

}  // namespace

SuiteResult run_pl_suite(std::uint64_t seed) {
    SuiteResult r{"pl", true, {}};
    Rng rng(seed);
    double worst_norm = 0.0, worst_log = 0.0;
    for (std::size_t n = 1; n <= 6; ++n) {
        for (std::size_t k = 1; k <= std::min<std::size_t>(3, n); ++k) {
            for (int trial = 0; trial < 100; ++trial) {
                PLDistribution dist(random_scores(rng, n), k);
                double total = 0.0;
                for_each_profile(n, k, [&](const Profile& p) {
                    const double prob = profile_prob(dist, p);
                    total += prob;
                    worst_log = std::max(worst_log, std::abs(profile_logprob(dist, p) - std::log(prob)));
                });
                worst_norm = std::max(worst_norm, std::abs(total - 1.0));
            }
        }
    }
    PLDistribution dist(random_scores(rng, 4), 2);
    std::map<Profile, double> counts;
    const std::size_t draws = 200000;
    for (std::size_t i = 0; i < draws; ++i) counts[sample_profile(dist, rng)] += 1.0;
    double tv = 0.0;
    for_each_profile(4, 2, [&](const Profile& p) { tv += std::abs(counts[p] / draws - profile_prob(dist, p)); });
    tv *= 0.5;
    r.details["max_normalization_error"] = worst_norm;
    r.details["max_logprob_error"] = worst_log;
    r.details["sampler_tv_distance"] = tv;
    r.passed = worst_norm <= 1e-9 && worst_log <= 1e-12 && tv < 0.02;
    return r;
}

SuiteResult run_gradient_suite(std::uint64_t seed) {
    SuiteResult r{"gradient", true, {}};
    Rng rng(seed);
    double worst = 0.0;
    const int instances = 20;
    for (int i = 0; i < instances; ++i) {
        const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 3);
        const std::size_t k = 1 + static_cast<std::size_t>(uniform01(rng) * 2);
        auto params = init_params(seed + static_cast<std::uint64_t>(i), 8, 2, 1);
        const auto context = random_context(rng, n, 8);
        const auto profile = sample_profile(PLDistribution(encode_records(context, params), k), rng);

        ad::Tape tape;
        auto graph = build_scorer(tape, params, context);
        tape.backward(tape.pl_logprob(graph.scores, profile.indices));
        std::vector<Matrix> grads;
        for (auto v : graph.params) grads.push_back(tape.grad(v));
        auto f = [&](std::span<const Matrix> values) {
            ScorerParams p = params;
            p.values.assign(values.begin(), values.end());
            return profile_logprob(PLDistribution(encode_records(context, p), k), profile);
        };
        worst = std::max(worst, ad::finite_diff_check(f, params.values, grads, 1e-5));
    }
    r.details["instances"] = instances;
    r.details["max_relative_error"] = worst;
    r.passed = worst <= 1e-5;
    return r;
}

SuiteResult run_elbo_suite(std::uint64_t seed) {
    SuiteResult r{"elbo", true, {}};
    Rng rng(seed);
    int violations = 0;
    double min_gap = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 4);
        const std::size_t k = 1 + static_cast<std::size_t>(uniform01(rng) * std::min<std::size_t>(3, n));
        PLDistribution dist(random_scores(rng, n), std::min(k, n));
        std::map<Profile, double> lik;
        auto res = elbo_check(dist, [&](const Profile& p) {
            auto [it, fresh] = lik.try_emplace(p, 0.0);
            if (fresh) it->second = 1e-3 + (1.0 - 1e-3) * uniform01(rng);
            return it->second;
        });
        if (!res.holds) ++violations;
        min_gap = std::min(min_gap, res.lhs - res.rhs);
    }
    PLDistribution flat(random_scores(rng, 4), 2);
    auto eq = elbo_check(flat, [](const Profile&) { return 0.3; });
    r.details["violations"] = violations;
    r.details["min_gap"] = min_gap;
    r.details["constant_likelihood_gap"] = eq.lhs - eq.rhs;
    r.passed = violations == 0 && std::abs(eq.lhs - eq.rhs) <= 1e-12;
    return r;
}

SuiteResult run_regret_suite(const WorldSpec& spec, std::size_t users, const std::optional<ScorerParams>& params) {
    SuiteResult r{"regret", true, {}};
    auto data = generate_dataset(spec, users);
    const auto scorer = params ? *params : init_params(spec.seed, spec.embed_width, 2, 2);
    attach_hash_embeddings(data.examples, scorer.config.d_model, spec.seed);
    double opt = 0.0, pol = 0.0, cos = 0.0, bm = 0.0;
    auto reports = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
        auto rep = regret_report(data.worlds[i], data.examples[i], scorer, spec.k);
        opt += rep.optimal;
        pol += rep.policy;
        cos += rep.cosine_greedy;
        bm += rep.bm25;
        if (rep.policy > rep.optimal + 1e-9 || rep.cosine_greedy > rep.optimal + 1e-9 || rep.bm25 > rep.optimal + 1e-9)
            r.passed = false;
        auto j = rep.to_json();
        j["user_id"] = data.examples[i].user_id;
        reports.push_back(std::move(j));
    }
    r.details["mean_optimal"] = opt / users;
    r.details["policy_ratio"] = opt != 0.0 ? pol / opt : 0.0;
    r.details["cosine_ratio"] = opt != 0.0 ? cos / opt : 0.0;
    r.details["bm25_ratio"] = opt != 0.0 ? bm / opt : 0.0;
    r.details["users"] = reports;
    return r;
}

}  // namespace purple
