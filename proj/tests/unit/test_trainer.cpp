#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "purple/environment.hpp"
#include "purple/errors.hpp"
#include "purple/evalkit.hpp"
#include "purple/trainer.hpp"
#include "support.hpp"

using namespace purple;

namespace {

double cosine(const Gradients& a, const Gradients& b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += (a[i].array() * b[i].array()).sum();
    return dot / (global_norm(a) * global_norm(b));
}

Gradients filled(const ScorerParams& p, double value) {
    auto g = zeros_like(p);
    for (auto& m : g) m.setConstant(value);
    return g;
}

std::size_t count_entries(const ScorerParams& p) {
    std::size_t n = 0;
    for (const auto& v : p.values) n += static_cast<std::size_t>(v.size());
    return n;
}

EstimateItem item_with_rewards(const DatasetExample& ex, const std::vector<Profile>& profiles,
                               const std::vector<double>& rewards) {
    EstimateItem it;
    it.example = &ex;
    for (std::size_t m = 0; m < profiles.size(); ++m) it.samples.push_back(RewardSample{profiles[m], rewards[m], 0.0});
    return it;
}

GeneratedData small_world(std::uint64_t seed, std::size_t users) {
    WorldSpec spec;
    spec.seed = seed;
    spec.records = 6;
    spec.k = 2;
    spec.embed_width = 8;
    auto data = generate_dataset(spec, users);
    attach_hash_embeddings(data.examples, 8, seed);
    return data;
}

TrainConfig small_config() {
    TrainConfig c;
    c.batch_size = 2;
    c.samples_per_example = 4;
    c.learning_rate = 1e-2;
    c.epochs = 3;
    c.k = 2;
    c.reward_parallelism = 2;
    c.seed = 11;
    return c;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("normalize_rewards") {
    auto z = normalize_rewards(std::vector<double>{1.0, 2.0, 3.0});
    CHECK(z[0] == doctest::Approx(-1.224744871391589).epsilon(1e-12));
    CHECK(z[1] == doctest::Approx(0.0));
    CHECK(z[2] == doctest::Approx(1.224744871391589).epsilon(1e-12));
    CHECK(normalize_rewards(std::vector<double>{5.0, 5.0, 5.0}) == std::vector<double>{0.0, 0.0, 0.0});

    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> r(2 + trial % 30);
        for (auto& x : r) x = 100.0 * (uniform01(rng) - 0.5);
        auto n = normalize_rewards(r);
        const double mean = std::accumulate(n.begin(), n.end(), 0.0) / static_cast<double>(n.size());
        double var = 0.0;
        for (double x : n) var += (x - mean) * (x - mean);
        CHECK(std::abs(mean) < 1e-12);
        CHECK(std::sqrt(var / static_cast<double>(n.size())) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("estimate_gradient under equal and shifted rewards") {
    Rng rng(2);
    auto p = init_params(2, 8, 2, 1);
    DatasetExample ex;
    ex.context = test::random_context(rng, 5, 8);
    PLDistribution dist(encode_records(ex.context, p), 2);
    auto profiles = sample_profiles(dist, 8, rng);

    std::vector<EstimateItem> flat{item_with_rewards(ex, profiles, std::vector<double>(8, 3.0))};
    CHECK(global_norm(estimate_gradient(p, flat, 2)) == 0.0);

    std::vector<double> r(8);
    for (auto& x : r) x = uniform01(rng);
    auto shifted = r;
    for (auto& x : shifted) x += 7.5;
    std::vector<EstimateItem> a{item_with_rewards(ex, profiles, r)}, b{item_with_rewards(ex, profiles, shifted)};
    const auto ga = estimate_gradient(p, a, 2), gb = estimate_gradient(p, b, 2);
    for (std::size_t i = 0; i < ga.size(); ++i) CHECK((ga[i] - gb[i]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(global_norm(ga) > 0.0);

    std::vector<EstimateItem> ragged{item_with_rewards(ex, profiles, r),
                                     item_with_rewards(ex, {profiles[0], profiles[1]}, {0.0, 1.0})};
    CHECK_THROWS_AS(estimate_gradient(p, ragged, 2), ValidationError);
}

TEST_CASE("unnormalized estimator matches the exact gradient") {
    Rng rng(3);
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t n = 2 + trial % 3, k = 1 + trial % 2;
        auto p = init_params(30 + trial, 8, 2, 1);
        const auto c = test::random_context(rng, n, 8);
        std::vector<double> utility(64);
        for (auto& u : utility) u = uniform01(rng);
        auto reward = [&](const Profile& prof) {
            std::size_t h = 0;
            for (auto i : prof.indices) h = h * 7 + i + 1;
            return utility[h % utility.size()];
        };
        const auto exact = exact_gradient(p, c, k, reward);

        PLDistribution dist(encode_records(c, p), k);
        std::map<Profile, double> counts;
        const int draws = 100000;
        for (int i = 0; i < draws; ++i) counts[sample_profile(dist, rng)] += 1.0;
        std::vector<Profile> profiles;
        std::vector<double> weights;
        for (const auto& [prof, cnt] : counts) {
            profiles.push_back(prof);
            weights.push_back(cnt / draws * reward(prof) * static_cast<double>(counts.size()));
        }
        const auto estimate = weighted_logprob_gradient(p, c, k, profiles, weights);
        CHECK(cosine(estimate, exact) > 0.99);
    }
}

TEST_CASE("global norm clipping") {
    auto p = init_params(4, 8, 2, 1);
    const double entries = static_cast<double>(count_entries(p));
    auto g = filled(p, 2.0 / std::sqrt(entries));
    CHECK(clip_global_norm(g, 1.0) == doctest::Approx(2.0));
    CHECK(global_norm(g) == doctest::Approx(1.0));
    CHECK(g[0](0, 0) == doctest::Approx(1.0 / std::sqrt(entries)));

    auto small = filled(p, 0.3 / std::sqrt(entries));
    const auto before = small;
    CHECK(clip_global_norm(small, 1.0) == doctest::Approx(0.3));
    CHECK(small == before);

    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto r = zeros_like(p);
        for (auto& m : r) m = test::random_matrix(rng, m.rows(), m.cols(), 10.0 * uniform01(rng));
        clip_global_norm(r, 0.5);
        CHECK(global_norm(r) <= 0.5 + 1e-12);
    }

    g[1](0, 0) = std::nan("");
    CHECK_THROWS_AS(clip_global_norm(g, 1.0), NumericError);
}

TEST_CASE("Adam steps") {
    TrainConfig cfg;
    auto p = init_params(5, 8, 2, 1);
    const auto start = p;
    auto state = AdamState::for_params(p);
    adam_step(p, filled(p, 1.0), state, cfg);
    CHECK(state.t == 1);
    for (std::size_t i = 0; i < p.size(); ++i)
        CHECK((p.values[i] - start.values[i]).array().cwiseAbs().maxCoeff() ==
              doctest::Approx(1e-4 / (1.0 + 1e-8)).epsilon(1e-9));
    CHECK(p.values[0](0, 0) - start.values[0](0, 0) == doctest::Approx(-9.9999999e-5).epsilon(1e-7));

    auto q = start;
    auto fresh = AdamState::for_params(q);
    adam_step(q, zeros_like(q), fresh, cfg);
    CHECK(q.values == start.values);
    CHECK(fresh.t == 1);
    adam_step(q, zeros_like(q), fresh, cfg);
    CHECK(fresh.t == 2);

    Gradients short_grads(q.size() - 1);
    CHECK_THROWS_AS(adam_step(q, short_grads, fresh, cfg), ShapeError);
}

TEST_CASE("training config") {
    const TrainConfig d;
    CHECK(d.batch_size == 16);
    CHECK(d.samples_per_example == 32);
    CHECK(d.learning_rate == 1e-4);
    CHECK(d.clip_norm == 1.0);
    CHECK(d.epochs == 10);
    CHECK(d.adam_beta1 == 0.9);
    CHECK(d.adam_beta2 == 0.999);
    CHECK_NOTHROW(d.validate());
    auto bad = d;
    bad.samples_per_example = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = d;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = d;
    bad.clip_norm = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("split_dataset keeps the tail for validation") {
    auto data = small_world(1, 10).examples;
    auto [train_set, val_set] = split_dataset(data, 0.1);
    CHECK(train_set.size() == 9);
    REQUIRE(val_set.size() == 1);
    CHECK(val_set[0].user_id == data.back().user_id);
    auto [t2, v2] = split_dataset(data, 0.25);
    CHECK(v2.size() == 3);
    CHECK_THROWS_AS(split_dataset(std::vector<DatasetExample>(data.begin(), data.begin() + 1), 0.1), ValidationError);
}

TEST_CASE("training is deterministic and tracks the best validation reward") {
    auto data = small_world(2, 6);
    SyntheticOracle oracle(data.worlds_by_user());
    auto [train_set, val_set] = split_dataset(data.examples, 0.34);
    const auto init = init_params(2, 8, 2, 1);
    test::TempDir dir;
    TrainOptions opts;
    opts.out_dir = dir.path;
    std::size_t callbacks = 0;
    opts.on_epoch = [&](const EpochLog&) { ++callbacks; };
    const auto a = train(train_set, val_set, small_config(), oracle, init, opts);
    auto cfg = small_config();
    cfg.reward_parallelism = 1;
    const auto b = train(train_set, val_set, cfg, oracle, init);
    CHECK(a.best_params.values == b.best_params.values);
    CHECK(callbacks == 3);
    REQUIRE(a.log.size() == 3);

    double best = -1e300;
    for (const auto& e : a.log) {
        CHECK(e.improved == (e.val_mean_reward > best));
        best = std::max(best, e.val_mean_reward);
        CHECK(std::isfinite(e.grad_norm_pre_clip));
    }
    CHECK(a.best_val_reward == best);
    CHECK(mean_top_k_reward(a.best_params, val_set, 2, oracle) == doctest::Approx(best));
    CHECK(std::filesystem::exists(dir / "best.prpl"));
    for (const auto& e : a.log)
        CHECK(std::filesystem::exists(dir / ("epoch_" + std::to_string(e.epoch) + ".prpl")) == e.improved);
    CHECK(load_checkpoint(dir / "best.prpl").values == a.best_params.values);
    CHECK(test::read_text(dir / "train_log.jsonl").find("\"epoch\":3") != std::string::npos);
}

TEST_CASE("a constant reward leaves parameters at their initial values") {
    auto data = small_world(3, 4);
    FunctionOracle oracle([](const DatasetExample&, const Profile&) { return 0.25; });
    auto [train_set, val_set] = split_dataset(data.examples, 0.5);
    const auto init = init_params(3, 8, 2, 1);
    const auto r = train(train_set, val_set, small_config(), oracle, init);
    CHECK(r.best_params.values == init.values);
    for (const auto& e : r.log) CHECK(e.grad_norm_pre_clip == 0.0);
}

TEST_CASE("epoch log json") {
    EpochLog e;
    e.epoch = 4;
    e.val_mean_reward = 0.5;
    auto cfg = small_config();
    auto j = e.to_json(cfg);
    CHECK(j["epoch"] == 4);
    CHECK(j["seed"] == 11);
    CHECK(j["samples_per_example"] == 4);
    CHECK(j["batch_size"] == 2);
    CHECK(j.contains("grad_norm_pre_clip"));
    CHECK(cfg.to_json()["learning_rate"] == 1e-2);
}

}  // TEST_SUITE
