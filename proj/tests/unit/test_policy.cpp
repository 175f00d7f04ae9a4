#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "purple/errors.hpp"
#include "purple/policy.hpp"

using namespace purple;

namespace {

std::vector<double> random_scores(Rng& rng, std::size_t n) {
    std::vector<double> s(n);
    for (auto& x : s) x = 1e-3 + uniform01(rng);
    return s;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("profile_prob examples") {
    CHECK(profile_prob(PLDistribution({0.7}, 1), Profile{{0}}) == 1.0);
    CHECK(profile_prob(PLDistribution({0.5, 0.5}, 2), Profile{{0, 1}}) == 0.5);
    PLDistribution d({0.2, 0.3, 0.5}, 2);
    CHECK(profile_prob(d, Profile{{2, 0}}) == doctest::Approx(0.2).epsilon(1e-15));
    double total = 0.0;
    for (const auto& p : enumerate_profiles(3, 2)) total += profile_prob(d, p);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("profile_logprob examples") {
    CHECK(profile_logprob(PLDistribution({0.7}, 1), Profile{{0}}) == 0.0);
    PLDistribution d({0.2, 0.3, 0.5}, 2);
    CHECK(profile_logprob(d, Profile{{2, 0}}) == doctest::Approx(-1.6094379124341003).epsilon(1e-14));
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + trial % 6, k = 1 + trial % std::min<std::size_t>(n, 3);
        PLDistribution dist(random_scores(rng, n), k);
        auto p = sample_profile(dist, rng);
        CHECK(std::abs(profile_logprob(dist, p) - std::log(profile_prob(dist, p))) <= 1e-12);
    }
}

TEST_CASE("normalization over all small instances") {
    Rng rng(2);
    double worst = 0.0;
    for (std::size_t n = 1; n <= 6; ++n)
        for (std::size_t k = 1; k <= std::min<std::size_t>(3, n); ++k)
            for (int trial = 0; trial < 100; ++trial) {
                PLDistribution d(random_scores(rng, n), k);
                double total = 0.0;
                for_each_profile(n, k, [&](const Profile& p) { total += profile_prob(d, p); });
                worst = std::max(worst, std::abs(total - 1.0));
            }
    CHECK(worst <= 1e-9);
}

TEST_CASE("invalid distributions and profiles") {
    CHECK_THROWS_AS(PLDistribution({0.5, 0.5}, 3), ValidationError);
    CHECK_THROWS_AS(PLDistribution({0.5, 0.5}, 0), ValidationError);
    CHECK_THROWS_AS(PLDistribution({0.5, std::nan("")}, 1), NumericError);
    CHECK_THROWS_AS(PLDistribution({}, 1), ValidationError);
    PLDistribution d({0.2, 0.3, 0.5}, 2);
    CHECK_THROWS_AS(profile_prob(d, Profile{{0}}), ValidationError);
    CHECK_THROWS_AS(profile_prob(d, Profile{{1, 1}}), ValidationError);
    CHECK_THROWS_AS(profile_logprob(d, Profile{{0, 3}}), ValidationError);
}

TEST_CASE("zero scores are floored") {
    PLDistribution d({0.0, 1.0}, 2);
    CHECK(d.scores()[0] == kScoreFloor);
    CHECK(std::isfinite(profile_logprob(d, Profile{{0, 1}})));
    CHECK(profile_prob(d, Profile{{1, 0}}) == doctest::Approx(1.0));
    PLDistribution all_zero({0.0, 0.0, 0.0}, 2);
    CHECK(profile_prob(all_zero, Profile{{0, 1}}) == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("sampling") {
    Rng rng(3);
    for (int i = 0; i < 10; ++i) CHECK(sample_profile(PLDistribution({0.4}, 1), rng) == Profile{{0}});

    PLDistribution d({0.2, 0.3, 0.5}, 1);
    std::vector<double> freq(3, 0.0);
    const int draws = 200000;
    for (int i = 0; i < draws; ++i) freq[sample_profile(d, rng).indices[0]] += 1.0 / draws;
    CHECK(freq[0] == doctest::Approx(0.2).epsilon(0.05));
    CHECK(std::abs(freq[0] - 0.2) <= 0.01);
    CHECK(std::abs(freq[1] - 0.3) <= 0.01);
    CHECK(std::abs(freq[2] - 0.5) <= 0.01);

    auto batch = sample_profiles(PLDistribution({0.1, 0.2, 0.3, 0.4, 0.5}, 3), 32, rng);
    CHECK(batch.size() == 32);
    for (const auto& p : batch) CHECK(validate_profile(p, 5).ok());
}

TEST_CASE("sampler total variation on n=4, k=2") {
    Rng rng(4);
    PLDistribution d(random_scores(rng, 4), 2);
    std::map<Profile, double> counts;
    const int draws = 200000;
    for (int i = 0; i < draws; ++i) counts[sample_profile(d, rng)] += 1.0;
    double tv = 0.0;
    for (const auto& p : enumerate_profiles(4, 2)) tv += std::abs(counts[p] / draws - profile_prob(d, p));
    CHECK(0.5 * tv < 0.02);
}

TEST_CASE("sampling is reproducible from the seed") {
    PLDistribution d({0.1, 0.7, 0.4, 0.9}, 3);
    Rng a(77), b(77);
    CHECK(sample_profiles(d, 50, a) == sample_profiles(d, 50, b));
}

TEST_CASE("top_k_profile") {
    CHECK(top_k_profile(PLDistribution({0.9, 0.1, 0.5}, 2)) == Profile{{0, 2}});
    CHECK(top_k_profile(PLDistribution({0.5, 0.5}, 1)) == Profile{{0}});
    CHECK(top_k_profile(PLDistribution({0.2, 0.9, 0.2, 0.5}, 4)) == Profile{{1, 3, 0, 2}});
}

TEST_CASE("top_k_profile is the mode for separated scores") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + trial % 4, k = 1 + trial % std::min<std::size_t>(n, 3);
        PLDistribution d(random_scores(rng, n), k);
        Profile best;
        double best_p = -1.0;
        for_each_profile(n, k, [&](const Profile& p) {
            const double pr = profile_prob(d, p);
            if (pr > best_p) {
                best_p = pr;
                best = p;
            }
        });
        CHECK(top_k_profile(d) == best);
    }
}

TEST_CASE("scale invariance") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        auto s = random_scores(rng, 5);
        auto scaled = s;
        const double c = 0.01 + 10.0 * uniform01(rng);
        for (auto& x : scaled) x *= c;
        PLDistribution a(s, 3), b(scaled, 3);
        CHECK(top_k_profile(a) == top_k_profile(b));
        for_each_profile(5, 3, [&](const Profile& p) {
            CHECK(profile_prob(a, p) == doctest::Approx(profile_prob(b, p)).epsilon(1e-12));
        });
    }
}

TEST_CASE("enumeration counts") {
    CHECK(enumerate_profiles(3, 2).size() == 6);
    CHECK(enumerate_profiles(1, 1).size() == 1);
    CHECK(permutation_count(20, 5) == 1860480u);
    CHECK(permutation_count(8, 3) == 336u);
    CHECK(permutation_count(100, 100) == UINT64_MAX);
    auto ps = enumerate_profiles(4, 2);
    CHECK(std::is_sorted(ps.begin(), ps.end()));
    CHECK(std::set<Profile>(ps.begin(), ps.end()).size() == ps.size());
    CHECK_THROWS_AS(enumerate_profiles(20, 5, 1000), GuardError);
    CHECK_THROWS_AS(enumerate_profiles(30, 10), GuardError);
}

TEST_CASE("uniform01 range") {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = uniform01(rng);
        CHECK((u >= 0.0 && u < 1.0));
    }
}

}  // TEST_SUITE
