#include "purple/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "purple/errors.hpp"

namespace purple {

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

PLDistribution::PLDistribution(std::vector<double> scores, std::size_t k) : scores_(std::move(scores)), k_(k) {
    if (scores_.empty()) throw ValidationError("Plackett-Luce distribution over zero records");
    if (k_ < 1 || k_ > scores_.size())
        throw ValidationError("profile length k=" + std::to_string(k_) + " outside [1, " +
                              std::to_string(scores_.size()) + "]");
    for (auto& s : scores_) {
        if (!std::isfinite(s)) throw NumericError("non-finite propensity score");
        s = std::max(s, kScoreFloor);
        total_ += s;
    }
}

namespace {

void check_profile(const PLDistribution& dist, const Profile& profile) {
    if (profile.size() != dist.k())
        throw ValidationError("profile has length " + std::to_string(profile.size()) + ", expected " +
                              std::to_string(dist.k()));
    require_valid_profile(profile, dist.n());
}

}  // namespace

double profile_prob(const PLDistribution& dist, const Profile& profile) {
    check_profile(dist, profile);
    double residual = dist.total();
    double prob = 1.0;
    for (auto idx : profile.indices) {
        if (!(residual > kScoreFloor)) throw NumericError("degenerate Plackett-Luce denominator");
        const double f = dist.scores()[idx];
        prob *= f / residual;
        residual -= f;
    }
    return prob;
}

double profile_logprob(const PLDistribution& dist, const Profile& profile) {
    check_profile(dist, profile);
    double residual = dist.total();
    double lp = 0.0;
    for (auto idx : profile.indices) {
        if (!(residual > kScoreFloor)) throw NumericError("degenerate Plackett-Luce denominator");
        const double f = dist.scores()[idx];
        lp += std::log(f) - std::log(residual);
        residual -= f;
    }
    return lp;
}

Profile sample_profile(const PLDistribution& dist, Rng& rng) {
    const auto scores = dist.scores();
    std::vector<bool> taken(scores.size(), false);
    Profile p;
    p.indices.reserve(dist.k());
    for (std::size_t j = 0; j < dist.k(); ++j) {
        // Recompute the remaining mass each step rather than subtracting, so rounding never drifts.
        double remaining = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (!taken[i]) remaining += scores[i];
        const double target = uniform01(rng) * remaining;
        double acc = 0.0;
        std::size_t chosen = scores.size();
        std::size_t last_free = scores.size();
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (taken[i]) continue;
            last_free = i;
            acc += scores[i];
            if (target < acc) {
                chosen = i;
                break;
            }
        }
        if (chosen == scores.size()) chosen = last_free;
        taken[chosen] = true;
        p.indices.push_back(chosen);
    }
    return p;
}

std::vector<Profile> sample_profiles(const PLDistribution& dist, std::size_t m, Rng& rng) {
    if (m < 1) throw ValidationError("sample count must be at least 1");
    std::vector<Profile> out;
    out.reserve(m);
    for (std::size_t i = 0; i < m; ++i) out.push_back(sample_profile(dist, rng));
    return out;
}

Profile top_k_profile(const PLDistribution& dist) {
    std::vector<std::size_t> order(dist.n());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto scores = dist.scores();
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(dist.k());
    return Profile{std::move(order)};
}

std::uint64_t permutation_count(std::size_t n, std::size_t k) {
    if (k > n) return 0;
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < k; ++i) {
        const auto factor = static_cast<std::uint64_t>(n - i);
        if (count > std::numeric_limits<std::uint64_t>::max() / factor) return std::numeric_limits<std::uint64_t>::max();
        count *= factor;
    }
    return count;
}

std::vector<Profile> enumerate_profiles(std::size_t n, std::size_t k, std::uint64_t limit) {
    if (k < 1 || k > n) throw ValidationError("enumerate_profiles needs 1 <= k <= n");
    const auto count = permutation_count(n, k);
    if (count > limit)
        throw GuardError("enumerating " + std::to_string(n) + "P" + std::to_string(k) + " profiles exceeds the limit of " +
                         std::to_string(limit) + "; exhaustive enumeration is meant for small oracle instances only");
    std::vector<Profile> out;
    out.reserve(static_cast<std::size_t>(count));
    for_each_profile(n, k, [&](const Profile& p) { out.push_back(p); });
    return out;
}

}  // namespace purple
