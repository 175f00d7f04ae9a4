#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "purple/core.hpp"

namespace purple {

/// Scores below this are lifted to it before any Plackett-Luce computation.
inline constexpr double kScoreFloor = 1e-9;

/// Largest profile count enumerate_profiles will produce.
inline constexpr std::uint64_t kEnumerationLimit = 10'000'000;

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw; identical on every platform.
double uniform01(Rng& rng);

/// Plackett-Luce distribution over ordered k-selections of N scored records.
class PLDistribution {
  public:
    /// Throws ValidationError unless 1 <= k <= scores.size() and every score is finite.
    PLDistribution(std::vector<double> scores, std::size_t k);

    std::span<const double> scores() const { return scores_; }
    std::size_t k() const { return k_; }
    std::size_t n() const { return scores_.size(); }
    double total() const { return total_; }

  private:
    std::vector<double> scores_;
    std::size_t k_;
    double total_ = 0.0;
};

/// prod_j f(p_j) / (S - sum_{m<j} f(p_m)).
double profile_prob(const PLDistribution& dist, const Profile& profile);

/// Same quantity accumulated in log space.
double profile_logprob(const PLDistribution& dist, const Profile& profile);

/// Sequential draws without replacement, each proportional to the remaining scores.
Profile sample_profile(const PLDistribution& dist, Rng& rng);
std::vector<Profile> sample_profiles(const PLDistribution& dist, std::size_t m, Rng& rng);

/// Indices of the k largest scores in descending order, ties to the lower index.
Profile top_k_profile(const PLDistribution& dist);

/// n! / (n-k)!, saturating at UINT64_MAX.
std::uint64_t permutation_count(std::size_t n, std::size_t k);

/// Every ordered k-permutation of {0..n-1} in lexicographic order.
/// Throws GuardError when the count exceeds `limit`.
std::vector<Profile> enumerate_profiles(std::size_t n, std::size_t k,
                                        std::uint64_t limit = kEnumerationLimit);

/// Calls `visit` on every ordered k-permutation in lexicographic order without storing them.
template <typename Visit>
void for_each_profile(std::size_t n, std::size_t k, Visit&& visit) {
    Profile p;
    p.indices.reserve(k);
    std::vector<bool> used(n, false);
    auto rec = [&](auto&& self) -> void {
        if (p.indices.size() == k) {
            visit(static_cast<const Profile&>(p));
            return;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            used[i] = true;
            p.indices.push_back(i);
            self(self);
            p.indices.pop_back();
            used[i] = false;
        }
    };
    rec(rec);
}

}  // namespace purple
