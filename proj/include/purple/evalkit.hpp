#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "purple/core.hpp"
#include "purple/policy.hpp"
#include "purple/reward.hpp"
#include "purple/scorer.hpp"

namespace purple {

// ---------------------------------------------------------------------------
// Text metrics. Tokens are lowercase runs of ASCII letters and digits.

std::vector<std::string> metric_tokens(std::string_view text);

/// Unigram-overlap F1 (multiset counts). 0 when either side has no tokens.
double rouge1(std::string_view candidate, std::string_view reference);
/// Longest-common-subsequence F1.
double rougeL(std::string_view candidate, std::string_view reference);

struct ClassificationScores {
    double accuracy = 0.0;
    double macro_f1 = 0.0;  // averaged over the classes present in the labels
};
ClassificationScores classification_metrics(std::span<const std::string> preds, std::span<const std::string> labels);

struct RegressionScores {
    double mae = 0.0;
    double rmse = 0.0;
};
RegressionScores regression_metrics(std::span<const double> preds, std::span<const double> targets);

struct ExampleScores {
    std::string id;
    double accuracy = 0.0;
    double rouge1 = 0.0;
    double rougeL = 0.0;
    std::optional<double> abs_error;
};

struct MetricReport {
    std::vector<ExampleScores> examples;
    std::optional<double> accuracy;
    std::optional<double> macro_f1;
    std::optional<double> mae;
    std::optional<double> rmse;
    std::optional<double> rouge1;
    std::optional<double> rougeL;

    nlohmann::ordered_json to_json() const;
    std::string to_tsv() const;
};

enum class MetricSet { all, classification, regression, generation };
MetricSet metric_set_from_name(const std::string& name);

/// Scores aligned prediction/reference pairs. Regression metrics appear only when
/// every pair parses as numbers (or are required, for MetricSet::regression).
MetricReport evaluate_outputs(std::span<const std::string> ids, std::span<const std::string> predictions,
                              std::span<const std::string> references, MetricSet set = MetricSet::all);

// ---------------------------------------------------------------------------
// Relevance baselines. Rankings are descending with ties to the lower index.

std::vector<std::size_t> rank_descending(std::span<const double> scores);

/// Okapi BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
std::vector<double> bm25_scores(std::string_view query, std::span<const std::string> docs, double k1 = 1.2,
                                double b = 0.75);
std::vector<std::size_t> bm25_rank(std::string_view query, std::span<const std::string> docs, double k1 = 1.2,
                                   double b = 0.75);

RowVector mean_pool(const Matrix& tokens);
double cosine_similarity(const RowVector& a, const RowVector& b);
std::vector<std::size_t> cosine_rank(const RowVector& query, std::span<const RowVector> docs);

/// Cosine of the mean-pooled query against mean-pooled records; needs embeddings.
std::vector<std::size_t> cosine_rank(const Context& context);
/// BM25 of the query text against "input output" of each record.
std::vector<std::size_t> bm25_rank(const Context& context);

// ---------------------------------------------------------------------------
// Brute-force oracles.

inline constexpr std::uint64_t kGradientEnumerationLimit = 10'000;

using ProfileReward = std::function<double(const Profile&)>;

/// sum_P pi(P) R(P) over every ordered k-permutation.
double exact_expected_reward(const PLDistribution& dist, const ProfileReward& reward);

/// sum_P pi(P) grad log pi(P) R(P) with respect to every scorer parameter.
Gradients exact_gradient(const ScorerParams& params, const Context& context, std::size_t k,
                         const ProfileReward& reward);

struct ElboResult {
    double lhs = 0.0;  // log sum_P pi(P) p(y|P)
    double rhs = 0.0;  // sum_P pi(P) log p(y|P)
    bool holds = false;
};

/// Jensen gap check for a profile likelihood in (0, 1]. Throws NumericError on a zero likelihood.
ElboResult elbo_check(const PLDistribution& dist, const std::function<double(const Profile&)>& likelihood);

struct RegretReport {
    Profile optimal_profile;
    Profile policy_profile;
    Profile cosine_profile;
    Profile bm25_profile;
    double optimal = 0.0;
    double policy = 0.0;
    double cosine_greedy = 0.0;
    double bm25 = 0.0;

    double policy_ratio() const;
    double cosine_ratio() const;
    double bm25_ratio() const;
    nlohmann::ordered_json to_json() const;
};

/// Best ordered k-profile under the world's utility, by enumeration.
std::pair<Profile, double> optimal_profile(const SyntheticWorld& world, std::size_t k);

/// Compares the enumerated optimum with the policy's top-k and the two relevance baselines.
RegretReport regret_report(const SyntheticWorld& world, const DatasetExample& example, const ScorerParams& params,
                           std::size_t k);

}  // namespace purple
