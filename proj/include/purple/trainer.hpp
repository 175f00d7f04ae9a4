#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "purple/core.hpp"
#include "purple/policy.hpp"
#include "purple/reward.hpp"
#include "purple/scorer.hpp"

namespace purple {

/// REINFORCE hyperparameters. Defaults:
/// B=16, M=32, Adam(0.9, 0.999) at 1e-4, global-norm clipping at 1.0, 10 epochs.
struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t samples_per_example = 32;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    std::size_t reward_parallelism = 8;
    std::size_t k = 5;
    double validation_fraction = 0.1;

    /// Throws ValidationError when B < 1, M < 2, clip_norm <= 0 or other fields are out of range.
    void validate() const;
    nlohmann::ordered_json to_json() const;
};

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::uint64_t t = 0;

    static AdamState for_params(const ScorerParams& params);
};

/// Population z-score; all zeros when the population std is below 1e-8.
std::vector<double> normalize_rewards(std::span<const double> rewards);

struct EstimateItem {
    const DatasetExample* example = nullptr;
    std::vector<RewardSample> samples;
};

/// (1/B) sum_b (1/M) sum_m grad log pi(P_b^m | C_b) * z(r_b)^m, the ascent direction of
/// the expected reward. Throws ValidationError when sample counts differ across examples.
Gradients estimate_gradient(const ScorerParams& params, std::span<const EstimateItem> batch, std::size_t k,
                            bool normalize = true);

/// Single-example contribution (1/M) sum_m grad log pi(P^m) * w_m for explicit weights w.
Gradients weighted_logprob_gradient(const ScorerParams& params, const Context& context, std::size_t k,
                                    std::span<const Profile> profiles, std::span<const double> weights);

double global_norm(const Gradients& gradients);

/// Rescales in place so the global L2 norm is at most clip_norm; returns the norm before clipping.
/// Throws NumericError on non-finite entries.
double clip_global_norm(Gradients& gradients, double clip_norm);

/// Bias-corrected Adam descent step on `params` along `gradients`.
void adam_step(ScorerParams& params, const Gradients& gradients, AdamState& state, const TrainConfig& config);

struct EpochLog {
    std::size_t epoch = 0;
    double train_mean_reward = 0.0;
    double val_mean_reward = 0.0;
    double grad_norm_pre_clip = 0.0;
    double wall_ms = 0.0;
    bool improved = false;

    nlohmann::ordered_json to_json(const TrainConfig& config) const;
};

struct TrainResult {
    ScorerParams best_params;
    std::filesystem::path best_checkpoint;
    double best_val_reward = 0.0;
    std::vector<EpochLog> log;
};

struct TrainOptions {
    /// Checkpoints (`epoch_<n>.prpl`, `best.prpl`) and `train_log.jsonl` land here; empty disables writing.
    std::filesystem::path out_dir;
    /// Called after every epoch, e.g. for progress output.
    std::function<void(const EpochLog&)> on_epoch;
};

/// Mean oracle reward of the deterministic top-k profile over `examples`.
double mean_top_k_reward(const ScorerParams& params, std::span<const DatasetExample> examples, std::size_t k,
                         const RewardOracle& oracle);

/// Deterministic train/validation split: the last ceil(fraction * n) examples validate.
std::pair<std::vector<DatasetExample>, std::vector<DatasetExample>> split_dataset(
    const std::vector<DatasetExample>& dataset, double validation_fraction);

/// Maximises expected reward by REINFORCE, keeping the parameters with the best
/// validation top-k reward. Examples are processed concurrently within a batch and
/// merged in batch order, so results do not depend on thread scheduling.
TrainResult train(std::span<const DatasetExample> train_set, std::span<const DatasetExample> validation_set,
                  const TrainConfig& config, const RewardOracle& oracle, ScorerParams params,
                  const TrainOptions& options = {});

}  // namespace purple
