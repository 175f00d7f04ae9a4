#include "purple/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "purple/errors.hpp"

namespace purple {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (samples_per_example < 2) throw ValidationError("samples_per_example must be >= 2 for reward normalization");
    if (!(clip_norm > 0.0)) throw ValidationError("clip_norm must be > 0");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ValidationError("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be > 0");
    if (k < 1) throw ValidationError("k must be >= 1");
    if (reward_parallelism < 1) throw ValidationError("reward_parallelism must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ValidationError("validation_fraction must lie in (0, 1)");
}

nlohmann::ordered_json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["batch_size"] = batch_size;
    j["samples_per_example"] = samples_per_example;
    j["learning_rate"] = learning_rate;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["clip_norm"] = clip_norm;
    j["epochs"] = epochs;
    j["seed"] = seed;
    j["reward_parallelism"] = reward_parallelism;
    j["k"] = k;
    j["validation_fraction"] = validation_fraction;
    return j;
}

AdamState AdamState::for_params(const ScorerParams& params) {
    AdamState s;
    s.m = zeros_like(params);
    s.v = zeros_like(params);
    return s;
}

std::vector<double> normalize_rewards(std::span<const double> rewards) {
    const auto n = static_cast<double>(rewards.size());
    std::vector<double> out(rewards.size(), 0.0);
    if (rewards.empty()) return out;
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double std = std::sqrt(var / n);
    if (std < 1e-8) return out;
    for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / std;
    return out;
}

namespace {

// grad of sum_m weights[m] * log pi(profiles[m]) on an already recorded graph.
Gradients logprob_gradient(ad::Tape& tape, const ScorerGraph& graph, std::span<const Profile> profiles,
                           std::span<const double> weights) {
    std::optional<ad::Var> total;
    for (std::size_t m = 0; m < profiles.size(); ++m) {
        if (weights[m] == 0.0) continue;
        auto term = tape.scale(tape.pl_logprob(graph.scores, profiles[m].indices, kScoreFloor), weights[m]);
        total = total ? tape.add(*total, term) : term;
    }
    Gradients g;
    g.reserve(graph.params.size());
    if (!total) {
        for (auto v : graph.params) g.push_back(Matrix::Zero(tape.value(v).rows(), tape.value(v).cols()));
        return g;
    }
    tape.backward(*total);
    for (auto v : graph.params) g.push_back(tape.grad(v));
    return g;
}

void add_into(Gradients& acc, const Gradients& g, double factor) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * factor;
}

std::vector<double> sample_weights(std::span<const RewardSample> samples, bool normalize) {
    std::vector<double> rewards;
    rewards.reserve(samples.size());
    for (const auto& s : samples) rewards.push_back(s.reward);
    auto w = normalize ? normalize_rewards(rewards) : rewards;
    for (auto& x : w) x /= static_cast<double>(samples.size());
    return w;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

Rng example_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index), 0x5eedu};
    return Rng(seq);
}

}  // namespace

Gradients weighted_logprob_gradient(const ScorerParams& params, const Context& context, std::size_t,
                                    std::span<const Profile> profiles, std::span<const double> weights) {
    if (profiles.size() != weights.size()) throw ValidationError("profile and weight counts differ");
    ad::Tape tape;
    auto graph = build_scorer(tape, params, context);
    std::vector<double> scaled(weights.begin(), weights.end());
    for (auto& w : scaled) w /= static_cast<double>(std::max<std::size_t>(1, profiles.size()));
    return logprob_gradient(tape, graph, profiles, scaled);
}

Gradients estimate_gradient(const ScorerParams& params, std::span<const EstimateItem> batch, std::size_t,
                            bool normalize) {
    auto total = zeros_like(params);
    if (batch.empty()) return total;
    const auto m = batch.front().samples.size();
    for (const auto& item : batch) {
        if (item.example == nullptr) throw ValidationError("estimate_gradient: batch item without an example");
        if (item.samples.size() != m || m == 0)
            throw ValidationError("estimate_gradient: every example needs the same non-zero number of samples");
    }
    for (const auto& item : batch) {
        ad::Tape tape;
        auto graph = build_scorer(tape, params, item.example->context);
        std::vector<Profile> profiles;
        profiles.reserve(m);
        for (const auto& s : item.samples) profiles.push_back(s.profile);
        const auto weights = sample_weights(item.samples, normalize);
        add_into(total, logprob_gradient(tape, graph, profiles, weights), 1.0 / static_cast<double>(batch.size()));
    }
    return total;
}

double global_norm(const Gradients& gradients) {
    double sq = 0.0;
    for (const auto& g : gradients) sq += g.squaredNorm();
    return std::sqrt(sq);
}

double clip_global_norm(Gradients& gradients, double clip_norm) {
    if (!(clip_norm > 0.0)) throw ValidationError("clip_norm must be > 0");
    for (const auto& g : gradients)
        if (!g.allFinite()) throw NumericError("non-finite gradient in batch");
    const double norm = global_norm(gradients);
    if (norm > clip_norm) {
        const double factor = clip_norm / norm;
        for (auto& g : gradients) g *= factor;
    }
    return norm;
}

void adam_step(ScorerParams& params, const Gradients& gradients, AdamState& state, const TrainConfig& config) {
    if (gradients.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("adam_step: parameter, gradient and state counts differ");
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(config.adam_beta1, t);
    const double c2 = 1.0 - std::pow(config.adam_beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = gradients[i];
        if (g.rows() != params.values[i].rows() || g.cols() != params.values[i].cols())
            throw ShapeError("adam_step: gradient shape differs for " + params.names[i]);
        state.m[i] = config.adam_beta1 * state.m[i] + (1.0 - config.adam_beta1) * g;
        state.v[i] = config.adam_beta2 * state.v[i] + (1.0 - config.adam_beta2) * g.cwiseProduct(g);
        auto m_hat = state.m[i].array() / c1;
        auto v_hat = state.v[i].array() / c2;
        params.values[i].array() -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
}

nlohmann::ordered_json EpochLog::to_json(const TrainConfig& config) const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["train_mean_reward"] = train_mean_reward;
    j["val_mean_reward"] = val_mean_reward;
    j["grad_norm_pre_clip"] = grad_norm_pre_clip;
    j["wall_ms"] = wall_ms;
    j["improved"] = improved;
    j["batch_size"] = config.batch_size;
    j["samples_per_example"] = config.samples_per_example;
    j["seed"] = config.seed;
    return j;
}

double mean_top_k_reward(const ScorerParams& params, std::span<const DatasetExample> examples, std::size_t k,
                         const RewardOracle& oracle) {
    if (examples.empty()) throw ValidationError("mean_top_k_reward over no examples");
    double total = 0.0;
    for (const auto& ex : examples) {
        auto profile = top_k_profile(PLDistribution(encode_records(ex.context, params), k));
        total += oracle.reward(ex, profile);
    }
    return total / static_cast<double>(examples.size());
}

std::pair<std::vector<DatasetExample>, std::vector<DatasetExample>> split_dataset(
    const std::vector<DatasetExample>& dataset, double validation_fraction) {
    if (dataset.size() < 2) throw ValidationError("need at least two examples to hold out a validation split");
    auto n_val = static_cast<std::size_t>(std::ceil(validation_fraction * static_cast<double>(dataset.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, dataset.size() - 1);
    const auto cut = dataset.begin() + static_cast<std::ptrdiff_t>(dataset.size() - n_val);
    return {std::vector<DatasetExample>(dataset.begin(), cut), std::vector<DatasetExample>(cut, dataset.end())};
}

TrainResult train(std::span<const DatasetExample> train_set, std::span<const DatasetExample> validation_set,
                  const TrainConfig& config, const RewardOracle& oracle, ScorerParams params,
                  const TrainOptions& options) {
    config.validate();
    if (train_set.empty()) throw ValidationError("training split is empty");
    if (validation_set.empty()) throw ValidationError("validation split is empty");
    for (const auto* split : {&train_set, &validation_set})
        for (const auto& ex : *split)
            if (config.k > ex.context.size())
                throw ValidationError("k=" + std::to_string(config.k) + " exceeds the " +
                                      std::to_string(ex.context.size()) + " records of \"" + ex.user_id + "\"");
    if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);
    round_to_float(params);

    TrainResult result;
    result.best_params = params;
    result.best_val_reward = -std::numeric_limits<double>::infinity();
    AdamState adam = AdamState::for_params(params);
    const auto m = config.samples_per_example;
    std::string log_text;

    struct ExampleOutcome {
        Gradients grad;
        double reward_sum = 0.0;
    };

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = example_rng(config.seed, epoch, 0xffffffffu);
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i));
            std::swap(order[i - 1], order[std::min(j, i - 1)]);
        }

        double reward_total = 0.0;
        double norm_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const auto count = std::min(config.batch_size, order.size() - start);
            std::vector<ExampleOutcome> outcomes(count);
            parallel_for(count, config.reward_parallelism, [&](std::size_t b) {
                const auto index = order[start + b];
                const auto& ex = train_set[index];
                ad::Tape tape;
                auto graph = build_scorer(tape, params, ex.context);
                const auto& s = tape.value(graph.scores);
                PLDistribution dist(std::vector<double>(s.data(), s.data() + s.size()), config.k);
                Rng rng = example_rng(config.seed, epoch, index);
                std::vector<RewardSample> samples;
                samples.reserve(m);
                for (auto& p : sample_profiles(dist, m, rng)) {
                    RewardSample rs;
                    rs.logprob = profile_logprob(dist, p);
                    rs.reward = oracle.reward(ex, p);
                    if (!std::isfinite(rs.reward)) throw NumericError("reward oracle returned a non-finite reward");
                    rs.profile = std::move(p);
                    outcomes[b].reward_sum += rs.reward;
                    samples.push_back(std::move(rs));
                }
                std::vector<Profile> profiles;
                profiles.reserve(m);
                for (const auto& rs : samples) profiles.push_back(rs.profile);
                outcomes[b].grad = logprob_gradient(tape, graph, profiles, sample_weights(samples, true));
            });

            // Merge in batch order; negate so Adam descends on -J.
            auto step = zeros_like(params);
            for (const auto& o : outcomes) {
                add_into(step, o.grad, -1.0 / static_cast<double>(count));
                reward_total += o.reward_sum;
            }
            norm_total += clip_global_norm(step, config.clip_norm);
            ++batches;
            adam_step(params, step, adam, config);
            round_to_float(params);
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_mean_reward = reward_total / static_cast<double>(train_set.size() * m);
        entry.grad_norm_pre_clip = batches ? norm_total / static_cast<double>(batches) : 0.0;
        entry.val_mean_reward = mean_top_k_reward(params, validation_set, config.k, oracle);
        if (entry.val_mean_reward > result.best_val_reward) {
            entry.improved = true;
            result.best_val_reward = entry.val_mean_reward;
            result.best_params = params;
            if (!options.out_dir.empty()) {
                save_checkpoint(options.out_dir / ("epoch_" + std::to_string(epoch) + ".prpl"), params);
                result.best_checkpoint = options.out_dir / "best.prpl";
                save_checkpoint(result.best_checkpoint, params);
            }
        }
        entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        result.log.push_back(entry);
        if (!options.out_dir.empty()) {
            log_text += entry.to_json(config).dump() + "\n";
            write_file_atomically(options.out_dir / "train_log.jsonl", log_text);
        }
        if (options.on_epoch) options.on_epoch(entry);
    }
    return result;
}

}  // namespace purple
