#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "purple/core.hpp"

namespace purple {

/// Ground-truth utility model for synthetic users.
///
/// U(P) = sum_d w_d * max_k gamma^(k-1) * c[p_k][d] - lambda * sum_{k<k'} conflict(p_k, p_k')
/// Coverage is max-based, so a redundant record adds nothing, and the position
/// discount makes order matter.
struct SyntheticWorld {
    std::vector<double> weights;                     // D topic weights, >= 0
    std::vector<std::vector<double>> coverage;       // N x D, entries in [0, 1]
    std::vector<std::vector<std::uint8_t>> conflict; // N x N, symmetric, zero diagonal
    double gamma = 0.5;
    double lambda = 0.0;

    std::size_t records() const { return coverage.size(); }
    std::size_t dims() const { return weights.size(); }
    /// Throws ValidationError when shapes or ranges are inconsistent.
    void validate() const;
};

double synthetic_utility(const SyntheticWorld& world, const Profile& profile);

struct RewardSample {
    Profile profile;
    double reward = 0.0;
    double logprob = 0.0;
};

/// Maps a chosen profile for an example to a scalar reward. Implementations must be
/// safe to call concurrently and deterministic for identical inputs.
class RewardOracle {
  public:
    virtual ~RewardOracle() = default;
    virtual double reward(const DatasetExample& example, const Profile& profile) const = 0;
};

/// Synthetic utility looked up by user id.
class SyntheticOracle : public RewardOracle {
  public:
    explicit SyntheticOracle(std::map<std::string, SyntheticWorld> worlds);
    double reward(const DatasetExample& example, const Profile& profile) const override;
    const SyntheticWorld& world(const std::string& user_id) const;

  private:
    std::map<std::string, SyntheticWorld> worlds_;
};

/// Adapts any callable to the oracle interface.
class FunctionOracle : public RewardOracle {
  public:
    using Fn = std::function<double(const DatasetExample&, const Profile&)>;
    explicit FunctionOracle(Fn fn) : fn_(std::move(fn)) {}
    double reward(const DatasetExample& example, const Profile& profile) const override { return fn_(example, profile); }

  private:
    Fn fn_;
};

// ---------------------------------------------------------------------------
// Log-likelihood reward over the wire.
//
// POST {endpoint}/score  {"prompt": str, "reference": str}
//   -> {"tokens": [str], "token_logprobs": [float|null], "reference_start": int}
// `tokens` concatenate to prompt + reference; `reference_start` is the byte offset
// of the reference inside that text. The reward is the sum of the logprobs of the
// tokens from reference_start onwards.

struct RewardRequest {
    std::string prompt;
    std::string reference;
};

struct ScoreResponse {
    std::vector<std::string> tokens;
    std::vector<std::optional<double>> token_logprobs;
    std::size_t reference_start = 0;
};

ScoreResponse score_response_from_json(const nlohmann::json& j);
nlohmann::json score_response_to_json(const ScoreResponse& r);

/// Sums reference-token logprobs. Throws AlignmentError when no token boundary sits
/// at reference_start or the suffix is not the reference; ConfigError when logprobs
/// are missing or positive.
double reference_loglik(const ScoreResponse& response, const RewardRequest& request, bool length_normalize = false);

struct HttpRewardOptions {
    std::string endpoint;
    int attempts = 3;
    std::chrono::milliseconds backoff{250};
    std::chrono::seconds timeout{30};
    bool length_normalize = false;
};

/// `PURPLE_REWARD_ENDPOINT` when set, otherwise `configured`.
std::string resolve_endpoint(const std::string& configured);

/// Log-likelihood of request.reference under the remote model given request.prompt.
/// Transport failures and 5xx responses are retried with exponential backoff and
/// end in TransportError; 4xx responses raise ConfigError.
double llm_loglik_reward(const RewardRequest& request, const HttpRewardOptions& options);

/// Thread-safe memo keyed by (prompt hash, reference hash); the first stored value wins.
class RewardCache {
  public:
    double get_or_compute(const std::string& prompt, const std::string& reference, const std::function<double()>& compute);
    std::size_t size() const;
    std::size_t hits() const { return hits_.load(); }

  private:
    struct KeyHash {
        std::size_t operator()(const std::pair<std::uint64_t, std::uint64_t>& k) const {
            return static_cast<std::size_t>(k.first * 0x9E3779B97F4A7C15ull ^ k.second);
        }
    };
    mutable std::mutex mu_;
    std::unordered_map<std::pair<std::uint64_t, std::uint64_t>, double, KeyHash> values_;
    std::atomic<std::size_t> hits_{0};
};

/// Serialises each profile under a prompt template and scores the reference remotely.
class LlmRewardOracle : public RewardOracle {
  public:
    LlmRewardOracle(HttpRewardOptions options, PromptTemplate prompt_template = {});
    double reward(const DatasetExample& example, const Profile& profile) const override;
    const RewardCache& cache() const { return cache_; }

  private:
    HttpRewardOptions options_;
    PromptTemplate template_;
    mutable RewardCache cache_;
};

// ---------------------------------------------------------------------------
// Scripted scoring table shared by the mock server and its in-process twin.

/// Splits text into tokens of (leading whitespace + non-space run); concatenation is lossless.
std::vector<std::string> scoring_tokens(const std::string& text);

struct RewardScript {
    /// Reference-token logprobs, one per scoring_tokens(reference), keyed by (prompt, reference).
    std::map<std::pair<std::string, std::string>, std::vector<double>> entries;
    /// Per-token logprob used for unscripted pairs; unscripted pairs are rejected when unset.
    std::optional<double> default_logprob;
    double prompt_token_logprob = -1.0;

    void add(std::string prompt, std::string reference, std::vector<double> reference_logprobs);
    /// Reference logprobs for a pair, or nullopt when neither scripted nor defaulted.
    std::optional<std::vector<double>> lookup(const std::string& prompt, const std::string& reference) const;
    /// Full echoed response for a pair, as the mock server sends it.
    std::optional<ScoreResponse> respond(const std::string& prompt, const std::string& reference) const;
};

/// JSONL lines {"prompt", "reference", "reference_logprobs": [..]}; an optional line
/// {"default_logprob": x, "prompt_token_logprob": y} sets the fallbacks.
RewardScript load_reward_script(const std::filesystem::path& path);
void save_reward_script(const std::filesystem::path& path, const RewardScript& script);

/// In-process evaluation of a script, summing exactly as the HTTP client does.
class ScriptedOracle : public RewardOracle {
  public:
    ScriptedOracle(std::shared_ptr<const RewardScript> script, PromptTemplate prompt_template = {},
                   bool length_normalize = false);
    double reward(const DatasetExample& example, const Profile& profile) const override;

  private:
    std::shared_ptr<const RewardScript> script_;
    PromptTemplate template_;
    bool length_normalize_;
};

/// HTTP server implementing the scoring contract from a RewardScript.
class MockRewardServer {
  public:
    explicit MockRewardServer(std::shared_ptr<const RewardScript> script);
    ~MockRewardServer();
    MockRewardServer(const MockRewardServer&) = delete;
    MockRewardServer& operator=(const MockRewardServer&) = delete;

    /// Binds (port 0 picks a free port), serves on a background thread, returns the port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    /// Serves on the calling thread until stop() is called from elsewhere.
    void run(const std::string& host, int port);
    void stop();
    std::string endpoint() const;

    /// The next `count` requests fail with `status` (fault injection for retry tests).
    void fail_next(int count, int status = 503);
    /// Responses omit token_logprobs entirely.
    void set_omit_logprobs(bool omit) { omit_logprobs_ = omit; }
    std::size_t request_count() const { return requests_.load(); }

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::shared_ptr<const RewardScript> script_;
    std::thread thread_;
    std::string host_;
    int port_ = 0;
    std::atomic<int> failures_left_{0};
    std::atomic<int> failure_status_{503};
    std::atomic<bool> omit_logprobs_{false};
    std::atomic<std::size_t> requests_{0};
};

// ---------------------------------------------------------------------------
// Task-metric rewards.

enum class MetricKind { accuracy, neg_mae, rouge1 };

MetricKind metric_kind_from_name(const std::string& name);

/// accuracy: 1 for an exact (whitespace-trimmed) match, else 0; neg_mae: -|pred - target|;
/// rouge1: unigram F1. Throws ParseError when neg_mae inputs are not numbers.
double metric_reward(MetricKind metric, const std::string& generated, const std::string& reference);

}  // namespace purple
