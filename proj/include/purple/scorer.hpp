#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "purple/autodiff.hpp"
#include "purple/core.hpp"

namespace purple {

enum class Pooling { mean, max };

const char* pooling_name(Pooling p);
Pooling pooling_from_name(const std::string& name);

struct ScorerConfig {
    std::size_t d_model = 32;
    std::size_t heads = 2;
    std::size_t layers = 2;
    Pooling pooling = Pooling::mean;
};

/// Trainable weights of the record encoder, stored in a fixed named order.
///
/// Layout: one cross-attention block (record tokens attend to query tokens),
/// `layers` set-encoder blocks (self-attention + feed-forward, residual, no
/// positional encoding), then a two-layer head ending in a sigmoid.
struct ScorerParams {
    ScorerConfig config;
    std::vector<std::string> names;
    std::vector<Matrix> values;

    std::size_t size() const { return values.size(); }
    std::size_t scalar_count() const;
    const Matrix& at(const std::string& name) const;
    Matrix& at(const std::string& name);
};

/// One gradient matrix per parameter, in ScorerParams order.
using Gradients = std::vector<Matrix>;

Gradients zeros_like(const ScorerParams& params);

/// Deterministic initialisation: N(0,1) / sqrt(fan_in) weights, zero biases,
/// all values representable in 32-bit floats so checkpoints are lossless.
ScorerParams init_params(std::uint64_t seed, const ScorerConfig& config);
ScorerParams init_params(std::uint64_t seed, std::size_t d_model, std::size_t heads, std::size_t layers);

/// Rounds every parameter to the nearest 32-bit float.
void round_to_float(ScorerParams& params);

/// Scaled dot-product cross-attention: rows of `record_tokens` are queries,
/// rows of `query_tokens` provide keys and values. Output is T_i x d.
Matrix cross_attend(const Matrix& record_tokens, const Matrix& query_tokens, const ScorerParams& params);

/// Per-record propensities in (0, 1).
using PropensityVector = std::vector<double>;

/// Graph of one encoder forward pass recorded on a tape.
struct ScorerGraph {
    std::vector<ad::Var> params;  // leaves, ScorerParams order
    ad::Var scores;               // N x 1
};

/// Records the encoder forward pass for `context` on `tape`.
/// Throws ValidationError when embeddings are missing and ShapeError on width mismatch.
ScorerGraph build_scorer(ad::Tape& tape, const ScorerParams& params, const Context& context);

/// Same as build_scorer but reuses parameter leaves already placed on `tape`.
ad::Var build_scores(ad::Tape& tape, std::span<const ad::Var> param_vars, const ScorerConfig& config,
                     const Context& context);

PropensityVector encode_records(const Context& context, const ScorerParams& params);

// Checkpoints: "PRPL", u32 version, u32 header length, JSON header
// {d_model, heads, layers, pooling, param_order, shapes}, then little-endian
// 32-bit floats for every parameter in header order (row-major).

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ScorerParams& params);
ScorerParams decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const ScorerParams& params);
ScorerParams load_checkpoint(const std::filesystem::path& path);

}  // namespace purple
