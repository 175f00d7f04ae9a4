#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "purple/environment.hpp"
#include "purple/scorer.hpp"

namespace purple {

struct SuiteResult {
    std::string suite;
    bool passed = true;
    nlohmann::ordered_json details;
};

/// Plackett-Luce normalisation, log-space consistency and sampler fidelity sweeps.
SuiteResult run_pl_suite(std::uint64_t seed);
/// Scorer-through-logprob gradients against central differences.
SuiteResult run_gradient_suite(std::uint64_t seed);
/// Jensen inequality on random small instances, with the constant-likelihood equality case.
SuiteResult run_elbo_suite(std::uint64_t seed);
/// Enumerated optimum versus policy and relevance baselines on a synthetic world.
/// Uses a freshly initialised scorer when `params` is empty.
SuiteResult run_regret_suite(const WorldSpec& spec, std::size_t users, const std::optional<ScorerParams>& params);

}  // namespace purple
