#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "purple/environment.hpp"
#include "purple/scorer.hpp"
#include "purple/trainer.hpp"

namespace purple {

/// Everything a CLI run can be configured with. Config files hold `key = value`
/// lines (TOML-style: `#` comments, optional quotes, `[section]` headers are
/// accepted and ignored); command-line flags are applied afterwards and win.
struct RunConfig {
    TrainConfig train;
    WorldSpec world;
    ScorerConfig scorer;
    EmbeddingProvider embedding;
    std::string reward = "synthetic";  // synthetic | http | table
    std::string reward_endpoint;
    std::filesystem::path reward_table;  // scripted scores evaluated in-process (reward = table)
    bool length_normalize = false;

    /// Applies one setting; `seed` and `k` update both the training and world settings.
    /// Throws ParseError on unknown keys or malformed values.
    void set(const std::string& key, const std::string& value);
};

/// Ordered key/value pairs from a TOML-style file.
std::map<std::string, std::string> parse_key_values(std::istream& in);

RunConfig load_run_config(const std::filesystem::path& path);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

}  // namespace purple
