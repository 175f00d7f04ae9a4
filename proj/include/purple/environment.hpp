#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "purple/core.hpp"
#include "purple/reward.hpp"

namespace purple {

/// Parameters of the synthetic personalization task.
struct WorldSpec {
    std::uint64_t seed = 0;
    std::size_t records = 20;  // N candidate records per user
    std::size_t topics = 4;    // D
    std::size_t k = 5;
    double gamma = 0.5;
    double lambda = 0.3;
    std::size_t embed_width = 32;
    double noise = 0.0;  // std of Gaussian reward jitter

    /// Throws ValidationError unless D >= 2, N >= K >= 1 and the ranges hold.
    void validate() const;
    nlohmann::ordered_json to_json() const;
    static WorldSpec from_json(const nlohmann::json& j);
};

struct GeneratedData {
    std::vector<DatasetExample> examples;
    std::vector<SyntheticWorld> worlds;  // parallel to examples
    nlohmann::ordered_json header;       // {"world_spec": ..., "users": n}

    std::map<std::string, SyntheticWorld> worlds_by_user() const;
};

/// Synthetic users whose records have known topic coverage, stances and conflicts.
///
/// Each user favours one topic strongly and two more to lesser degrees. Roughly 40%
/// of the pool are redundant records on the favourite topic, which is what a
/// relevance ranker picks first; the utility-optimal profile instead mixes topics
/// and avoids records with opposing stances. Pure function of (spec, users).
GeneratedData generate_dataset(const WorldSpec& spec, std::size_t users);

/// Rebuilds worlds for a dataset written by generate_dataset, using its header line.
GeneratedData regenerate_from_header(const nlohmann::json& header);

// ---------------------------------------------------------------------------
// Embedding providers.

/// Lowercased runs of letters and digits.
std::vector<std::string> embedding_tokens(std::string_view text);

struct HashEmbedding {
    Matrix tokens;            // T x d, unit-norm rows
    bool empty_text = false;  // text had no tokens; a single zero row was emitted
};

/// Feature-hashing embedder: FNV-1a(token) mixed with the table seed drives a
/// splitmix64 stream of d uniforms in [-1, 1), normalised to unit length.
HashEmbedding hash_embed(std::string_view text, std::size_t width, std::uint64_t table_seed);

/// Attaches hash embeddings to every query and record (record text = "input output").
void attach_hash_embeddings(std::vector<DatasetExample>& examples, std::size_t width, std::uint64_t table_seed);

/// Sidecar key for a query.
std::string query_embedding_key(const std::string& user_id);

/// Sidecar JSONL lines {"id": str, "vectors": [[...], ...]}; queries keyed "q:<user_id>".
void write_embeddings(std::ostream& out, const std::vector<DatasetExample>& examples);
void save_embeddings(const std::filesystem::path& path, const std::vector<DatasetExample>& examples);

/// Attaches sidecar embeddings. Throws ValidationError listing absent ids, ShapeError when
/// a width differs from `expected_width` (0 = take the file's width) or rows are ragged.
void load_embeddings(const std::filesystem::path& path, std::vector<DatasetExample>& examples,
                     std::size_t expected_width = 0);

struct EmbeddingProvider {
    enum class Mode { hash, file };
    Mode mode = Mode::hash;
    std::size_t width = 32;
    std::uint64_t table_seed = 0;
    std::filesystem::path path;

    void attach(std::vector<DatasetExample>& examples) const;
};

/// Adds deterministic Gaussian jitter (seeded by user id and profile) to another oracle.
class JitteredOracle : public RewardOracle {
  public:
    JitteredOracle(std::shared_ptr<const RewardOracle> base, double noise, std::uint64_t seed);
    double reward(const DatasetExample& example, const Profile& profile) const override;

  private:
    std::shared_ptr<const RewardOracle> base_;
    double noise_;
    std::uint64_t seed_;
};

/// Script whose reference logprobs encode the synthetic utility of every profile:
/// each reference token gets (U(P) - max_U - 1) / T, so larger utility means higher likelihood.
RewardScript script_from_worlds(const std::vector<DatasetExample>& examples,
                                const std::vector<SyntheticWorld>& worlds, std::size_t k,
                                const PromptTemplate& prompt_template = {});

}  // namespace purple
