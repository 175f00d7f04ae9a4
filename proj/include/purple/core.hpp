#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "purple/matrix.hpp"

namespace purple {

/// One history item of a user: an input/output text pair.
struct Record {
    std::string id;
    std::string input_text;
    std::string output_text;
    std::optional<Matrix> token_embeddings;  // T_i x d
};

/// A query together with the candidate records it may be personalized with.
struct Context {
    std::string query_text;
    std::optional<Matrix> query_embeddings;  // T_q x d
    std::vector<Record> records;
    std::string reference;

    std::size_t size() const { return records.size(); }
    bool has_embeddings() const;
    /// Embedding width shared by query and records; 0 when none are attached.
    std::size_t embedding_width() const;
};

/// Ordered selection of distinct record indices into Context::records.
struct Profile {
    std::vector<std::size_t> indices;

    std::size_t size() const { return indices.size(); }
    auto operator<=>(const Profile&) const = default;
};

struct DatasetExample {
    std::string user_id;
    Context context;
};

enum class ProfileViolation { none, duplicate, out_of_range };

struct ProfileCheck {
    ProfileViolation violation = ProfileViolation::none;
    std::string message;

    bool ok() const { return violation == ProfileViolation::none; }
    explicit operator bool() const { return ok(); }
};

/// Accepts iff all indices are distinct and below n. Never throws.
ProfileCheck validate_profile(const Profile& profile, std::size_t n);

/// Throws ValidationError when the profile is not valid for a pool of n records.
void require_valid_profile(const Profile& profile, std::size_t n);

/// Checks N >= 1 and unique non-empty record ids. Throws ValidationError.
void validate_context(const Context& context);

/// Rendering pattern for a profile followed by its query.
///
/// `record_pattern` is expanded once per selected record with `{input}`, `{output}`
/// and `{id}`; `query_pattern` is appended once with `{query}`. Placeholders are
/// substituted in a single left-to-right pass, so braces inside record text are
/// copied verbatim.
struct PromptTemplate {
    std::string record_pattern = "- {input} => {output}\n";
    std::string query_pattern = "\nQuery: {query}";
};

std::string serialize_profile(const Profile& profile, const Context& context,
                              const PromptTemplate& prompt_template = {});

// Dataset JSONL.
//
// Each line is {"user_id", "query", "reference", "records": [{"id", "input", "output"}]}.
// A line carrying a "world_spec" key is a provenance header and is not an example.

nlohmann::ordered_json example_to_json(const DatasetExample& example);
DatasetExample example_from_json(const nlohmann::json& j);

struct DatasetFile {
    std::optional<nlohmann::json> header;
    std::vector<DatasetExample> examples;
};

DatasetFile read_dataset(std::istream& in);
DatasetFile load_dataset_file(const std::filesystem::path& path);
std::vector<DatasetExample> load_dataset(const std::filesystem::path& path);

void write_dataset(std::ostream& out, const std::vector<DatasetExample>& examples,
                   const std::optional<nlohmann::json>& header = std::nullopt);
void save_dataset(const std::filesystem::path& path,
                  const std::vector<DatasetExample>& examples,
                  const std::optional<nlohmann::json>& header = std::nullopt);

/// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomically(const std::filesystem::path& path, const std::string& contents);

}  // namespace purple
