#include "purple/core.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "purple/errors.hpp"

namespace purple {

bool Context::has_embeddings() const {
    if (!query_embeddings) return false;
    for (const auto& r : records)
        if (!r.token_embeddings) return false;
    return true;
}

std::size_t Context::embedding_width() const {
    if (query_embeddings) return static_cast<std::size_t>(query_embeddings->cols());
    for (const auto& r : records)
        if (r.token_embeddings) return static_cast<std::size_t>(r.token_embeddings->cols());
    return 0;
}

ProfileCheck validate_profile(const Profile& profile, std::size_t n) {
    std::unordered_set<std::size_t> seen;
    for (std::size_t pos = 0; pos < profile.indices.size(); ++pos) {
        const auto idx = profile.indices[pos];
        if (idx >= n) {
            return {ProfileViolation::out_of_range, "index " + std::to_string(idx) + " at position " +
                                                        std::to_string(pos) + " is out of range for " +
                                                        std::to_string(n) + " records"};
        }
        if (!seen.insert(idx).second) {
            return {ProfileViolation::duplicate, "index " + std::to_string(idx) + " appears more than once"};
        }
    }
    return {};
}

void require_valid_profile(const Profile& profile, std::size_t n) {
    auto check = validate_profile(profile, n);
    if (!check) throw ValidationError("invalid profile: " + check.message);
}

void validate_context(const Context& context) {
    if (context.records.empty()) throw ValidationError("context has an empty record list");
    std::unordered_set<std::string> ids;
    for (const auto& r : context.records) {
        if (r.id.empty()) throw ValidationError("record with empty id");
        if (!ids.insert(r.id).second) throw ValidationError("duplicate record id \"" + r.id + "\"");
    }
    const auto width = context.embedding_width();
    auto check_matrix = [&](const std::optional<Matrix>& m, const std::string& owner) {
        if (!m) return;
        if (m->rows() < 1) throw ValidationError(owner + " has no token embeddings rows");
        if (static_cast<std::size_t>(m->cols()) != width)
            throw ShapeError(owner + " embedding width " + std::to_string(m->cols()) + " != " +
                             std::to_string(width));
    };
    check_matrix(context.query_embeddings, "query");
    for (const auto& r : context.records) check_matrix(r.token_embeddings, "record \"" + r.id + "\"");
}

namespace {

// Single-pass placeholder expansion: substituted text is never rescanned.
std::string expand(const std::string& pattern,
                   const std::unordered_map<std::string_view, const std::string*>& values) {
    std::string out;
    out.reserve(pattern.size() * 2);
    std::size_t i = 0;
    while (i < pattern.size()) {
        if (pattern[i] == '{') {
            const auto close = pattern.find('}', i);
            if (close != std::string::npos) {
                const std::string_view key(pattern.data() + i + 1, close - i - 1);
                if (auto it = values.find(key); it != values.end()) {
                    out += *it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += pattern[i++];
    }
    return out;
}

}  // namespace

std::string serialize_profile(const Profile& profile, const Context& context,
                              const PromptTemplate& prompt_template) {
    require_valid_profile(profile, context.records.size());
    std::string out;
    for (auto idx : profile.indices) {
        const auto& r = context.records[idx];
        out += expand(prompt_template.record_pattern,
                      {{"input", &r.input_text}, {"output", &r.output_text}, {"id", &r.id}});
    }
    out += expand(prompt_template.query_pattern, {{"query", &context.query_text}});
    return out;
}

nlohmann::ordered_json example_to_json(const DatasetExample& example) {
    nlohmann::ordered_json j;
    j["user_id"] = example.user_id;
    j["query"] = example.context.query_text;
    j["reference"] = example.context.reference;
    auto records = nlohmann::ordered_json::array();
    for (const auto& r : example.context.records) {
        nlohmann::ordered_json jr;
        jr["id"] = r.id;
        jr["input"] = r.input_text;
        jr["output"] = r.output_text;
        records.push_back(std::move(jr));
    }
    j["records"] = std::move(records);
    return j;
}

DatasetExample example_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("expected a JSON object");
    DatasetExample ex;
    try {
        ex.user_id = j.at("user_id").get<std::string>();
        ex.context.query_text = j.at("query").get<std::string>();
        ex.context.reference = j.at("reference").get<std::string>();
        for (const auto& jr : j.at("records")) {
            Record r;
            r.id = jr.at("id").get<std::string>();
            r.input_text = jr.at("input").get<std::string>();
            r.output_text = jr.at("output").get<std::string>();
            ex.context.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what());
    }
    validate_context(ex.context);
    return ex;
}

DatasetFile read_dataset(std::istream& in) {
    DatasetFile file;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = "line " + std::to_string(line_no) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(where + e.what());
        }
        if (j.is_object() && j.contains("world_spec")) {
            file.header = std::move(j);
            continue;
        }
        try {
            file.examples.push_back(example_from_json(j));
        } catch (const ParseError& e) {
            throw ParseError(where + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
    }
    return file;
}

DatasetFile load_dataset_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset " + path.string());
    return read_dataset(in);
}

std::vector<DatasetExample> load_dataset(const std::filesystem::path& path) {
    return load_dataset_file(path).examples;
}

void write_dataset(std::ostream& out, const std::vector<DatasetExample>& examples,
                   const std::optional<nlohmann::json>& header) {
    if (header) out << header->dump() << '\n';
    for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
}

void save_dataset(const std::filesystem::path& path, const std::vector<DatasetExample>& examples,
                  const std::optional<nlohmann::json>& header) {
    std::ostringstream os;
    write_dataset(os, examples, header);
    write_file_atomically(path, os.str());
}

void write_file_atomically(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace purple
