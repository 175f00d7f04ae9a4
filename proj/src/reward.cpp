#include "purple/reward.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "httplib.h"

#include "purple/errors.hpp"
#include "purple/evalkit.hpp"

namespace purple {

void SyntheticWorld::validate() const {
    const auto n = coverage.size();
    const auto d = weights.size();
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("synthetic world gamma must lie in (0, 1]");
    if (!(lambda >= 0.0)) throw ValidationError("synthetic world lambda must be >= 0");
    for (double w : weights)
        if (!(w >= 0.0)) throw ValidationError("synthetic world topic weights must be >= 0");
    for (const auto& row : coverage) {
        if (row.size() != d) throw ValidationError("coverage vector width differs from topic count");
        for (double c : row)
            if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("coverage entries must lie in [0, 1]");
    }
    if (conflict.size() != n) throw ValidationError("conflict matrix size differs from record count");
    for (std::size_t i = 0; i < n; ++i) {
        if (conflict[i].size() != n) throw ValidationError("conflict matrix is not square");
        if (conflict[i][i] != 0) throw ValidationError("conflict matrix diagonal must be zero");
        for (std::size_t j = 0; j < n; ++j)
            if (conflict[i][j] != conflict[j][i]) throw ValidationError("conflict matrix must be symmetric");
    }
}

double synthetic_utility(const SyntheticWorld& world, const Profile& profile) {
    require_valid_profile(profile, world.records());
    double utility = 0.0;
    for (std::size_t d = 0; d < world.dims(); ++d) {
        double best = 0.0;
        double discount = 1.0;
        for (auto idx : profile.indices) {
            best = std::max(best, discount * world.coverage[idx][d]);
            discount *= world.gamma;
        }
        utility += world.weights[d] * best;
    }
    double conflicts = 0.0;
    for (std::size_t a = 0; a < profile.size(); ++a)
        for (std::size_t b = a + 1; b < profile.size(); ++b)
            conflicts += world.conflict[profile.indices[a]][profile.indices[b]];
    return utility - world.lambda * conflicts;
}

SyntheticOracle::SyntheticOracle(std::map<std::string, SyntheticWorld> worlds) : worlds_(std::move(worlds)) {
    for (const auto& [id, w] : worlds_) w.validate();
}

const SyntheticWorld& SyntheticOracle::world(const std::string& user_id) const {
    auto it = worlds_.find(user_id);
    if (it == worlds_.end()) throw ValidationError("no synthetic world for user \"" + user_id + "\"");
    return it->second;
}

double SyntheticOracle::reward(const DatasetExample& example, const Profile& profile) const {
    const auto& w = world(example.user_id);
    if (w.records() != example.context.size())
        throw ShapeError("synthetic world for \"" + example.user_id + "\" has " + std::to_string(w.records()) +
                         " records, context has " + std::to_string(example.context.size()));
    return synthetic_utility(w, profile);
}

// ---------------------------------------------------------------------------

ScoreResponse score_response_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("score response is not a JSON object");
    ScoreResponse r;
    try {
        r.tokens = j.at("tokens").get<std::vector<std::string>>();
        if (!j.contains("token_logprobs") || j["token_logprobs"].is_null())
            throw ConfigError("reward service returned no token_logprobs; enable echoed logprobs on the service");
        for (const auto& v : j["token_logprobs"]) {
            if (v.is_null())
                r.token_logprobs.emplace_back(std::nullopt);
            else
                r.token_logprobs.emplace_back(v.get<double>());
        }
        r.reference_start = j.at("reference_start").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed score response: ") + e.what());
    }
    return r;
}

nlohmann::json score_response_to_json(const ScoreResponse& r) {
    nlohmann::json j;
    j["tokens"] = r.tokens;
    auto lps = nlohmann::json::array();
    for (const auto& v : r.token_logprobs) lps.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    j["token_logprobs"] = std::move(lps);
    j["reference_start"] = r.reference_start;
    return j;
}

double reference_loglik(const ScoreResponse& response, const RewardRequest& request, bool length_normalize) {
    if (response.token_logprobs.size() != response.tokens.size())
        throw ConfigError("reward service returned " + std::to_string(response.token_logprobs.size()) +
                          " logprobs for " + std::to_string(response.tokens.size()) + " tokens");
    std::size_t offset = 0;
    std::size_t first = response.tokens.size();
    for (std::size_t i = 0; i < response.tokens.size(); ++i) {
        if (offset == response.reference_start) {
            first = i;
            break;
        }
        offset += response.tokens[i].size();
        if (offset > response.reference_start) break;
    }
    if (first == response.tokens.size())
        throw AlignmentError("no token boundary at reference offset " + std::to_string(response.reference_start));
    std::string suffix;
    for (std::size_t i = first; i < response.tokens.size(); ++i) suffix += response.tokens[i];
    if (suffix != request.reference)
        throw AlignmentError("echoed text after offset " + std::to_string(response.reference_start) +
                             " does not match the reference");
    double total = 0.0;
    for (std::size_t i = first; i < response.tokens.size(); ++i) {
        const auto& lp = response.token_logprobs[i];
        if (!lp) throw ConfigError("reward service omitted the logprob of reference token " + std::to_string(i));
        if (!(*lp <= 0.0)) throw ConfigError("reward service returned a positive or NaN logprob");
        total += *lp;
    }
    if (length_normalize) total /= static_cast<double>(response.tokens.size() - first);
    return total;
}

std::string resolve_endpoint(const std::string& configured) {
    if (const char* env = std::getenv("PURPLE_REWARD_ENDPOINT"); env != nullptr && *env != '\0') return env;
    return configured;
}

namespace {

struct ParsedEndpoint {
    std::string origin;
    std::string base_path;
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
    if (endpoint.empty()) throw ConfigError("no reward endpoint configured (set PURPLE_REWARD_ENDPOINT)");
    const auto scheme = endpoint.find("://");
    const auto host_at = scheme == std::string::npos ? 0 : scheme + 3;
    const auto slash = endpoint.find('/', host_at);
    ParsedEndpoint p;
    p.origin = endpoint.substr(0, slash);
    if (scheme == std::string::npos) p.origin = "http://" + p.origin;
    if (slash != std::string::npos) p.base_path = endpoint.substr(slash);
    while (!p.base_path.empty() && p.base_path.back() == '/') p.base_path.pop_back();
    return p;
}

}  // namespace

double llm_loglik_reward(const RewardRequest& request, const HttpRewardOptions& options) {
    if (request.reference.empty()) throw ValidationError("reward request has an empty reference");
    const auto ep = parse_endpoint(options.endpoint);
    const auto body = nlohmann::json{{"prompt", request.prompt}, {"reference", request.reference}}.dump();
    std::string last_error = "no attempt made";
    const int attempts = std::max(1, options.attempts);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(options.backoff * (1 << (attempt - 1)));
        httplib::Client client(ep.origin);
        client.set_connection_timeout(options.timeout);
        client.set_read_timeout(options.timeout);
        client.set_write_timeout(options.timeout);
        auto res = client.Post(ep.base_path + "/score", body, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw ConfigError("reward service answered HTTP " + std::to_string(res->status) + ": " + res->body);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(std::string("reward service sent invalid JSON: ") + e.what());
        }
        return reference_loglik(score_response_from_json(j), request, options.length_normalize);
    }
    throw TransportError("reward service at " + options.endpoint + " unreachable after " + std::to_string(attempts) +
                         " attempts: " + last_error);
}

double RewardCache::get_or_compute(const std::string& prompt, const std::string& reference,
                                   const std::function<double()>& compute) {
    const std::pair<std::uint64_t, std::uint64_t> key{std::hash<std::string>{}(prompt),
                                                      std::hash<std::string>{}(reference)};
    {
        std::lock_guard lock(mu_);
        if (auto it = values_.find(key); it != values_.end()) {
            ++hits_;
            return it->second;
        }
    }
    const double value = compute();
    std::lock_guard lock(mu_);
    return values_.try_emplace(key, value).first->second;
}

std::size_t RewardCache::size() const {
    std::lock_guard lock(mu_);
    return values_.size();
}

LlmRewardOracle::LlmRewardOracle(HttpRewardOptions options, PromptTemplate prompt_template)
    : options_(std::move(options)), template_(std::move(prompt_template)) {
    options_.endpoint = resolve_endpoint(options_.endpoint);
}

double LlmRewardOracle::reward(const DatasetExample& example, const Profile& profile) const {
    RewardRequest req{serialize_profile(profile, example.context, template_), example.context.reference};
    if (req.reference.empty()) throw ValidationError("example \"" + example.user_id + "\" has an empty reference");
    return cache_.get_or_compute(req.prompt, req.reference, [&] { return llm_loglik_reward(req, options_); });
}

// ---------------------------------------------------------------------------

std::vector<std::string> scoring_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto start = i;
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        out.push_back(text.substr(start, i - start));
    }
    return out;
}

void RewardScript::add(std::string prompt, std::string reference, std::vector<double> reference_logprobs) {
    const auto n = scoring_tokens(reference).size();
    if (reference_logprobs.size() != n)
        throw ValidationError("script entry has " + std::to_string(reference_logprobs.size()) +
                              " logprobs for a reference of " + std::to_string(n) + " tokens");
    entries[{std::move(prompt), std::move(reference)}] = std::move(reference_logprobs);
}

std::optional<std::vector<double>> RewardScript::lookup(const std::string& prompt, const std::string& reference) const {
    if (auto it = entries.find({prompt, reference}); it != entries.end()) return it->second;
    if (default_logprob) return std::vector<double>(scoring_tokens(reference).size(), *default_logprob);
    return std::nullopt;
}

std::optional<ScoreResponse> RewardScript::respond(const std::string& prompt, const std::string& reference) const {
    auto ref_lps = lookup(prompt, reference);
    if (!ref_lps) return std::nullopt;
    ScoreResponse r;
    r.tokens = scoring_tokens(prompt);
    for (std::size_t i = 0; i < r.tokens.size(); ++i)
        r.token_logprobs.emplace_back(i == 0 ? std::nullopt : std::optional<double>(prompt_token_logprob));
    r.reference_start = prompt.size();
    auto ref_tokens = scoring_tokens(reference);
    for (std::size_t i = 0; i < ref_tokens.size(); ++i) {
        r.tokens.push_back(std::move(ref_tokens[i]));
        r.token_logprobs.emplace_back((*ref_lps)[i]);
    }
    return r;
}

RewardScript load_reward_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open reward script " + path.string());
    RewardScript script;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("default_logprob") || j.contains("prompt_token_logprob")) {
                if (j.contains("default_logprob") && !j["default_logprob"].is_null())
                    script.default_logprob = j["default_logprob"].get<double>();
                script.prompt_token_logprob = j.value("prompt_token_logprob", script.prompt_token_logprob);
                continue;
            }
            script.add(j.at("prompt").get<std::string>(), j.at("reference").get<std::string>(),
                       j.at("reference_logprobs").get<std::vector<double>>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return script;
}

void save_reward_script(const std::filesystem::path& path, const RewardScript& script) {
    std::ostringstream os;
    nlohmann::json settings;
    settings["default_logprob"] = script.default_logprob ? nlohmann::json(*script.default_logprob) : nlohmann::json(nullptr);
    settings["prompt_token_logprob"] = script.prompt_token_logprob;
    os << settings.dump() << '\n';
    for (const auto& [key, lps] : script.entries) {
        nlohmann::ordered_json j;
        j["prompt"] = key.first;
        j["reference"] = key.second;
        j["reference_logprobs"] = lps;
        os << j.dump() << '\n';
    }
    write_file_atomically(path, os.str());
}

ScriptedOracle::ScriptedOracle(std::shared_ptr<const RewardScript> script, PromptTemplate prompt_template,
                               bool length_normalize)
    : script_(std::move(script)), template_(std::move(prompt_template)), length_normalize_(length_normalize) {}

double ScriptedOracle::reward(const DatasetExample& example, const Profile& profile) const {
    RewardRequest req{serialize_profile(profile, example.context, template_), example.context.reference};
    if (req.reference.empty()) throw ValidationError("example \"" + example.user_id + "\" has an empty reference");
    auto response = script_->respond(req.prompt, req.reference);
    if (!response) throw ConfigError("no scripted score for this prompt of user \"" + example.user_id + "\"");
    return reference_loglik(*response, req, length_normalize_);
}

struct MockRewardServer::Impl {
    httplib::Server server;
};

MockRewardServer::MockRewardServer(std::shared_ptr<const RewardScript> script)
    : impl_(std::make_unique<Impl>()), script_(std::move(script)) {
    impl_->server.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
        ++requests_;
        if (failures_left_.load() > 0) {
            --failures_left_;
            res.status = failure_status_.load();
            res.set_content("{\"error\": \"injected failure\"}", "application/json");
            return;
        }
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
            const auto prompt = body.at("prompt").get<std::string>();
            const auto reference = body.at("reference").get<std::string>();
            auto response = script_->respond(prompt, reference);
            if (!response) {
                res.status = 404;
                res.set_content("{\"error\": \"prompt not scripted\"}", "application/json");
                return;
            }
            auto j = score_response_to_json(*response);
            if (omit_logprobs_.load()) j.erase("token_logprobs");
            res.set_content(j.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        }
    });
}

MockRewardServer::~MockRewardServer() { stop(); }

int MockRewardServer::start(const std::string& host, int port) {
    host_ = host;
    port_ = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw TransportError("mock reward server cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port_;
}

void MockRewardServer::run(const std::string& host, int port) {
    host_ = host;
    port_ = port;
    if (!impl_->server.listen(host, port)) throw TransportError("mock reward server cannot listen on " + endpoint());
}

void MockRewardServer::stop() {
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

std::string MockRewardServer::endpoint() const { return "http://" + host_ + ":" + std::to_string(port_); }

void MockRewardServer::fail_next(int count, int status) {
    failure_status_ = status;
    failures_left_ = count;
}

// ---------------------------------------------------------------------------

MetricKind metric_kind_from_name(const std::string& name) {
    if (name == "accuracy") return MetricKind::accuracy;
    if (name == "neg_mae") return MetricKind::neg_mae;
    if (name == "rouge1") return MetricKind::rouge1;
    throw ValidationError("unknown metric \"" + name + "\" (expected accuracy, neg_mae or rouge1)");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& text) {
    const auto t = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
        throw ParseError("cannot parse \"" + text + "\" as a number");
    return v;
}

}  // namespace

double metric_reward(MetricKind metric, const std::string& generated, const std::string& reference) {
    switch (metric) {
        case MetricKind::accuracy: return trim(generated) == trim(reference) ? 1.0 : 0.0;
        case MetricKind::neg_mae: return -std::abs(parse_number(generated) - parse_number(reference));
        case MetricKind::rouge1: return rouge1(generated, reference);
    }
    return 0.0;
}

}  // namespace purple
