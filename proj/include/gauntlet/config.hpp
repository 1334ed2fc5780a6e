#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "gauntlet/attack.hpp"
#include "gauntlet/corpus.hpp"
#include "gauntlet/errors.hpp"
#include "gauntlet/fut.hpp"
#include "gauntlet/util.hpp"

namespace gauntlet {

inline constexpr const char* kProviderKeyEnv = "GAUNTLET_PROVIDER_KEY";

struct ProviderConfig {
    std::string spec = "mock:identity";  // real | replay | mock:<mode>[,reject=<p>]
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model_name = "gpt-3.5-turbo-0125";
    double temperature = 0.0;
    size_t max_inflight = 4;
    std::string key_env = kProviderKeyEnv;
    double price_in = 0.50 / 1e6;
    double price_out = 1.50 / 1e6;
};

// Everything one run needs. Flat key=value config file; every key can also be
// given as a --key flag.
struct RunConfig {
    std::string corpus_root;
    DatasetVariant dataset = DatasetVariant::original;
    FilterEndpoint filter;
    std::string attack = "llm";  // llm | dictionary
    std::string dictionary_path;
    std::string prompts_path;  // optional PromptBundle override (JSON)
    ProviderConfig provider;
    std::string output_dir = "out";
    std::string model_file;  // defaults to <output_dir>/bayes_model.json
    std::uint64_t seed = 0;
    std::optional<std::int64_t> now;  // fixed clock for reproducible runs
    // train inputs
    std::string ham_dir;
    std::string spam_dir;
    double holdout = 0.0;
    bool force = false;

    std::int64_t clock() const { return now ? *now : static_cast<std::int64_t>(std::time(nullptr)); }

    std::filesystem::path out() const { return output_dir; }
    std::filesystem::path preprocessed_dir() const { return out() / "datasets" / "preprocessed"; }
    std::filesystem::path modified_dir() const { return out() / "datasets" / "modified"; }
    std::filesystem::path cache_dir() const { return out() / ".gauntlet-cache"; }
    std::filesystem::path model_path() const {
        return model_file.empty() ? out() / "bayes_model.json" : std::filesystem::path(model_file);
    }
};

namespace detail {

inline std::string unquote(std::string_view v) {
    if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') ||
                          (v.front() == '\'' && v.back() == '\'')))
        return std::string(v.substr(1, v.size() - 2));
    return std::string(v);
}

}  // namespace detail

// "key = value" per line, '#' comments. Later assignments win.
inline std::map<std::string, std::string> parse_config_text(std::string_view text) {
    std::map<std::string, std::string> kv;
    size_t lineno = 0;
    for (const std::string& raw_line : split(text, '\n')) {
        ++lineno;
        std::string_view line = trim(raw_line);
        if (line.empty() || line.front() == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " has no '='");
        std::string key(trim(line.substr(0, eq)));
        std::string value = detail::unquote(trim(line.substr(eq + 1)));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has no key");
        kv[key] = value;
    }
    return kv;
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a number: " + v);
    }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        unsigned long long n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a count: " + v);
    }
}

}  // namespace detail

// Applies a key/value map onto a RunConfig; unknown keys are errors so typos
// do not silently configure nothing.
inline void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, v] : kv) {
        if (key == "corpus_root") cfg.corpus_root = v;
        else if (key == "dataset") cfg.dataset = variant_from_string(v);
        else if (key == "filter") cfg.filter.kind = adapter_from_string(v);
        else if (key == "spamd_addr") cfg.filter.spamd_addr = v;
        else if (key == "smtp_addr") cfg.filter.smtp_addr = v;
        else if (key == "api_base") cfg.filter.api_base = v;
        else if (key == "api_list_path") cfg.filter.api_list_path = v;
        else if (key == "api_message_path") cfg.filter.api_message_path = v;
        else if (key == "envelope_from") cfg.filter.envelope_from = v;
        else if (key == "envelope_to") cfg.filter.envelope_to = v;
        else if (key == "timeout_ms") cfg.filter.timeout_ms = static_cast<int>(detail::to_u64(key, v));
        else if (key == "max_message_bytes") cfg.filter.max_message_bytes = detail::to_u64(key, v);
        else if (key == "check_inflight") cfg.filter.max_inflight = detail::to_u64(key, v);
        else if (key == "attack") {
            if (v != "llm" && v != "dictionary") throw ConfigError("attack must be llm or dictionary");
            cfg.attack = v;
        } else if (key == "dictionary_path") cfg.dictionary_path = v;
        else if (key == "prompts_path") cfg.prompts_path = v;
        else if (key == "provider") cfg.provider.spec = v;
        else if (key == "provider_endpoint") cfg.provider.endpoint = v;
        else if (key == "model_name") cfg.provider.model_name = v;
        else if (key == "temperature") cfg.provider.temperature = detail::to_double(key, v);
        else if (key == "max_inflight") cfg.provider.max_inflight = detail::to_u64(key, v);
        else if (key == "key_env") cfg.provider.key_env = v;
        else if (key == "price_in") cfg.provider.price_in = detail::to_double(key, v);
        else if (key == "price_out") cfg.provider.price_out = detail::to_double(key, v);
        else if (key == "output_dir") cfg.output_dir = v;
        else if (key == "model_file") cfg.model_file = v;
        else if (key == "seed") cfg.seed = detail::to_u64(key, v);
        else if (key == "now") {
            try {
                cfg.now = parse_iso8601(v);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
        else if (key == "ham_dir") cfg.ham_dir = v;
        else if (key == "spam_dir") cfg.spam_dir = v;
        else if (key == "holdout") cfg.holdout = detail::to_double(key, v);
        else if (key == "force") cfg.force = (v == "true" || v == "1" || v == "yes");
        else throw ConfigError("unknown config key: " + key);
    }
}

inline RunConfig load_config(const std::filesystem::path& path) {
    RunConfig cfg;
    apply_config(cfg, parse_config_text(read_file(path)));
    return cfg;
}

// Prompt override file: JSON object with p1_template/p2/p3.
inline PromptBundle load_prompts(const RunConfig& cfg) {
    PromptBundle prompts;
    if (!cfg.prompts_path.empty()) {
        nlohmann::json j = nlohmann::json::parse(read_file(cfg.prompts_path), nullptr, false);
        if (j.is_discarded()) throw ConfigError("prompts file is not JSON: " + cfg.prompts_path);
        prompts.p1_template = j.value("p1_template", prompts.p1_template);
        prompts.p2 = j.value("p2", prompts.p2);
        prompts.p3 = j.value("p3", prompts.p3);
    }
    prompts.validate();
    return prompts;
}

// HTTP-backed chat-completions provider; the key comes from the configured
// environment variable and never from the config file.
class HttpProvider : public Provider {
  public:
    explicit HttpProvider(const ProviderConfig& cfg, int timeout_ms = 30000) : cfg_(cfg) {
        size_t scheme = cfg.endpoint.find("://");
        if (scheme == std::string::npos)
            throw ConfigError("provider endpoint must be a URL: " + cfg.endpoint);
        size_t path_start = cfg.endpoint.find('/', scheme + 3);
        base_ = path_start == std::string::npos ? cfg.endpoint : cfg.endpoint.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : cfg.endpoint.substr(path_start);
        timeout_ms_ = timeout_ms;
        if (const char* key = std::getenv(cfg.key_env.c_str())) key_ = key;
    }

    nlohmann::json call(const ProviderRequest& req) override {
        httplib::Client client(base_);
        client.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
        client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
        httplib::Headers headers;
        if (!key_.empty()) headers.emplace("Authorization", "Bearer " + key_);
        httplib::Result res =
            client.Post(path_, headers, request_to_json(req).dump(), "application/json");
        if (!res) throw TransportError("provider: " + httplib::to_string(res.error()));
        if (res->status == 429 || res->status >= 500)
            throw TransportError("provider: HTTP " + std::to_string(res->status));
        if (res->status < 200 || res->status >= 300)
            throw ProtocolError("provider: HTTP " + std::to_string(res->status) + ": " + res->body);
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded()) throw ProtocolError("provider: response is not JSON");
        return j;
    }

  private:
    ProviderConfig cfg_;
    std::string base_;
    std::string path_;
    std::string key_;
    int timeout_ms_;
};

// "real" | "replay" | "mock:<mode>[,reject=<p>]"
inline std::unique_ptr<Provider> make_provider(const RunConfig& cfg) {
    const std::string& spec = cfg.provider.spec;
    if (spec == "real") return std::make_unique<HttpProvider>(cfg.provider, cfg.filter.timeout_ms);
    if (spec == "replay") return std::make_unique<ReplayProvider>();
    if (spec.rfind("mock:", 0) == 0) {
        std::string rest = spec.substr(5);
        double reject_rate = -1.0;
        size_t comma = rest.find(',');
        std::string mode = rest.substr(0, comma);
        if (comma != std::string::npos) {
            std::string opt = rest.substr(comma + 1);
            if (opt.rfind("reject=", 0) != 0)
                throw ConfigError("unknown mock option: " + opt);
            reject_rate = detail::to_double("provider", opt.substr(7));
        }
        MockMode m;
        if (mode == "identity") m = MockMode::identity;
        else if (mode == "reject-all") m = MockMode::reject_all;
        else if (mode == "shuffle-synonyms") m = MockMode::shuffle_synonyms;
        else throw ConfigError("unknown mock mode: " + mode);
        return std::make_unique<MockProvider>(m, cfg.seed, reject_rate);
    }
    throw ConfigError("unknown provider spec: " + spec);
}

}  // namespace gauntlet
