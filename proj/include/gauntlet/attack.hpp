#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "gauntlet/email.hpp"
#include "gauntlet/errors.hpp"
#include "gauntlet/eval.hpp"
#include "gauntlet/util.hpp"

namespace gauntlet {

// --- dictionary replacement attack ---------------------------------------------

// Ordered (phrase, replacement) list; matching is case-insensitive and
// whole-word, with multi-word phrases taking precedence over their prefixes.
struct SpamDictionary {
    struct Entry {
        std::string phrase;       // lowercased, single spaces between words
        std::string replacement;
    };
    std::vector<Entry> entries;

    static SpamDictionary from_entries(std::vector<Entry> raw) {
        SpamDictionary dict;
        for (auto& e : raw) {
            e.phrase = to_lower(trim(e.phrase));
            if (e.phrase.empty()) throw ConfigError("dictionary phrase must be non-empty");
            for (const auto& existing : dict.entries)
                if (existing.phrase == e.phrase)
                    throw ConfigError("duplicate dictionary phrase: " + e.phrase);
            dict.entries.push_back(std::move(e));
        }
        // longest-match order: more words first, then longer, then lexicographic
        std::stable_sort(dict.entries.begin(), dict.entries.end(),
                         [](const Entry& a, const Entry& b) {
                             size_t wa = std::count(a.phrase.begin(), a.phrase.end(), ' ');
                             size_t wb = std::count(b.phrase.begin(), b.phrase.end(), ' ');
                             if (wa != wb) return wa > wb;
                             if (a.phrase.size() != b.phrase.size())
                                 return a.phrase.size() > b.phrase.size();
                             return a.phrase < b.phrase;
                         });
        return dict;
    }

    // CSV: "phrase,replacement" per line, '#' comment lines, UTF-8.
    static SpamDictionary from_csv(std::string_view csv) {
        std::vector<Entry> raw;
        for (const std::string& line : split(csv, '\n')) {
            std::string_view t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            size_t comma = t.find(',');
            if (comma == std::string_view::npos)
                throw ConfigError("dictionary line without comma: " + std::string(t));
            raw.push_back({std::string(trim(t.substr(0, comma))),
                           std::string(trim(t.substr(comma + 1)))});
        }
        return from_entries(std::move(raw));
    }

    static SpamDictionary from_file(const std::filesystem::path& p) {
        return from_csv(read_file(p));
    }
};

namespace detail {

inline bool phrase_matches_at(std::string_view body, size_t pos, std::string_view phrase) {
    if (pos + phrase.size() > body.size()) return false;
    for (size_t k = 0; k < phrase.size(); ++k)
        if (ascii_lower(body[pos + k]) != phrase[k]) return false;
    size_t end = pos + phrase.size();
    return end == body.size() || !is_ascii_alnum(body[end]);
}

}  // namespace detail

// Longest-match, left-to-right, non-overlapping whole-word replacement. A match
// starting with an uppercase letter gets its replacement's first letter
// uppercased. Returns the rewritten body and the replacement count.
inline std::pair<std::string, size_t> dictionary_attack(std::string_view body,
                                                        const SpamDictionary& dict) {
    if (dict.entries.empty()) return {std::string(body), 0};
    // bucket by first letter so each word start only scans plausible phrases
    std::map<char, std::vector<const SpamDictionary::Entry*>> by_first;
    for (const auto& e : dict.entries) by_first[e.phrase.front()].push_back(&e);

    std::string out;
    out.reserve(body.size());
    size_t count = 0;
    size_t i = 0;
    while (i < body.size()) {
        bool word_start = is_ascii_alnum(body[i]) && (i == 0 || !is_ascii_alnum(body[i - 1]));
        if (word_start) {
            const SpamDictionary::Entry* hit = nullptr;
            if (auto it = by_first.find(ascii_lower(body[i])); it != by_first.end()) {
                for (const auto* e : it->second) {
                    if (detail::phrase_matches_at(body, i, e->phrase)) {
                        hit = e;
                        break;
                    }
                }
            }
            if (hit) {
                std::string repl = hit->replacement;
                if (!repl.empty() && body[i] >= 'A' && body[i] <= 'Z' && is_ascii_alpha(repl[0]))
                    repl[0] = static_cast<char>(repl[0] - 'a' + 'A');
                out += repl;
                i += hit->phrase.size();
                ++count;
                continue;
            }
        }
        out.push_back(body[i]);
        ++i;
    }
    return {std::move(out), count};
}

// --- prompts and provider request ------------------------------------------------

inline constexpr std::string_view kBodyPlaceholder = "{{body}}";

// The three-prompt protocol: two system prompts prime the model with the body
// and the answer format, one user prompt asks for the rephrasing.
struct PromptBundle {
    std::string p1_template =
        "Keep in mind the following text I wrote: {{body}}";
    std::string p2 =
        "Give your answer as a JSON object, only using the fields defined by the "
        "print_result function. I only need the response, no additional text. Don't "
        "generate a subject line. Instead of using placeholders, just leave out the "
        "placeholder brackets. You're allowed to use line breaks in your answer. "
        "Preserve all links.";
    std::string p3 =
        "Please rephrase the previous content to be less aggressive and replace "
        "spam-like words and formulations.";

    void validate() const {
        size_t first = p1_template.find(kBodyPlaceholder);
        if (first == std::string::npos)
            throw ConfigError("p1_template is missing the {{body}} placeholder");
        if (p1_template.find(kBodyPlaceholder, first + 1) != std::string::npos)
            throw ConfigError("p1_template must contain {{body}} exactly once");
    }
};

struct ChatMessage {
    std::string role;  // "system" or "user"
    std::string content;
};

struct ProviderRequest {
    std::vector<ChatMessage> messages;  // P1 filled, P2, then P3
    std::string model_name;
    double temperature = 0.0;
    std::string body;  // original body, carried for mocks and cache keys
};

inline nlohmann::json print_result_schema() {
    return {
        {"type", "function"},
        {"function",
         {{"name", "print_result"},
          {"description", "Report the outcome of the rephrasing request."},
          {"parameters",
           {{"type", "object"},
            {"properties",
             {{"is_success",
               {{"type", "boolean"},
                {"description",
                 "True when a rephrased body was produced, false when the request "
                 "could not be fulfilled."}}},
              {"failed-description",
               {{"type", "string"},
                {"description", "Why the request could not be fulfilled."}}},
              {"failed-keyword",
               {{"type", "string"},
                {"description",
                 "One keyword naming the main reason the request could not be "
                 "fulfilled."}}},
              {"body",
               {{"type", "string"},
                {"description",
                 "The rephrased text when is_success is true, empty otherwise."}}}}},
            {"required", nlohmann::json::array({"is_success"})}}}}},
    };
}

inline ProviderRequest build_request(std::string_view body, const PromptBundle& prompts,
                                     std::string_view model_name, double temperature) {
    if (body.empty()) throw BodyEmptyError();
    prompts.validate();
    std::string p1 = prompts.p1_template;
    p1.replace(p1.find(kBodyPlaceholder), kBodyPlaceholder.size(), body);
    ProviderRequest req;
    req.messages = {{"system", std::move(p1)}, {"system", prompts.p2}, {"user", prompts.p3}};
    req.model_name = std::string(model_name);
    req.temperature = temperature;
    req.body = std::string(body);
    return req;
}

// Chat-completions style payload; identical requests serialize identically.
inline nlohmann::json request_to_json(const ProviderRequest& req) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : req.messages)
        messages.push_back({{"role", m.role}, {"content", m.content}});
    return {
        {"model", req.model_name},
        {"temperature", req.temperature},
        {"messages", std::move(messages)},
        {"tools", nlohmann::json::array({print_result_schema()})},
        {"tool_choice", {{"type", "function"}, {"function", {{"name", "print_result"}}}}},
    };
}

// --- outcomes ----------------------------------------------------------------------

// Every provider payload maps to exactly one of these.
struct RephraseOutcome {
    enum class Kind { success, rejected, failed };
    Kind kind = Kind::failed;
    std::string body;         // success
    std::string keyword;      // rejected
    std::string description;  // rejected
    std::string reason;       // failed

    static RephraseOutcome success(std::string new_body) {
        if (new_body.empty()) throw BodyEmptyError();
        RephraseOutcome o;
        o.kind = Kind::success;
        o.body = std::move(new_body);
        return o;
    }
    static RephraseOutcome rejected(std::string kw, std::string desc) {
        RephraseOutcome o;
        o.kind = Kind::rejected;
        o.keyword = kw.empty() ? "unspecified" : std::move(kw);
        o.description = std::move(desc);
        return o;
    }
    static RephraseOutcome failed(std::string why) {
        RephraseOutcome o;
        o.kind = Kind::failed;
        o.reason = std::move(why);
        return o;
    }
};

// Maps a chat-completion response to an outcome. Never throws: refusals
// without a function call become Rejected("refusal"), anything unusable
// becomes Failed(parse...).
inline RephraseOutcome parse_outcome(const nlohmann::json& response) {
    try {
        if (!response.contains("choices") || !response["choices"].is_array() ||
            response["choices"].empty())
            return RephraseOutcome::failed("parse: response has no choices");
        const auto& message = response["choices"][0].at("message");
        std::string args_str;
        if (message.contains("tool_calls") && message["tool_calls"].is_array() &&
            !message["tool_calls"].empty()) {
            args_str = message["tool_calls"][0].at("function").at("arguments").get<std::string>();
        } else if (message.contains("function_call")) {
            args_str = message["function_call"].at("arguments").get<std::string>();
        } else {
            std::string content =
                message.contains("content") && message["content"].is_string()
                    ? message["content"].get<std::string>()
                    : std::string();
            if (!content.empty()) return RephraseOutcome::rejected("refusal", content);
            return RephraseOutcome::failed("parse: no function call in response");
        }
        nlohmann::json args = nlohmann::json::parse(args_str, nullptr, false);
        if (args.is_discarded() || !args.is_object())
            return RephraseOutcome::failed("parse: function arguments are not a JSON object");
        if (!args.contains("is_success") || !args["is_success"].is_boolean())
            return RephraseOutcome::failed("parse: is_success missing or not boolean");
        if (args["is_success"].get<bool>()) {
            std::string body = args.value("body", std::string());
            if (body.empty()) return RephraseOutcome::failed("parse: empty body on success");
            return RephraseOutcome::success(std::move(body));
        }
        return RephraseOutcome::rejected(std::string(trim(args.value("failed-keyword", std::string()))),
                                         args.value("failed-description", std::string()));
    } catch (const nlohmann::json::exception& e) {
        return RephraseOutcome::failed(std::string("parse: ") + e.what());
    }
}

// --- providers ---------------------------------------------------------------------

class Provider {
  public:
    virtual ~Provider() = default;
    // Returns the raw response payload; throws TransportError on retryable
    // failures and ProtocolError on malformed responses.
    virtual nlohmann::json call(const ProviderRequest& req) = 0;
};

enum class MockMode { identity, reject_all, shuffle_synonyms };

// Deterministic offline provider. Decisions are seeded per body so results do
// not depend on request order.
class MockProvider : public Provider {
  public:
    MockProvider(MockMode mode, std::uint64_t seed, double reject_rate = -1.0)
        : mode_(mode), seed_(seed),
          reject_rate_(reject_rate >= 0.0 ? reject_rate
                                          : (mode == MockMode::reject_all ? 1.0 : 0.0)) {}

    nlohmann::json call(const ProviderRequest& req) override {
        std::uint64_t mix = fnv1a64(req.body) ^ (seed_ * 0x9E3779B97F4A7C15ULL);
        std::mt19937_64 rng(mix);
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        nlohmann::json args;
        if (uniform(rng) < reject_rate_) {
            static const char* keywords[] = {"spam",  "phishing",   "scam",      "deception",
                                             "fraud", "misleading", "promotion"};
            args = {{"is_success", false},
                    {"failed-keyword", keywords[rng() % std::size(keywords)]},
                    {"failed-description", "mock provider declined this request"}};
        } else {
            std::string new_body =
                mode_ == MockMode::shuffle_synonyms ? shuffle_synonyms(req.body, rng) : req.body;
            args = {{"is_success", true}, {"body", new_body}};
        }
        std::uint64_t prompt_units = 0;
        for (const auto& m : req.messages) prompt_units += m.content.size();
        prompt_units = prompt_units / 4 + 1;
        std::uint64_t completion_units = args.dump().size() / 4 + 1;
        return {
            {"choices",
             nlohmann::json::array(
                 {{{"finish_reason", "tool_calls"},
                   {"index", 0},
                   {"message",
                    {{"role", "assistant"},
                     {"tool_calls",
                      nlohmann::json::array(
                          {{{"id", "call_" + to_hex16(mix)},
                            {"type", "function"},
                            {"function",
                             {{"name", "print_result"}, {"arguments", args.dump()}}}}})}}}}})},
            {"model", "mock"},
            {"usage", {{"prompt_tokens", prompt_units}, {"completion_tokens", completion_units}}},
        };
    }

  private:
    // Word-level synonym swaps; chunks that look like links or addresses are
    // left alone so the mock honors the preserve-links instruction.
    static std::string shuffle_synonyms(std::string_view body, std::mt19937_64& rng) {
        static const std::map<std::string, std::vector<std::string>> synonyms = {
            {"free", {"complimentary", "at no charge"}},
            {"money", {"funds", "capital"}},
            {"cash", {"funds", "payment"}},
            {"now", {"today", "promptly"}},
            {"buy", {"purchase", "acquire"}},
            {"cheap", {"affordable", "economical"}},
            {"win", {"receive", "obtain"}},
            {"winner", {"recipient", "selected member"}},
            {"offer", {"proposal", "opportunity"}},
            {"click", {"visit", "follow"}},
            {"guarantee", {"assurance", "commitment"}},
            {"guaranteed", {"assured", "certain"}},
            {"urgent", {"timely", "important"}},
            {"limited", {"select", "exclusive"}},
            {"deal", {"arrangement", "option"}},
            {"sale", {"promotion", "listing"}},
            {"credit", {"financing", "account"}},
            {"loan", {"financing", "advance"}},
            {"prize", {"reward", "gift"}},
            {"act", {"respond", "reply"}},
        };
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        std::string out;
        out.reserve(body.size());
        size_t i = 0;
        while (i < body.size()) {
            if (body[i] == ' ' || body[i] == '\t' || body[i] == '\r' || body[i] == '\n') {
                out.push_back(body[i]);
                ++i;
                continue;
            }
            size_t b = i;
            while (i < body.size() && body[i] != ' ' && body[i] != '\t' && body[i] != '\r' &&
                   body[i] != '\n')
                ++i;
            std::string_view chunk = body.substr(b, i - b);
            if (chunk.find("://") != std::string_view::npos ||
                chunk.find('@') != std::string_view::npos || chunk.rfind("www.", 0) == 0) {
                out.append(chunk);
                continue;
            }
            size_t cb = 0, ce = chunk.size();
            while (cb < ce && !is_ascii_alnum(chunk[cb])) ++cb;
            while (ce > cb && !is_ascii_alnum(chunk[ce - 1])) --ce;
            std::string core = to_lower(chunk.substr(cb, ce - cb));
            auto it = synonyms.find(core);
            if (it == synonyms.end() || uniform(rng) < 0.15) {
                out.append(chunk);
                continue;
            }
            std::string repl = it->second[rng() % it->second.size()];
            if (cb < ce && chunk[cb] >= 'A' && chunk[cb] <= 'Z' && is_ascii_alpha(repl[0]))
                repl[0] = static_cast<char>(repl[0] - 'a' + 'A');
            out.append(chunk.substr(0, cb));
            out += repl;
            out.append(chunk.substr(ce));
        }
        return out;
    }

    MockMode mode_;
    std::uint64_t seed_;
    double reject_rate_;
};

// Cache-only provider; any actual call means the cache was incomplete.
class ReplayProvider : public Provider {
  public:
    nlohmann::json call(const ProviderRequest&) override {
        throw TransportError("replay provider: response not in cache");
    }
};

// --- response cache ------------------------------------------------------------------

inline std::string cache_key(const ProviderRequest& req) {
    return to_hex16(fnv1a64(request_to_json(req).dump()));
}

// Content-addressed outcome store under .gauntlet-cache/; only settled
// outcomes (success/rejected) are cached, failures are retried next run.
class ResponseCache {
  public:
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    std::optional<RephraseOutcome> lookup(const std::string& key) const {
        std::lock_guard<std::mutex> lock(mu_);
        std::filesystem::path p = dir_ / (key + ".json");
        if (!std::filesystem::exists(p)) return std::nullopt;
        nlohmann::json j = nlohmann::json::parse(read_file(p), nullptr, false);
        if (j.is_discarded() || !j.contains("outcome")) return std::nullopt;
        const auto& o = j["outcome"];
        std::string kind = o.value("kind", std::string());
        if (kind == "success") return RephraseOutcome::success(o.value("body", std::string()));
        if (kind == "rejected")
            return RephraseOutcome::rejected(o.value("keyword", std::string()),
                                             o.value("description", std::string()));
        return std::nullopt;
    }

    void store(const std::string& key, const RephraseOutcome& outcome) const {
        if (outcome.kind == RephraseOutcome::Kind::failed) return;
        nlohmann::json o;
        if (outcome.kind == RephraseOutcome::Kind::success)
            o = {{"kind", "success"}, {"body", outcome.body}};
        else
            o = {{"kind", "rejected"},
                 {"keyword", outcome.keyword},
                 {"description", outcome.description}};
        std::lock_guard<std::mutex> lock(mu_);
        write_file(dir_ / (key + ".json"), nlohmann::json{{"outcome", o}}.dump(2) + "\n");
    }

  private:
    std::filesystem::path dir_;
    mutable std::mutex mu_;
};

// --- rephrase driver -----------------------------------------------------------------

struct RephraseOptions {
    int max_attempts = 3;
    int backoff_base_ms = 50;
};

// Cache-first rephrase with bounded retries on transport errors. Usage is
// accounted per completed provider call under the supplied mutex.
inline RephraseOutcome rephrase(Provider& provider, std::string_view body,
                                const PromptBundle& prompts, std::string_view model_name,
                                double temperature, ResponseCache* cache, CostLedger& cost,
                                std::mutex& cost_mu, const RephraseOptions& opts = {}) {
    ProviderRequest req = build_request(body, prompts, model_name, temperature);
    std::string key = cache_key(req);
    if (cache) {
        if (auto hit = cache->lookup(key)) return *hit;
    }
    for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
        nlohmann::json payload;
        try {
            payload = provider.call(req);
        } catch (const TransportError&) {
            if (attempt + 1 < opts.max_attempts)
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(opts.backoff_base_ms << attempt));
            continue;
        } catch (const ProtocolError& e) {
            return RephraseOutcome::failed(std::string("protocol: ") + e.what());
        }
        {
            std::lock_guard<std::mutex> lock(cost_mu);
            ++cost.requests;
            if (payload.contains("usage")) {
                cost.input_units += payload["usage"].value("prompt_tokens", std::uint64_t{0});
                cost.output_units += payload["usage"].value("completion_tokens", std::uint64_t{0});
            }
        }
        RephraseOutcome outcome = parse_outcome(payload);
        if (cache) cache->store(key, outcome);
        return outcome;
    }
    return RephraseOutcome::failed("transport: retries exhausted");
}

// --- body merge ------------------------------------------------------------------------

// Puts the rephrased plain-text body under the original headers: every header
// byte survives except Content-Type (forced to text/plain utf-8) and
// Content-Transfer-Encoding (dropped).
inline EmailMessage merge_body(const EmailMessage& original, std::string_view new_body) {
    if (new_body.empty()) throw BodyEmptyError();
    EmailMessage out;
    out.body.assign(new_body);
    out.content_kind = ContentKind::plain;
    bool content_type_set = false;
    for (const auto& h : original.headers) {
        if (iequal(h.name, "Content-Transfer-Encoding")) continue;
        if (iequal(h.name, "Content-Type")) {
            if (!content_type_set) {
                out.headers.push_back({h.name, "text/plain; charset=utf-8"});
                content_type_set = true;
            }
            continue;
        }
        out.headers.push_back(h);
    }
    if (!content_type_set) out.headers.push_back({"Content-Type", "text/plain; charset=utf-8"});
    return out;
}

// --- rejection tally and link report ------------------------------------------------------

inline std::map<std::string, std::uint64_t> tally_rejections(
    const std::vector<RephraseOutcome>& outcomes) {
    std::map<std::string, std::uint64_t> tallies;
    for (const auto& o : outcomes) {
        if (o.kind != RephraseOutcome::Kind::rejected) continue;
        ++tallies[to_lower(trim(o.keyword))];
    }
    return tallies;
}

// Rough URL count (whitespace-delimited chunks carrying a scheme or a leading
// www.) for the link-preservation report; counted, not enforced.
inline size_t url_count(std::string_view text) {
    size_t count = 0;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        size_t b = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::string_view chunk = text.substr(b, i - b);
        if (chunk.find("://") != std::string_view::npos || chunk.rfind("www.", 0) == 0) ++count;
    }
    return count;
}

}  // namespace gauntlet
