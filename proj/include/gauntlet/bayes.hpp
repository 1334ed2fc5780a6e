#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gauntlet/corpus.hpp"
#include "gauntlet/email.hpp"
#include "gauntlet/errors.hpp"
#include "gauntlet/util.hpp"

namespace gauntlet {

enum class Adapter { builtin, spamd, live };

inline const char* to_string(Adapter a) {
    switch (a) {
        case Adapter::builtin: return "builtin";
        case Adapter::spamd: return "spamd";
        case Adapter::live: return "live";
    }
    return "builtin";
}

inline Adapter adapter_from_string(std::string_view s) {
    if (s == "builtin") return Adapter::builtin;
    if (s == "spamd") return Adapter::spamd;
    if (s == "live") return Adapter::live;
    throw ConfigError("unknown adapter: " + std::string(s));
}

// Filter decision. label == spam exactly when score >= threshold.
struct Verdict {
    double score = 0.0;
    double threshold = 0.5;
    Label label = Label::ham;
    Adapter adapter = Adapter::builtin;
};

inline Verdict make_verdict(double score, double threshold, Adapter adapter) {
    Verdict v;
    v.score = score;
    v.threshold = threshold;
    v.label = score >= threshold ? Label::spam : Label::ham;
    v.adapter = adapter;
    return v;
}

struct TokenStats {
    std::uint64_t spam_msgs = 0;  // spam messages containing the token
    std::uint64_t ham_msgs = 0;   // ham messages containing the token

    bool operator==(const TokenStats&) const = default;
};

struct BayesParams {
    double s = 1.0;              // prior strength
    double x = 0.5;              // prior probability
    size_t max_significant = 150;
    double threshold = 0.5;

    bool operator==(const BayesParams&) const = default;
};

// Per-token message counts plus class totals. Message-presence semantics: each
// training message bumps a token's counter at most once.
struct BayesModel {
    std::map<std::string, TokenStats> tokens;
    std::uint64_t total_spam = 0;
    std::uint64_t total_ham = 0;
    BayesParams params;

    bool operator==(const BayesModel&) const = default;
    bool trained() const { return total_spam >= 1 && total_ham >= 1; }
};

// --- tokenizer -------------------------------------------------------------------

namespace detail {

inline void push_tokens(std::string_view text, const std::string& prefix,
                        std::set<std::string>& out) {
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !is_ascii_alnum(text[i])) ++i;
        size_t b = i;
        while (i < text.size() && is_ascii_alnum(text[i])) ++i;
        size_t len = i - b;
        if (len < 2 || len > 40) continue;
        std::string tok = prefix + to_lower(text.substr(b, len));
        out.insert(std::move(tok));
    }
}

}  // namespace detail

// Splits the body text on non-alphanumerics, lowercases, keeps lengths 2..40,
// and adds Subject/From/To header tokens under "subject:"/"from:"/"to:" prefixes.
// Returns the deduplicated per-message token set.
inline std::set<std::string> tokenize(const EmailMessage& msg) {
    std::set<std::string> out;
    detail::push_tokens(extract_text_lossy(msg), "", out);
    for (const char* name : {"Subject", "From", "To"}) {
        std::string prefix = to_lower(name) + ":";
        for (const auto& value : msg.header_values(name))
            detail::push_tokens(value, prefix, out);
    }
    return out;
}

// --- training ----------------------------------------------------------------------

inline void train(BayesModel& model, const std::set<std::string>& tokens, Label label) {
    if (label == Label::spam)
        ++model.total_spam;
    else
        ++model.total_ham;
    for (const auto& t : tokens) {
        TokenStats& ts = model.tokens[t];
        if (label == Label::spam)
            ++ts.spam_msgs;
        else
            ++ts.ham_msgs;
    }
}

inline void train(BayesModel& model, const EmailMessage& msg, Label label) {
    train(model, tokenize(msg), label);
}

// --- scoring -----------------------------------------------------------------------

// Robinson's smoothed per-token spam probability:
//   b = spam_msgs/total_spam, g = ham_msgs/total_ham, p = b/(b+g),
//   f = (s*x + n*p) / (s + n) with n = spam_msgs + ham_msgs.
inline double spamicity(const BayesModel& model, const std::string& token) {
    if (!model.trained()) throw UntrainedModelError();
    TokenStats ts;
    if (auto it = model.tokens.find(token); it != model.tokens.end()) ts = it->second;
    double b = static_cast<double>(ts.spam_msgs) / static_cast<double>(model.total_spam);
    double g = static_cast<double>(ts.ham_msgs) / static_cast<double>(model.total_ham);
    double p = (b + g == 0.0) ? model.params.x : b / (b + g);
    double n = static_cast<double>(ts.spam_msgs + ts.ham_msgs);
    return (model.params.s * model.params.x + n * p) / (model.params.s + n);
}

// Chi-square survival function P(X >= chi2) for even df, by the closed series
//   sum_{i=0}^{df/2-1} e^-m m^i / i!  with m = chi2/2.
inline double inv_chi_square(double chi2, int df) {
    if (chi2 < 0.0) throw std::domain_error("inv_chi_square: chi2 must be >= 0");
    if (df < 2 || df % 2 != 0) throw std::domain_error("inv_chi_square: df must be even and >= 2");
    double m = chi2 / 2.0;
    double term = std::exp(-m);
    double sum = term;
    for (int i = 1; i <= df / 2 - 1; ++i) {
        term *= m / i;
        sum += term;
    }
    return std::min(sum, 1.0);
}

// Fisher/Robinson combining: I = (1 + H - S) / 2 where H and S are the
// inverse-chi-square combinations of the f values and their complements.
inline double combine(const std::vector<double>& fs) {
    if (fs.empty()) throw EmptyEvidenceError();
    double sum_ln_f = 0.0;
    double sum_ln_1mf = 0.0;
    for (double f : fs) {
        double c = std::clamp(f, 1e-6, 1.0 - 1e-6);
        sum_ln_f += std::log(c);
        sum_ln_1mf += std::log(1.0 - c);
    }
    int df = static_cast<int>(2 * fs.size());
    double h = inv_chi_square(-2.0 * sum_ln_f, df);
    double s = inv_chi_square(-2.0 * sum_ln_1mf, df);
    return (1.0 + h - s) / 2.0;
}

// Scores a message: up to max_significant tokens by descending |f - 0.5|
// (lexicographic tie-break keeps selection total), combined via Fisher.
// A message with no tokens at all scores the prior x.
inline Verdict classify(const BayesModel& model, const EmailMessage& msg) {
    if (!model.trained()) throw UntrainedModelError();
    std::set<std::string> tokens = tokenize(msg);
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(tokens.size());
    for (const auto& t : tokens) scored.emplace_back(t, spamicity(model, t));
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        double da = std::fabs(a.second - 0.5);
        double db = std::fabs(b.second - 0.5);
        if (da != db) return da > db;
        return a.first < b.first;
    });
    if (scored.size() > model.params.max_significant) scored.resize(model.params.max_significant);
    double score = model.params.x;
    if (!scored.empty()) {
        std::vector<double> fs;
        fs.reserve(scored.size());
        for (const auto& [t, f] : scored) fs.push_back(f);
        score = combine(fs);
    }
    return make_verdict(score, model.params.threshold, Adapter::builtin);
}

// --- persistence ---------------------------------------------------------------------

// JSON with sorted keys and a token array sorted by token, so identical models
// serialize to identical bytes.
inline nlohmann::json model_to_json(const BayesModel& model) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& [t, ts] : model.tokens)
        tokens.push_back({{"t", t}, {"s", ts.spam_msgs}, {"h", ts.ham_msgs}});
    return nlohmann::json{
        {"params",
         {{"s", model.params.s},
          {"x", model.params.x},
          {"max_significant", model.params.max_significant},
          {"threshold", model.params.threshold}}},
        {"totals", {{"spam", model.total_spam}, {"ham", model.total_ham}}},
        {"tokens", std::move(tokens)},
    };
}

inline BayesModel model_from_json(const nlohmann::json& j) {
    BayesModel model;
    try {
        const auto& params = j.at("params");
        model.params.s = params.at("s").get<double>();
        model.params.x = params.at("x").get<double>();
        model.params.max_significant = params.at("max_significant").get<size_t>();
        model.params.threshold = params.at("threshold").get<double>();
        model.total_spam = j.at("totals").at("spam").get<std::uint64_t>();
        model.total_ham = j.at("totals").at("ham").get<std::uint64_t>();
        for (const auto& item : j.at("tokens")) {
            TokenStats ts{item.at("s").get<std::uint64_t>(), item.at("h").get<std::uint64_t>()};
            if (ts.spam_msgs > model.total_spam || ts.ham_msgs > model.total_ham)
                throw ConfigError("model token counts exceed class totals");
            model.tokens[item.at("t").get<std::string>()] = ts;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model file: ") + e.what());
    }
    return model;
}

inline void save_model(const BayesModel& model, const std::filesystem::path& path) {
    write_file(path, model_to_json(model).dump(2) + "\n");
}

inline BayesModel load_model(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse model file " + path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace gauntlet
