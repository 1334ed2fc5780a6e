#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gauntlet/corpus.hpp"
#include "gauntlet/errors.hpp"
#include "gauntlet/util.hpp"

namespace gauntlet {

// --- run accounting ---------------------------------------------------------------

enum class Stage { preprocess, llm_mod, robustness };

inline const char* to_string(Stage s) {
    switch (s) {
        case Stage::preprocess: return "preprocess";
        case Stage::llm_mod: return "llm_mod";
        case Stage::robustness: return "robustness";
    }
    return "preprocess";
}

// Per-run counts behind the run report tables. Fields that do not apply to a
// stage stay zero. `failed` tracks transport/parse failures on top of provider
// rejections.
struct StageLedger {
    DatasetVariant dataset = DatasetVariant::original;
    Stage stage = Stage::preprocess;
    std::uint64_t raw = 0;
    std::uint64_t post_mod = 0;
    std::uint64_t sent = 0;
    std::uint64_t ham = 0;
    std::uint64_t spam = 0;
    std::uint64_t pre_llm = 0;
    std::uint64_t rejected = 0;
    std::uint64_t post_llm = 0;
    std::uint64_t failed = 0;
};

inline nlohmann::json to_json(const StageLedger& l) {
    return {
        {"dataset", to_string(l.dataset)},
        {"stage", to_string(l.stage)},
        {"raw", l.raw},
        {"post_mod", l.post_mod},
        {"sent", l.sent},
        {"ham", l.ham},
        {"spam", l.spam},
        {"pre_llm", l.pre_llm},
        {"rejected", l.rejected},
        {"post_llm", l.post_llm},
        {"failed", l.failed},
    };
}

inline StageLedger stage_ledger_from_json(const nlohmann::json& j) {
    StageLedger l;
    l.dataset = variant_from_string(j.at("dataset").get<std::string>());
    std::string stage = j.at("stage").get<std::string>();
    l.stage = stage == "llm_mod" ? Stage::llm_mod
              : stage == "robustness" ? Stage::robustness
                                      : Stage::preprocess;
    l.raw = j.at("raw").get<std::uint64_t>();
    l.post_mod = j.at("post_mod").get<std::uint64_t>();
    l.sent = j.at("sent").get<std::uint64_t>();
    l.ham = j.at("ham").get<std::uint64_t>();
    l.spam = j.at("spam").get<std::uint64_t>();
    l.pre_llm = j.at("pre_llm").get<std::uint64_t>();
    l.rejected = j.at("rejected").get<std::uint64_t>();
    l.post_llm = j.at("post_llm").get<std::uint64_t>();
    l.failed = j.value("failed", std::uint64_t{0});
    return l;
}

// Provider usage and spend for one attack run.
struct CostLedger {
    std::uint64_t requests = 0;
    std::uint64_t input_units = 0;
    std::uint64_t output_units = 0;
    double price_in = 0.50 / 1e6;   // dollars per input token
    double price_out = 1.50 / 1e6;  // dollars per output token

    double total() const { return input_units * price_in + output_units * price_out; }
};

inline nlohmann::json to_json(const CostLedger& c) {
    return {
        {"requests", c.requests},
        {"input_units", c.input_units},
        {"output_units", c.output_units},
        {"price_in", c.price_in},
        {"price_out", c.price_out},
        {"total", c.total()},
    };
}

inline double per_email_cost(const CostLedger& ledger, std::uint64_t n_modified) {
    if (n_modified == 0) throw std::domain_error("per_email_cost: zero modified emails");
    return ledger.total() / static_cast<double>(n_modified);
}

struct SimilarityRecord {
    std::string id;
    double cosine = 0.0;
    size_t pre_len = 0;   // normalized character counts
    size_t post_len = 0;
};

// --- text normalization --------------------------------------------------------------

// Uniform body format before comparison: tags out, newlines to spaces, only
// letters and spaces kept, runs collapsed, trimmed, lowercased. Idempotent.
inline std::string normalize_text(std::string_view body) {
    std::string detagged;
    detagged.reserve(body.size());
    size_t i = 0;
    while (i < body.size()) {
        if (body[i] == '<') {
            size_t close = body.find('>', i);
            detagged.push_back(' ');
            if (close == std::string_view::npos) break;
            i = close + 1;
            continue;
        }
        detagged.push_back(body[i]);
        ++i;
    }
    std::string out;
    out.reserve(detagged.size());
    bool pending_space = false;
    for (char c : detagged) {
        if (c == '\r' || c == '\n') c = ' ';
        if (c == ' ') {
            pending_space = true;
            continue;
        }
        if (!is_ascii_alpha(c)) continue;
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.push_back(ascii_lower(c));
    }
    return out;
}

// --- embedding ------------------------------------------------------------------------

inline constexpr std::uint32_t kEmbeddingDims = 65536;

// Sparse hashed term-frequency vector over word unigrams and adjacent bigrams,
// L2-normalized. The zero vector stands for empty text.
struct EmbeddingVector {
    std::map<std::uint32_t, double> values;

    bool zero() const { return values.empty(); }
};

// `text` is expected to be normalize_text output (words joined by single spaces).
inline EmbeddingVector embed(std::string_view text) {
    EmbeddingVector v;
    std::vector<std::string_view> words;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t space = text.find(' ', pos);
        std::string_view w =
            (space == std::string_view::npos) ? text.substr(pos) : text.substr(pos, space - pos);
        if (!w.empty()) words.push_back(w);
        if (space == std::string_view::npos) break;
        pos = space + 1;
    }
    if (words.empty()) return v;
    auto bump = [&v](std::string_view feature) {
        v.values[static_cast<std::uint32_t>(fnv1a64(feature) % kEmbeddingDims)] += 1.0;
    };
    for (size_t i = 0; i < words.size(); ++i) {
        bump(words[i]);
        if (i + 1 < words.size()) bump(std::string(words[i]) + " " + std::string(words[i + 1]));
    }
    double norm = 0.0;
    for (const auto& [idx, val] : v.values) norm += val * val;
    norm = std::sqrt(norm);
    for (auto& [idx, val] : v.values) val /= norm;
    return v;
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.zero() || b.zero()) return 0.0;
    const auto& small = a.values.size() <= b.values.size() ? a : b;
    const auto& large = a.values.size() <= b.values.size() ? b : a;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [idx, val] : small.values) {
        if (auto it = large.values.find(idx); it != large.values.end()) dot += val * it->second;
    }
    for (const auto& [idx, val] : a.values) na += val * val;
    for (const auto& [idx, val] : b.values) nb += val * val;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// --- rates ----------------------------------------------------------------------------

// Percentage of `part` in `whole`, half-up to one decimal (report formatting).
inline double rate_percent(std::uint64_t part, std::uint64_t whole) {
    if (whole == 0) throw EmptyRunError();
    return round1(100.0 * static_cast<double>(part) / static_cast<double>(whole));
}

inline double success_rate(std::uint64_t ham, std::uint64_t sent) {
    return rate_percent(ham, sent);
}

// Baseline hams are misclassifications of true spam; same arithmetic.
inline double misclassification_rate(std::uint64_t ham, std::uint64_t sent) {
    return rate_percent(ham, sent);
}

inline double end_to_end_rate(std::uint64_t baseline_ham, std::uint64_t post_attack_ham,
                              std::uint64_t baseline_sent) {
    return rate_percent(baseline_ham + post_attack_ham, baseline_sent);
}

// --- histogram ------------------------------------------------------------------------

struct Histogram {
    double lo = -1.0;
    double hi = 1.0;
    std::vector<std::uint64_t> counts;

    double bin_lo(size_t i) const { return lo + (hi - lo) * i / counts.size(); }
    double bin_hi(size_t i) const { return lo + (hi - lo) * (i + 1) / counts.size(); }
};

// Equal-width bins over [lo, hi]; out-of-range values land in the edge bins,
// the last bin is right-inclusive, so counts always sum to |values|.
inline Histogram histogram(const std::vector<double>& values, double lo, double hi, size_t bins) {
    if (bins < 1 || !(lo < hi)) throw std::domain_error("histogram: need bins >= 1 and lo < hi");
    Histogram h;
    h.lo = lo;
    h.hi = hi;
    h.counts.assign(bins, 0);
    double width = (hi - lo) / static_cast<double>(bins);
    for (double v : values) {
        auto idx = static_cast<long long>(std::floor((v - lo) / width));
        idx = std::clamp(idx, 0LL, static_cast<long long>(bins) - 1);
        ++h.counts[static_cast<size_t>(idx)];
    }
    return h;
}

inline nlohmann::json to_json(const Histogram& h) {
    nlohmann::json bins = nlohmann::json::array();
    for (size_t i = 0; i < h.counts.size(); ++i)
        bins.push_back({{"lo", h.bin_lo(i)}, {"hi", h.bin_hi(i)}, {"count", h.counts[i]}});
    return {{"lo", h.lo}, {"hi", h.hi}, {"bins", std::move(bins)}};
}

// --- report ---------------------------------------------------------------------------

struct RunReport {
    std::string dataset;
    std::string attack;
    std::string adapter;
    std::string embedding = "hashed-tf-unigram-bigram-65536";
    bool lowercase_normalization = true;
    std::string model_file_hash;  // empty unless the builtin filter was used
    std::uint64_t seed = 0;
    StageLedger preprocess;
    StageLedger baseline;
    StageLedger attack_stage;
    StageLedger evaluate;
    double misclassification = 0.0;
    double success = 0.0;
    double end_to_end = 0.0;
    std::vector<SimilarityRecord> similarities;  // sorted by id
    std::map<std::string, std::uint64_t> rejections;
    CostLedger cost;
    std::uint64_t links_pre = 0;
    std::uint64_t links_post = 0;
};

inline double mean_cosine(const std::vector<SimilarityRecord>& sims) {
    if (sims.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& s : sims) sum += s.cosine;
    return sum / static_cast<double>(sims.size());
}

inline double median_cosine(std::vector<SimilarityRecord> sims) {
    if (sims.empty()) return 0.0;
    std::sort(sims.begin(), sims.end(),
              [](const auto& a, const auto& b) { return a.cosine < b.cosine; });
    size_t n = sims.size();
    if (n % 2 == 1) return sims[n / 2].cosine;
    return (sims[n / 2 - 1].cosine + sims[n / 2].cosine) / 2.0;
}

inline nlohmann::json report_to_json(const RunReport& r) {
    std::vector<double> cosines;
    cosines.reserve(r.similarities.size());
    for (const auto& s : r.similarities) cosines.push_back(s.cosine);
    nlohmann::json rejections = nlohmann::json::object();
    for (const auto& [k, v] : r.rejections) rejections[k] = v;
    return {
        {"config",
         {{"dataset", r.dataset},
          {"attack", r.attack},
          {"adapter", r.adapter},
          {"embedding", r.embedding},
          {"lowercase_normalization", r.lowercase_normalization},
          {"model_file_hash", r.model_file_hash},
          {"seed", r.seed}}},
        {"stages",
         {{"preprocess", to_json(r.preprocess)},
          {"baseline", to_json(r.baseline)},
          {"attack", to_json(r.attack_stage)},
          {"evaluate", to_json(r.evaluate)}}},
        {"rates",
         {{"misclassification_rate", r.misclassification},
          {"success_rate", r.success},
          {"end_to_end_rate", r.end_to_end}}},
        {"similarity",
         {{"count", r.similarities.size()},
          {"mean", mean_cosine(r.similarities)},
          {"median", median_cosine(r.similarities)},
          {"histogram", to_json(histogram(cosines, -1.0, 1.0, 40))}}},
        {"links", {{"pre", r.links_pre}, {"post", r.links_post}}},
        {"rejections", std::move(rejections)},
        {"cost", to_json(r.cost)},
    };
}

// CSV with counts descending, keyword ascending on ties.
inline std::string rejections_csv(const std::map<std::string, std::uint64_t>& tallies) {
    std::vector<std::pair<std::string, std::uint64_t>> rows(tallies.begin(), tallies.end());
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::string out = "keyword,count\n";
    for (const auto& [k, v] : rows) out += k + "," + std::to_string(v) + "\n";
    return out;
}

inline std::string similarities_csv(const std::vector<SimilarityRecord>& sims) {
    std::string out = "id,cosine\n";
    char buf[64];
    for (const auto& s : sims) {
        std::snprintf(buf, sizeof buf, "%.6f", s.cosine);
        out += s.id + "," + buf + "\n";
    }
    return out;
}

// One row per run-table quantity, mirroring the three stage tables.
inline std::string tables_csv(const RunReport& r) {
    char buf[64];
    auto pct = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.1f", v);
        return std::string(buf);
    };
    std::string out = "table,dataset,attack,col,value\n";
    auto row = [&out, &r](const char* table, const char* col, std::uint64_t v) {
        out += std::string(table) + "," + r.dataset + "," + r.attack + "," + col + "," +
               std::to_string(v) + "\n";
    };
    row("preprocess", "raw", r.preprocess.raw);
    row("preprocess", "post_mod", r.preprocess.post_mod);
    row("preprocess", "sent", r.baseline.sent);
    row("preprocess", "ham", r.baseline.ham);
    row("preprocess", "spam", r.baseline.spam);
    out += "preprocess," + r.dataset + "," + r.attack + ",misclass_rate," +
           pct(r.misclassification) + "\n";
    row("modification", "initial", r.attack_stage.raw);
    row("modification", "pre_llm", r.attack_stage.pre_llm);
    row("modification", "rejected", r.attack_stage.rejected);
    row("modification", "post_llm", r.attack_stage.post_llm);
    row("robustness", "initial", r.evaluate.raw);
    row("robustness", "sent", r.evaluate.sent);
    row("robustness", "ham", r.evaluate.ham);
    row("robustness", "spam", r.evaluate.spam);
    out += "robustness," + r.dataset + "," + r.attack + ",success_rate," + pct(r.success) + "\n";
    out += "robustness," + r.dataset + "," + r.attack + ",end_to_end_rate," + pct(r.end_to_end) +
           "\n";
    return out;
}

// Writes report.json, tables.csv, similarities.csv and rejections.csv with
// deterministic ordering; identical runs produce identical bytes.
inline void build_report(const RunReport& r, const std::filesystem::path& out_dir) {
    write_file(out_dir / "report.json", report_to_json(r).dump(2) + "\n");
    write_file(out_dir / "tables.csv", tables_csv(r));
    write_file(out_dir / "similarities.csv", similarities_csv(r.similarities));
    write_file(out_dir / "rejections.csv", rejections_csv(r.rejections));
}

}  // namespace gauntlet
