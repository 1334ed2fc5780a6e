#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gauntlet/attack.hpp"
#include "gauntlet/bayes.hpp"
#include "gauntlet/config.hpp"
#include "gauntlet/corpus.hpp"
#include "gauntlet/eval.hpp"
#include "gauntlet/fut.hpp"
#include "gauntlet/ledger.hpp"

namespace gauntlet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitEmptyGroundTruth = 3;
inline constexpr int kExitTransport = 4;

namespace detail {

namespace fs = std::filesystem;

inline nlohmann::json verdict_to_json(const std::string& id, const std::string& stage,
                                      const Verdict& v) {
    return {{"id", id},          {"stage", stage},
            {"score", v.score},  {"threshold", v.threshold},
            {"label", to_string(v.label)}, {"adapter", to_string(v.adapter)}};
}

inline Verdict verdict_from_json(const nlohmann::json& j) {
    Verdict v;
    v.score = j.at("score").get<double>();
    v.threshold = j.at("threshold").get<double>();
    v.label = j.at("label").get<std::string>() == "spam" ? Label::spam : Label::ham;
    v.adapter = adapter_from_string(j.at("adapter").get<std::string>());
    return v;
}

inline std::vector<std::string> list_eml_ids(const fs::path& dir) {
    std::vector<std::string> ids;
    if (!fs::is_directory(dir)) return ids;
    for (const auto& de : fs::directory_iterator(dir))
        if (de.is_regular_file() && de.path().extension() == ".eml")
            ids.push_back(de.path().stem().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline void write_stage_ledger(const fs::path& path, const StageLedger& ledger) {
    write_file(path, to_json(ledger).dump(2) + "\n");
}

inline StageLedger read_stage_ledger(const fs::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed stage ledger: " + path.string());
    return stage_ledger_from_json(j);
}

// Classification results persisted so a transport-interrupted run resumes
// where it stopped.
struct BatchOutcome {
    std::map<std::string, Verdict> verdicts;  // by entry id, resumed + fresh
    std::uint64_t unsent = 0;
    bool transport_exhausted = false;
};

inline BatchOutcome classify_batch(const RunConfig& cfg, const std::string& stage,
                                   const fs::path& dir, const std::vector<std::string>& ids,
                                   const BayesModel* model, std::ostream& log) {
    JsonlWriter verdict_log(cfg.out() / "verdicts.jsonl");
    JsonlWriter ledger(cfg.out() / "ledger.jsonl");
    std::string ts = iso8601(cfg.clock());

    BatchOutcome result;
    for (const auto& line : read_jsonl(verdict_log.path()))
        if (line.value("stage", "") == stage)
            result.verdicts[line.at("id").get<std::string>()] = verdict_from_json(line);

    std::vector<std::string> pending;
    for (const auto& id : ids)
        if (!result.verdicts.count(id)) pending.push_back(id);
    if (!pending.empty())
        log << stage << ": classifying " << pending.size() << " message(s) via "
            << to_string(cfg.filter.kind) << "\n";

    struct Slot {
        bool ok = false;
        bool transport = false;
        Verdict verdict;
        std::string error;
    };
    std::vector<Slot> slots(pending.size());
    parallel_for(pending.size(), cfg.filter.max_inflight, [&](size_t i) {
        try {
            EmailMessage msg = parse_email(read_file(dir / (pending[i] + ".eml")));
            if (cfg.filter.kind == Adapter::live && msg.header_value(kGauntletIdHeader).empty())
                msg.headers.push_back({std::string(kGauntletIdHeader), pending[i]});
            slots[i].verdict = check(cfg.filter, model, msg);
            slots[i].ok = true;
        } catch (const TransportError& e) {
            slots[i].transport = true;
            slots[i].error = e.what();
        } catch (const GauntletError& e) {
            slots[i].error = e.what();
        }
    });

    size_t fresh = 0, transport_failures = 0;
    for (size_t i = 0; i < pending.size(); ++i) {
        const std::string& id = pending[i];
        if (slots[i].ok) {
            result.verdicts[id] = slots[i].verdict;
            verdict_log.append(verdict_to_json(id, stage, slots[i].verdict));
            ledger.append(to_json(RunLedgerEntry{id, stage, to_string(slots[i].verdict.label),
                                                 std::string(), ts}));
            ++fresh;
        } else {
            ++result.unsent;
            if (slots[i].transport) ++transport_failures;
            ledger.append(to_json(RunLedgerEntry{id, stage, "unsent", slots[i].error, ts}));
            log << stage << ": " << id << " unsent: " << slots[i].error << "\n";
        }
    }
    result.transport_exhausted =
        !pending.empty() && fresh == 0 && transport_failures == pending.size();
    return result;
}

inline void clear_run_state(const RunConfig& cfg) {
    for (const char* name :
         {"ledger.jsonl", "verdicts.jsonl", "outcomes.jsonl", "rejections.jsonl",
          "ground_truth.json", "stage_preprocess.json", "stage_baseline.json",
          "stage_attack.json", "stage_evaluate.json", "report.json", "tables.csv",
          "similarities.csv", "rejections.csv", "cost.json"})
        fs::remove(cfg.out() / name);
    fs::remove_all(cfg.preprocessed_dir());
    fs::remove_all(cfg.modified_dir());
}

}  // namespace detail

// --- stage 1a: pre-process ------------------------------------------------------------

inline int cmd_preprocess(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    if (cfg.corpus_root.empty() || !fs::is_directory(cfg.corpus_root)) {
        log << "preprocess: corpus_root is not a directory: " << cfg.corpus_root << "\n";
        return kExitConfig;
    }
    if (fs::exists(cfg.preprocessed_dir()) && !fs::is_empty(cfg.preprocessed_dir()) &&
        !cfg.force) {
        log << "preprocess: " << cfg.preprocessed_dir().string()
            << " already exists; rerun with --force to redo\n";
        return kExitConfig;
    }
    detail::clear_run_state(cfg);  // a run starts from a clean slate
    fs::create_directories(cfg.preprocessed_dir());

    LoadResult loaded = load_corpus(cfg.corpus_root, Label::spam);
    JsonlWriter rejection_log(cfg.out() / "rejections.jsonl");
    JsonlWriter ledger(cfg.out() / "ledger.jsonl");
    std::string ts = iso8601(cfg.clock());
    for (const auto& r : loaded.rejections) {
        rejection_log.append({{"path", r.path}, {"reason", r.reason}});
        ledger.append(to_json(RunLedgerEntry{r.path, "preprocess", "filtered", r.reason, ts}));
    }

    StageLedger stage;
    stage.dataset = cfg.dataset;
    stage.stage = Stage::preprocess;
    stage.raw = loaded.files_visited;
    std::int64_t now = cfg.clock();
    for (const auto& entry : loaded.entries) {
        try {
            EmailMessage out = apply_variant(entry.message, cfg.dataset, now);
            write_file(cfg.preprocessed_dir() / (entry.id + ".eml"), serialize_eml(out));
            ledger.append(to_json(RunLedgerEntry{entry.id, "preprocess", "written",
                                                 entry.source_path, ts}));
            ++stage.post_mod;
        } catch (const ParseError& e) {
            rejection_log.append({{"path", entry.source_path}, {"reason", to_string(e.kind)}});
            ledger.append(
                to_json(RunLedgerEntry{entry.id, "preprocess", "filtered", to_string(e.kind), ts}));
        }
    }
    detail::write_stage_ledger(cfg.out() / "stage_preprocess.json", stage);
    log << "preprocess: raw=" << stage.raw << " post_mod=" << stage.post_mod
        << " dataset=" << to_string(cfg.dataset) << "\n";
    return kExitOk;
}

// --- builtin filter training ------------------------------------------------------------

inline int cmd_train(const RunConfig& cfg, std::ostream& log) {
    if (cfg.ham_dir.empty() || cfg.spam_dir.empty()) {
        log << "train: both --ham_dir and --spam_dir are required\n";
        return kExitConfig;
    }
    for (const std::string& dir : {cfg.ham_dir, cfg.spam_dir}) {
        if (!std::filesystem::is_directory(dir)) {
            log << "train: not a directory: " << dir << "\n";
            return kExitConfig;
        }
    }
    LoadResult ham = load_corpus(cfg.ham_dir, Label::ham);
    LoadResult spam = load_corpus(cfg.spam_dir, Label::spam);
    if (ham.entries.empty() || spam.entries.empty()) {
        log << "train: untrainable corpus: ham=" << ham.entries.size()
            << " spam=" << spam.entries.size() << "\n";
        return kExitConfig;
    }

    auto split_holdout = [&](std::vector<CorpusEntry>& entries, std::uint64_t salt) {
        std::vector<CorpusEntry> held;
        if (cfg.holdout <= 0.0) return held;
        std::mt19937_64 rng(cfg.seed ^ salt);
        std::shuffle(entries.begin(), entries.end(), rng);
        size_t n = static_cast<size_t>(entries.size() * cfg.holdout);
        held.assign(entries.end() - n, entries.end());
        entries.resize(entries.size() - n);
        return held;
    };
    std::vector<CorpusEntry> held_ham = split_holdout(ham.entries, 0x68616dULL);
    std::vector<CorpusEntry> held_spam = split_holdout(spam.entries, 0x7370616dULL);

    BayesModel model;
    for (const auto& e : ham.entries) train(model, e.message, Label::ham);
    for (const auto& e : spam.entries) train(model, e.message, Label::spam);
    std::filesystem::create_directories(cfg.model_path().parent_path());
    save_model(model, cfg.model_path());
    log << "train: totals spam=" << model.total_spam << " ham=" << model.total_ham
        << " tokens=" << model.tokens.size() << " -> " << cfg.model_path().string() << "\n";

    if (!held_ham.empty() || !held_spam.empty()) {
        size_t correct = 0, total = held_ham.size() + held_spam.size();
        for (const auto& e : held_ham)
            if (classify(model, e.message).label == Label::ham) ++correct;
        for (const auto& e : held_spam)
            if (classify(model, e.message).label == Label::spam) ++correct;
        double acc = total ? static_cast<double>(correct) / total : 0.0;
        log << "train: holdout accuracy " << correct << "/" << total << " = " << acc << "\n";
    }
    return kExitOk;
}

// --- stage 1b: baseline classification and ground truth ---------------------------------

inline int cmd_baseline(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    std::vector<std::string> ids = detail::list_eml_ids(cfg.preprocessed_dir());
    if (ids.empty()) {
        log << "baseline: no preprocessed dataset under " << cfg.preprocessed_dir().string()
            << "; run preprocess first\n";
        return kExitConfig;
    }
    BayesModel model;
    if (cfg.filter.kind == Adapter::builtin) {
        if (!fs::exists(cfg.model_path())) {
            log << "baseline: model file missing: " << cfg.model_path().string()
                << "; run train first\n";
            return kExitConfig;
        }
        model = load_model(cfg.model_path());
    }

    detail::BatchOutcome batch =
        detail::classify_batch(cfg, "baseline", cfg.preprocessed_dir(), ids,
                               cfg.filter.kind == Adapter::builtin ? &model : nullptr, log);
    if (batch.transport_exhausted) {
        log << "baseline: every pending check failed with a transport error; state saved\n";
        return kExitTransport;
    }

    StageLedger prev = detail::read_stage_ledger(cfg.out() / "stage_preprocess.json");
    StageLedger stage;
    stage.dataset = cfg.dataset;
    stage.stage = Stage::preprocess;
    stage.raw = prev.raw;
    stage.post_mod = prev.post_mod;
    std::vector<std::pair<std::string, Verdict>> ordered;
    for (const auto& id : ids) {
        auto it = batch.verdicts.find(id);
        if (it == batch.verdicts.end()) continue;
        ordered.emplace_back(id, it->second);
        ++stage.sent;
        if (it->second.label == Label::ham)
            ++stage.ham;
        else
            ++stage.spam;
    }
    detail::write_stage_ledger(cfg.out() / "stage_baseline.json", stage);

    GroundTruth gt = build_ground_truth(cfg.dataset, ordered);
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [id, v] : gt.entries) entries.push_back(detail::verdict_to_json(id, "baseline", v));
    write_file(cfg.out() / "ground_truth.json",
               nlohmann::json{{"dataset", to_string(cfg.dataset)}, {"entries", entries}}.dump(2) +
                   "\n");

    log << "baseline: sent=" << stage.sent << " ham=" << stage.ham << " spam=" << stage.spam
        << " misclassification_rate="
        << (stage.sent ? misclassification_rate(stage.ham, stage.sent) : 0.0) << "%\n";
    if (gt.entries.empty()) {
        log << "baseline: ground truth is empty (the filter flagged nothing as spam)\n";
        return kExitEmptyGroundTruth;
    }
    log << "baseline: ground truth size " << gt.entries.size() << "\n";
    return kExitOk;
}

// --- stage 2: attack ---------------------------------------------------------------------

inline int cmd_attack(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    if (!fs::exists(cfg.out() / "ground_truth.json")) {
        log << "attack: ground_truth.json missing; run baseline first\n";
        return kExitConfig;
    }
    nlohmann::json gt_json =
        nlohmann::json::parse(read_file(cfg.out() / "ground_truth.json"), nullptr, false);
    if (gt_json.is_discarded()) {
        log << "attack: malformed ground_truth.json\n";
        return kExitConfig;
    }
    std::vector<std::string> ids;
    for (const auto& e : gt_json.at("entries")) ids.push_back(e.at("id").get<std::string>());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) {
        log << "attack: ground truth is empty\n";
        return kExitEmptyGroundTruth;
    }

    fs::create_directories(cfg.modified_dir());
    JsonlWriter outcome_log(cfg.out() / "outcomes.jsonl");
    JsonlWriter ledger(cfg.out() / "ledger.jsonl");
    std::string ts = iso8601(cfg.clock());

    std::map<std::string, nlohmann::json> done;
    for (const auto& line : read_jsonl(outcome_log.path()))
        done[line.at("id").get<std::string>()] = line;

    StageLedger stage;
    stage.dataset = cfg.dataset;
    stage.stage = Stage::llm_mod;
    stage.raw = ids.size();

    CostLedger cost;
    cost.price_in = cfg.provider.price_in;
    cost.price_out = cfg.provider.price_out;
    if (fs::exists(cfg.out() / "cost.json")) {  // resumed runs keep prior spend
        nlohmann::json cj = nlohmann::json::parse(read_file(cfg.out() / "cost.json"), nullptr, false);
        if (!cj.is_discarded()) {
            cost.requests = cj.value("requests", std::uint64_t{0});
            cost.input_units = cj.value("input_units", std::uint64_t{0});
            cost.output_units = cj.value("output_units", std::uint64_t{0});
        }
    }
    std::vector<RephraseOutcome> outcomes_for_tally;

    auto account = [&](const nlohmann::json& line) {
        std::string outcome = line.at("outcome").get<std::string>();
        if (outcome == "success") {
            ++stage.pre_llm;
            ++stage.post_llm;
        } else if (outcome == "rejected") {
            ++stage.pre_llm;
            ++stage.rejected;
            outcomes_for_tally.push_back(RephraseOutcome::rejected(
                line.value("keyword", "unspecified"), line.value("description", std::string())));
        } else if (outcome == "failed") {
            ++stage.pre_llm;
            ++stage.failed;
        }
        // "dropped" lines (unreadable/empty bodies) stay outside pre_llm
    };
    for (const auto& [id, line] : done) account(line);

    std::vector<std::string> pending;
    for (const auto& id : ids)
        if (!done.count(id)) pending.push_back(id);

    struct Slot {
        RephraseOutcome outcome = RephraseOutcome::failed("not attempted");
        std::string pre_body;
        size_t replacements = 0;
        bool dropped = false;
        std::string drop_reason;
    };
    std::vector<Slot> slots(pending.size());

    auto load_body = [&](const std::string& id, Slot& slot) {
        try {
            EmailMessage msg = parse_email(read_file(cfg.preprocessed_dir() / (id + ".eml")));
            slot.pre_body = extract_text(msg);
        } catch (const GauntletError& e) {
            slot.dropped = true;
            slot.drop_reason = e.what();
            return false;
        }
        if (trim(slot.pre_body).empty()) {
            slot.dropped = true;
            slot.drop_reason = "empty body";
            return false;
        }
        return true;
    };

    if (cfg.attack == "dictionary") {
        if (cfg.dictionary_path.empty() || !fs::exists(cfg.dictionary_path)) {
            log << "attack: dictionary_path missing: " << cfg.dictionary_path << "\n";
            return kExitConfig;
        }
        SpamDictionary dict = SpamDictionary::from_file(cfg.dictionary_path);
        for (size_t i = 0; i < pending.size(); ++i) {
            if (!load_body(pending[i], slots[i])) continue;
            auto [new_body, n] = dictionary_attack(slots[i].pre_body, dict);
            slots[i].outcome = RephraseOutcome::success(std::move(new_body));
            slots[i].replacements = n;
        }
    } else {
        PromptBundle prompts = load_prompts(cfg);
        std::unique_ptr<Provider> provider = make_provider(cfg);
        ResponseCache cache(cfg.cache_dir());
        std::mutex cost_mu;
        parallel_for(pending.size(), cfg.provider.max_inflight, [&](size_t i) {
            if (!load_body(pending[i], slots[i])) return;
            try {
                slots[i].outcome =
                    rephrase(*provider, slots[i].pre_body, prompts, cfg.provider.model_name,
                             cfg.provider.temperature, &cache, cost, cost_mu);
            } catch (const GauntletError& e) {
                slots[i].outcome = RephraseOutcome::failed(e.what());
            }
        });
    }

    for (size_t i = 0; i < pending.size(); ++i) {
        const std::string& id = pending[i];
        Slot& slot = slots[i];
        nlohmann::json line{{"id", id}};
        if (slot.dropped) {
            line["outcome"] = "dropped";
            line["reason"] = slot.drop_reason;
            ledger.append(to_json(RunLedgerEntry{id, "attack", "dropped", slot.drop_reason, ts}));
        } else {
            switch (slot.outcome.kind) {
                case RephraseOutcome::Kind::success: {
                    EmailMessage original =
                        parse_email(read_file(cfg.preprocessed_dir() / (id + ".eml")));
                    EmailMessage merged = merge_body(original, slot.outcome.body);
                    write_file(cfg.modified_dir() / (id + ".eml"), serialize_eml(merged));
                    line["outcome"] = "success";
                    line["urls_pre"] = url_count(slot.pre_body);
                    line["urls_post"] = url_count(slot.outcome.body);
                    if (cfg.attack == "dictionary") line["replacements"] = slot.replacements;
                    ledger.append(to_json(RunLedgerEntry{id, "attack", "success", "", ts}));
                    break;
                }
                case RephraseOutcome::Kind::rejected:
                    line["outcome"] = "rejected";
                    line["keyword"] = slot.outcome.keyword;
                    line["description"] = slot.outcome.description;
                    ledger.append(
                        to_json(RunLedgerEntry{id, "attack", "rejected", slot.outcome.keyword, ts}));
                    break;
                case RephraseOutcome::Kind::failed:
                    line["outcome"] = "failed";
                    line["reason"] = slot.outcome.reason;
                    ledger.append(
                        to_json(RunLedgerEntry{id, "attack", "failed", slot.outcome.reason, ts}));
                    break;
            }
            account(line);
        }
        outcome_log.append(line);
    }

    detail::write_stage_ledger(cfg.out() / "stage_attack.json", stage);
    write_file(cfg.out() / "cost.json", to_json(cost).dump(2) + "\n");
    write_file(cfg.out() / "rejections.csv", rejections_csv(tally_rejections(outcomes_for_tally)));

    log << "attack: initial=" << stage.raw << " pre_llm=" << stage.pre_llm
        << " rejected=" << stage.rejected << " post_llm=" << stage.post_llm
        << " failed=" << stage.failed << "\n";
    if (stage.post_llm > 0 && cost.requests > 0)
        log << "attack: cost total=$" << cost.total() << " per_email=$"
            << per_email_cost(cost, stage.post_llm) << "\n";
    if (stage.post_llm == 0) {
        log << "attack: no entry was modified\n";
        return kExitFailure;
    }
    return kExitOk;
}

// --- stage 3: robustness evaluation ---------------------------------------------------------

namespace detail {

// Assembles the full report from persisted run state; similarities are
// recomputed from the written .eml pairs so `evaluate` and `report` agree.
inline RunReport assemble_report(const RunConfig& cfg) {
    RunReport r;
    r.dataset = to_string(cfg.dataset);
    r.attack = cfg.attack;
    r.adapter = to_string(cfg.filter.kind);
    r.seed = cfg.seed;
    if (cfg.filter.kind == Adapter::builtin && fs::exists(cfg.model_path()))
        r.model_file_hash = content_id(read_file(cfg.model_path()));
    r.preprocess = read_stage_ledger(cfg.out() / "stage_preprocess.json");
    r.baseline = read_stage_ledger(cfg.out() / "stage_baseline.json");
    r.attack_stage = read_stage_ledger(cfg.out() / "stage_attack.json");
    r.evaluate = read_stage_ledger(cfg.out() / "stage_evaluate.json");
    r.misclassification = misclassification_rate(r.baseline.ham, r.baseline.sent);
    r.success = success_rate(r.evaluate.ham, r.evaluate.sent);
    r.end_to_end = end_to_end_rate(r.baseline.ham, r.evaluate.ham, r.baseline.sent);

    for (const auto& id : list_eml_ids(cfg.modified_dir())) {
        EmailMessage pre = parse_email(read_file(cfg.preprocessed_dir() / (id + ".eml")));
        EmailMessage post = parse_email(read_file(cfg.modified_dir() / (id + ".eml")));
        std::string pre_text = extract_text(pre);
        std::string post_text = extract_text(post);
        std::string pre_norm = normalize_text(pre_text);
        std::string post_norm = normalize_text(post_text);
        SimilarityRecord rec;
        rec.id = id;
        rec.cosine = cosine(embed(pre_norm), embed(post_norm));
        rec.pre_len = pre_norm.size();
        rec.post_len = post_norm.size();
        r.similarities.push_back(std::move(rec));
        r.links_pre += url_count(pre_text);
        r.links_post += url_count(post_text);
    }

    for (const auto& line : read_jsonl(cfg.out() / "outcomes.jsonl"))
        if (line.value("outcome", "") == "rejected")
            ++r.rejections[to_lower(trim(line.value("keyword", "unspecified")))];

    if (fs::exists(cfg.out() / "cost.json")) {
        nlohmann::json cj = nlohmann::json::parse(read_file(cfg.out() / "cost.json"));
        r.cost.requests = cj.value("requests", std::uint64_t{0});
        r.cost.input_units = cj.value("input_units", std::uint64_t{0});
        r.cost.output_units = cj.value("output_units", std::uint64_t{0});
        r.cost.price_in = cj.value("price_in", r.cost.price_in);
        r.cost.price_out = cj.value("price_out", r.cost.price_out);
    }
    return r;
}

}  // namespace detail

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    std::vector<std::string> ids = detail::list_eml_ids(cfg.modified_dir());
    if (ids.empty()) {
        log << "evaluate: no modified dataset under " << cfg.modified_dir().string()
            << "; run attack first\n";
        return kExitConfig;
    }
    BayesModel model;
    if (cfg.filter.kind == Adapter::builtin) {
        if (!fs::exists(cfg.model_path())) {
            log << "evaluate: model file missing: " << cfg.model_path().string() << "\n";
            return kExitConfig;
        }
        model = load_model(cfg.model_path());
    }

    detail::BatchOutcome batch =
        detail::classify_batch(cfg, "evaluate", cfg.modified_dir(), ids,
                               cfg.filter.kind == Adapter::builtin ? &model : nullptr, log);
    if (batch.transport_exhausted) {
        log << "evaluate: every pending check failed with a transport error; state saved\n";
        return kExitTransport;
    }

    StageLedger attack_stage = detail::read_stage_ledger(cfg.out() / "stage_attack.json");
    StageLedger stage;
    stage.dataset = cfg.dataset;
    stage.stage = Stage::robustness;
    stage.raw = attack_stage.post_llm;  // "Initial" of the third step
    for (const auto& id : ids) {
        auto it = batch.verdicts.find(id);
        if (it == batch.verdicts.end()) continue;
        ++stage.sent;
        if (it->second.label == Label::ham)
            ++stage.ham;
        else
            ++stage.spam;
    }
    detail::write_stage_ledger(cfg.out() / "stage_evaluate.json", stage);

    RunReport report = detail::assemble_report(cfg);
    build_report(report, cfg.out());
    log << "evaluate: sent=" << stage.sent << " ham=" << stage.ham << " spam=" << stage.spam
        << " success_rate=" << report.success << "%"
        << " end_to_end_rate=" << report.end_to_end << "%\n";
    log << "evaluate: mean cosine " << mean_cosine(report.similarities) << " over "
        << report.similarities.size() << " pairs\n";
    return kExitOk;
}

// --- report: recount and rebuild ---------------------------------------------------------

inline int cmd_report(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    for (const char* needed : {"stage_preprocess.json", "stage_baseline.json",
                               "stage_attack.json", "stage_evaluate.json"}) {
        if (!fs::exists(cfg.out() / needed)) {
            log << "report: missing " << needed << "; finish the pipeline first\n";
            return kExitConfig;
        }
    }

    // aggregate counts must equal a recount of the per-email ledger lines
    std::map<std::string, std::map<std::string, std::uint64_t>> recount;
    for (const auto& line : read_jsonl(cfg.out() / "ledger.jsonl"))
        ++recount[line.at("stage").get<std::string>()][line.at("outcome").get<std::string>()];

    StageLedger pre = detail::read_stage_ledger(cfg.out() / "stage_preprocess.json");
    StageLedger base = detail::read_stage_ledger(cfg.out() / "stage_baseline.json");
    StageLedger att = detail::read_stage_ledger(cfg.out() / "stage_attack.json");
    StageLedger ev = detail::read_stage_ledger(cfg.out() / "stage_evaluate.json");

    bool ok = true;
    auto expect = [&](const char* what, std::uint64_t ledger_count, std::uint64_t stage_count) {
        if (ledger_count != stage_count) {
            log << "report: mismatch for " << what << ": ledger recount " << ledger_count
                << " != stage ledger " << stage_count << "\n";
            ok = false;
        }
    };
    expect("preprocess written", recount["preprocess"]["written"], pre.post_mod);
    expect("baseline ham", recount["baseline"]["ham"], base.ham);
    expect("baseline spam", recount["baseline"]["spam"], base.spam);
    expect("baseline sent", recount["baseline"]["ham"] + recount["baseline"]["spam"], base.sent);
    expect("attack success", recount["attack"]["success"], att.post_llm);
    expect("attack rejected", recount["attack"]["rejected"], att.rejected);
    expect("attack failed", recount["attack"]["failed"], att.failed);
    expect("evaluate ham", recount["evaluate"]["ham"], ev.ham);
    expect("evaluate spam", recount["evaluate"]["spam"], ev.spam);
    expect("evaluate sent", recount["evaluate"]["ham"] + recount["evaluate"]["spam"], ev.sent);
    if (!ok) return kExitFailure;

    RunReport report = detail::assemble_report(cfg);
    build_report(report, cfg.out());
    log << "report: rebuilt report.json (success_rate=" << report.success
        << "%, end_to_end_rate=" << report.end_to_end << "%)\n";
    return kExitOk;
}

}  // namespace gauntlet
