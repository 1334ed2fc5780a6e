#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gauntlet/errors.hpp"

namespace gauntlet {

// One per-email provenance line; the aggregate tables must recount from these.
struct RunLedgerEntry {
    std::string id;
    std::string stage;    // preprocess | baseline | attack | evaluate
    std::string outcome;  // written | filtered | ham | spam | unsent | success | rejected | failed
    std::string detail;
    std::string ts;
};

inline nlohmann::json to_json(const RunLedgerEntry& e) {
    nlohmann::json j{{"id", e.id}, {"stage", e.stage}, {"outcome", e.outcome}, {"ts", e.ts}};
    if (!e.detail.empty()) j["detail"] = e.detail;
    return j;
}

inline RunLedgerEntry ledger_entry_from_json(const nlohmann::json& j) {
    RunLedgerEntry e;
    e.id = j.at("id").get<std::string>();
    e.stage = j.at("stage").get<std::string>();
    e.outcome = j.at("outcome").get<std::string>();
    e.detail = j.value("detail", std::string());
    e.ts = j.value("ts", std::string());
    return e;
}

// Append-only JSON Lines file; appends are serialized.
class JsonlWriter {
  public:
    explicit JsonlWriter(std::filesystem::path path) : path_(std::move(path)) {}

    void append(const nlohmann::json& j) {
        std::lock_guard<std::mutex> lock(mu_);
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        if (!out) throw IoError("cannot append to " + path_.string());
        out << j.dump() << "\n";
        if (!out) throw IoError("append failed: " + path_.string());
    }

    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
    std::mutex mu_;
};

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::vector<nlohmann::json> out;
    if (!std::filesystem::exists(path)) return out;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw IoError("malformed JSONL line in " + path.string());
        out.push_back(std::move(j));
    }
    return out;
}

}  // namespace gauntlet
