#pragma once

// Seeded synthetic mail corpus with disjoint-leaning spam/ham vocabularies.
// Every byte is a function of the seed, so fixtures are reproducible.

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gauntlet/corpus.hpp"
#include "gauntlet/email.hpp"

namespace gauntlet::testing {

inline const std::vector<std::string>& spam_vocab() {
    static const std::vector<std::string> v = {
        "free",     "winner",   "cash",     "prize",    "bonus",    "viagra",  "pills",
        "casino",   "jackpot",  "lottery",  "million",  "urgent",   "claim",   "offer",
        "discount", "cheap",    "deal",     "limited",  "exclusive", "guarantee",
        "investment", "profit", "earn",     "income",   "rich",     "wealth",  "credit",
        "loan",     "mortgage", "refinance", "pharmacy", "prescription", "enlargement",
        "miracle",  "weight",   "loss",     "unsubscribe", "click",  "buy",     "order",
        "shipping", "trial",    "risk",     "opportunity", "selected", "congratulations",
        "nigeria",  "transfer", "funds",    "beneficiary"};
    return v;
}

inline const std::vector<std::string>& ham_vocab() {
    static const std::vector<std::string> v = {
        "meeting",  "agenda",    "minutes",  "project",  "review",   "deadline", "report",
        "budget",   "quarterly", "schedule", "interview", "candidate", "resume",  "lunch",
        "coffee",   "conference", "travel",  "flight",   "hotel",     "invoice",  "contract",
        "proposal", "draft",     "feedback", "revision", "merge",     "branch",   "commit",
        "release",  "deploy",    "server",   "database", "backlog",   "sprint",   "standup",
        "holiday",  "vacation",  "birthday", "family",   "weekend",   "dinner",   "recipe",
        "garden",   "weather",   "concert",  "tickets",  "museum",    "library",  "homework",
        "thesis"};
    return v;
}

inline const std::vector<std::string>& shared_vocab() {
    static const std::vector<std::string> v = {
        "the",   "and",    "for",   "you",    "your",  "with",  "this",   "that",  "have",
        "from",  "mail",   "email", "please", "thanks", "hello", "regards", "today", "week",
        "time",  "people", "about", "more",   "make",  "just",  "know",   "take",  "into",
        "year",  "good",   "some",  "could",  "them",  "other", "than",   "then",  "look",
        "only",  "come",   "over",  "think",  "also",  "back",  "after",  "work",  "first",
        "well",  "even",   "want",  "because", "these"};
    return v;
}

struct SyntheticOptions {
    size_t count = 200;
    std::uint64_t seed = 42;
    Label label = Label::spam;
    size_t min_words = 30;
    size_t max_words = 80;
    double class_word_share = 0.8;
};

inline std::vector<EmailMessage> synthetic_messages(const SyntheticOptions& opts) {
    const auto& klass = opts.label == Label::spam ? spam_vocab() : ham_vocab();
    const auto& shared = shared_vocab();
    std::mt19937_64 rng(opts.seed ^ (opts.label == Label::spam ? 0x5350414dULL : 0x48414dULL));
    std::uniform_int_distribution<size_t> word_count(opts.min_words, opts.max_words);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    std::vector<EmailMessage> out;
    out.reserve(opts.count);
    for (size_t i = 0; i < opts.count; ++i) {
        size_t n = word_count(rng);
        std::string body;
        for (size_t w = 0; w < n; ++w) {
            const auto& pool = coin(rng) < opts.class_word_share ? klass : shared;
            if (!body.empty()) body += (w % 12 == 0) ? "\r\n" : " ";
            body += pool[rng() % pool.size()];
        }
        body += "\r\n";
        std::string subject = klass[rng() % klass.size()] + " " + shared[rng() % shared.size()];
        EmailMessage msg;
        std::string sender = opts.label == Label::spam
                                 ? "promo" + std::to_string(i) + "@offers.example"
                                 : "colleague" + std::to_string(i) + "@work.example";
        msg.headers = {
            {"From", sender},
            {"To", "someone@work.example"},
            {"Subject", subject},
            {"Date", "Mon, 01 Jan 2024 10:00:00 +0000"},
        };
        msg.body = body;
        out.push_back(std::move(msg));
    }
    return out;
}

inline void write_corpus_dir(const std::vector<EmailMessage>& messages,
                             const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (size_t i = 0; i < messages.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.eml", i);
        write_file(dir / name, serialize_eml(messages[i]));
    }
}

// Unique per-test scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("gauntlet-" + tag + "-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    static std::atomic<int>& counter() {
        static std::atomic<int> c{0};
        return c;
    }
};

}  // namespace gauntlet::testing
