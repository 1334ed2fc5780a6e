#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gauntlet/email.hpp"
#include "gauntlet/errors.hpp"
#include "gauntlet/util.hpp"

namespace gauntlet {

enum class Label { spam, ham };

inline const char* to_string(Label l) { return l == Label::spam ? "spam" : "ham"; }

enum class DatasetVariant { original, minimal };

inline const char* to_string(DatasetVariant v) {
    return v == DatasetVariant::original ? "original" : "minimal";
}

inline DatasetVariant variant_from_string(std::string_view s) {
    if (s == "original") return DatasetVariant::original;
    if (s == "minimal") return DatasetVariant::minimal;
    throw ConfigError("unknown dataset variant: " + std::string(s));
}

// One corpus file. The id is the FNV-1a hash of the raw file bytes, so reloads
// of the same directory produce identical ids.
struct CorpusEntry {
    std::string id;
    std::string source_path;
    Label label = Label::spam;
    EmailMessage message;
};

struct Rejection {
    std::string path;
    std::string reason;
};

struct LoadResult {
    std::vector<CorpusEntry> entries;
    std::vector<Rejection> rejections;
    size_t files_visited = 0;
};

// --- pre-processing transforms ------------------------------------------------

// Bcc/Cc/From/To values become "<name>@example.com"; everything else untouched.
inline EmailMessage anonymize_headers(EmailMessage msg) {
    static const char* targets[] = {"Bcc", "Cc", "From", "To"};
    for (auto& h : msg.headers) {
        for (const char* t : targets) {
            if (iequal(h.name, t)) {
                h.value = to_lower(t) + "@example.com";
                break;
            }
        }
    }
    return msg;
}

// Replaces all Date headers with a single one at the first Date position (or
// appends one), formatted per RFC 2822 from `now`.
inline EmailMessage refresh_date(EmailMessage msg, std::int64_t now) {
    std::string stamp = rfc2822_time(now);
    bool placed = false;
    std::vector<HeaderField> kept;
    kept.reserve(msg.headers.size() + 1);
    for (auto& h : msg.headers) {
        if (iequal(h.name, "Date")) {
            if (!placed) {
                kept.push_back({h.name, stamp});
                placed = true;
            }
            continue;
        }
        kept.push_back(std::move(h));
    }
    if (!placed) kept.push_back({"Date", stamp});
    msg.headers = std::move(kept);
    return msg;
}

// Keeps only {Date, From, Bcc, Cc, Subject, To}, original relative order.
// Throws when Date or From is missing afterwards; such entries are filtered out.
inline EmailMessage minimize_headers(EmailMessage msg) {
    static const char* allowed[] = {"Date", "From", "Bcc", "Cc", "Subject", "To"};
    std::vector<HeaderField> kept;
    for (auto& h : msg.headers) {
        for (const char* a : allowed) {
            if (iequal(h.name, a)) {
                kept.push_back(std::move(h));
                break;
            }
        }
    }
    msg.headers = std::move(kept);
    if (!msg.find_header("Date"))
        throw ParseError(ParseErrorKind::missing_mandatory_header, "Date");
    if (!msg.find_header("From"))
        throw ParseError(ParseErrorKind::missing_mandatory_header, "From");
    return msg;
}

inline EmailMessage apply_variant(EmailMessage msg, DatasetVariant variant, std::int64_t now) {
    if (variant == DatasetVariant::minimal) msg = minimize_headers(std::move(msg));
    return anonymize_headers(refresh_date(std::move(msg), now));
}

// --- loading -------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + p.string());
    return data;
}

inline void write_file(const std::filesystem::path& p, std::string_view bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + p.string());
}

// Loads every regular file under root (recursively, sorted by path). Files that
// fail to parse or whose text parts cannot be decoded are logged as rejections,
// never fatal. |entries| + |rejections| == files_visited.
inline LoadResult load_corpus(const std::filesystem::path& root, Label label) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
    std::vector<fs::path> files;
    for (const auto& de :
         fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied))
        if (de.is_regular_file()) files.push_back(de.path());
    std::sort(files.begin(), files.end());

    LoadResult result;
    result.files_visited = files.size();
    for (const auto& p : files) {
        try {
            std::string raw = read_file(p);
            CorpusEntry entry;
            entry.id = content_id(raw);
            entry.source_path = p.string();
            entry.label = label;
            entry.message = parse_email(raw);
            extract_text(entry.message);  // undecodable bodies get filtered here
            result.entries.push_back(std::move(entry));
        } catch (const ParseError& e) {
            result.rejections.push_back({p.string(), to_string(e.kind)});
        } catch (const IoError&) {
            result.rejections.push_back({p.string(), "io-error"});
        }
    }
    return result;
}

}  // namespace gauntlet
