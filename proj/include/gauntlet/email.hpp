#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gauntlet/errors.hpp"
#include "gauntlet/util.hpp"

namespace gauntlet {

// One unfolded RFC 2822 header field. Name comparisons are case-insensitive,
// the stored spelling is preserved.
struct HeaderField {
    std::string name;
    std::string value;

    bool operator==(const HeaderField&) const = default;
};

enum class ContentKind { plain, html, multipart_flattened };

inline const char* to_string(ContentKind k) {
    switch (k) {
        case ContentKind::plain: return "plain";
        case ContentKind::html: return "html";
        case ContentKind::multipart_flattened: return "multipart-flattened";
    }
    return "plain";
}

// Headers plus the raw body bytes after the first blank line of the source.
// Body bytes are never rewritten by parsing; text extraction happens on demand.
struct EmailMessage {
    std::vector<HeaderField> headers;
    std::string body;
    ContentKind content_kind = ContentKind::plain;

    bool operator==(const EmailMessage&) const = default;

    const HeaderField* find_header(std::string_view name) const {
        for (const auto& h : headers)
            if (iequal(h.name, name)) return &h;
        return nullptr;
    }

    std::string header_value(std::string_view name) const {
        const HeaderField* h = find_header(name);
        return h ? h->value : std::string();
    }

    std::vector<std::string> header_values(std::string_view name) const {
        std::vector<std::string> out;
        for (const auto& h : headers)
            if (iequal(h.name, name)) out.push_back(h.value);
        return out;
    }
};

namespace detail {

inline bool valid_header_name(std::string_view name) {
    if (name.empty()) return false;
    for (char c : name)
        if (c <= 32 || c >= 127 || c == ':') return false;
    return true;
}

inline std::string_view strip_leading_wsp(std::string_view s) {
    size_t b = 0;
    while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
    return s.substr(b);
}

// Media type of a Content-Type value, lowercased ("text/plain", "multipart/mixed").
inline std::string media_type(std::string_view content_type) {
    size_t semi = content_type.find(';');
    return to_lower(trim(content_type.substr(0, semi)));
}

// Extracts one parameter (e.g. boundary) from a Content-Type value.
inline std::optional<std::string> content_type_param(std::string_view value, std::string_view key) {
    size_t pos = value.find(';');
    while (pos != std::string_view::npos) {
        std::string_view rest = value.substr(pos + 1);
        size_t next = rest.find(';');
        std::string_view piece = trim(rest.substr(0, next));
        size_t eq = piece.find('=');
        if (eq != std::string_view::npos && iequal(trim(piece.substr(0, eq)), key)) {
            std::string_view v = trim(piece.substr(eq + 1));
            if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
            return std::string(v);
        }
        pos = (next == std::string_view::npos) ? next : pos + 1 + next;
    }
    return std::nullopt;
}

inline ContentKind detect_content_kind(const std::vector<HeaderField>& headers) {
    for (const auto& h : headers) {
        if (!iequal(h.name, "Content-Type")) continue;
        std::string mt = media_type(h.value);
        if (mt.rfind("multipart/", 0) == 0) return ContentKind::multipart_flattened;
        if (mt == "text/html") return ContentKind::html;
        return ContentKind::plain;
    }
    return ContentKind::plain;
}

inline int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
}

inline std::string qp_decode(std::string_view in) {
    std::string out;
    out.reserve(in.size());
    size_t i = 0;
    while (i < in.size()) {
        char c = in[i];
        if (c != '=') {
            out.push_back(c);
            ++i;
            continue;
        }
        // soft break: "=\r\n" or "=\n"
        if (i + 1 < in.size() && in[i + 1] == '\n') {
            i += 2;
            continue;
        }
        if (i + 2 < in.size() && in[i + 1] == '\r' && in[i + 2] == '\n') {
            i += 3;
            continue;
        }
        if (i + 2 >= in.size())
            throw ParseError(ParseErrorKind::undecodable_part, "truncated quoted-printable escape");
        int hi = hex_digit(in[i + 1]);
        int lo = hex_digit(in[i + 2]);
        if (hi < 0 || lo < 0)
            throw ParseError(ParseErrorKind::undecodable_part, "bad quoted-printable escape");
        out.push_back(static_cast<char>(hi * 16 + lo));
        i += 3;
    }
    return out;
}

inline std::string base64_decode(std::string_view in) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    out.reserve(in.size() / 4 * 3);
    int quad[4];
    int have = 0;
    bool padded = false;
    for (char c : in) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n') continue;
        if (c == '=') {
            padded = true;
            continue;
        }
        int v = value_of(c);
        if (v < 0) throw ParseError(ParseErrorKind::undecodable_part, "invalid base64 byte");
        if (padded)
            throw ParseError(ParseErrorKind::undecodable_part, "base64 data after padding");
        quad[have++] = v;
        if (have == 4) {
            out.push_back(static_cast<char>((quad[0] << 2) | (quad[1] >> 4)));
            out.push_back(static_cast<char>(((quad[1] & 0xF) << 4) | (quad[2] >> 2)));
            out.push_back(static_cast<char>(((quad[2] & 0x3) << 6) | quad[3]));
            have = 0;
        }
    }
    if (have == 1) throw ParseError(ParseErrorKind::undecodable_part, "dangling base64 sextet");
    if (have == 2) out.push_back(static_cast<char>((quad[0] << 2) | (quad[1] >> 4)));
    if (have == 3) {
        out.push_back(static_cast<char>((quad[0] << 2) | (quad[1] >> 4)));
        out.push_back(static_cast<char>(((quad[1] & 0xF) << 4) | (quad[2] >> 2)));
    }
    return out;
}

}  // namespace detail

// Parses an RFC 2822 message: folded headers are unfolded to single-space joins,
// lone-LF line endings are accepted, the body is everything after the first
// blank line, byte for byte.
inline EmailMessage parse_email(std::string_view raw) {
    if (raw.empty())
        throw ParseError(ParseErrorKind::no_header_body_separator, "empty input");
    EmailMessage msg;
    size_t pos = 0;
    bool separator_seen = false;
    while (pos <= raw.size()) {
        if (pos == raw.size()) break;  // ran out of input before a blank line
        size_t nl = raw.find('\n', pos);
        std::string_view line =
            (nl == std::string_view::npos) ? raw.substr(pos) : raw.substr(pos, nl - pos);
        size_t next = (nl == std::string_view::npos) ? raw.size() : nl + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) {
            separator_seen = true;
            pos = next;
            break;
        }
        if (line.front() == ' ' || line.front() == '\t') {
            if (msg.headers.empty())
                throw ParseError(ParseErrorKind::malformed_header,
                                 "continuation line before any header");
            std::string_view cont = detail::strip_leading_wsp(line);
            if (!cont.empty()) {
                msg.headers.back().value += ' ';
                msg.headers.back().value += cont;
            }
        } else {
            size_t colon = line.find(':');
            if (colon == std::string_view::npos)
                throw ParseError(ParseErrorKind::malformed_header,
                                 "header line without colon");
            std::string_view name = line.substr(0, colon);
            if (!detail::valid_header_name(name))
                throw ParseError(ParseErrorKind::malformed_header,
                                 "invalid header name: " + std::string(name));
            std::string_view value = detail::strip_leading_wsp(line.substr(colon + 1));
            msg.headers.push_back({std::string(name), std::string(value)});
        }
        pos = next;
    }
    if (!separator_seen)
        throw ParseError(ParseErrorKind::no_header_body_separator,
                         "no blank line between headers and body");
    msg.body.assign(raw.substr(pos));
    msg.content_kind = detail::detect_content_kind(msg.headers);
    return msg;
}

// Emits "Name: value\r\n" per header in stored order, a blank line, then the
// body verbatim.
inline std::string serialize_eml(const EmailMessage& msg) {
    std::string out;
    size_t cap = msg.body.size() + 2;
    for (const auto& h : msg.headers) cap += h.name.size() + h.value.size() + 4;
    out.reserve(cap);
    for (const auto& h : msg.headers) {
        out += h.name;
        out += ": ";
        out += h.value;
        out += "\r\n";
    }
    out += "\r\n";
    out += msg.body;
    return out;
}

namespace detail {

// Splits a multipart body at "--boundary" lines; returns the part byte ranges.
inline std::vector<std::string> split_multipart(std::string_view body, std::string_view boundary) {
    std::string open = "--" + std::string(boundary);
    std::string close = open + "--";
    std::vector<std::string> parts;
    bool in_part = false;
    size_t part_begin = 0;
    size_t pos = 0;
    auto close_part = [&](size_t line_start) {
        // the line break preceding the delimiter belongs to the delimiter
        size_t end = line_start;
        if (end > part_begin && body[end - 1] == '\n') --end;
        if (end > part_begin && body[end - 1] == '\r') --end;
        parts.emplace_back(body.substr(part_begin, end - part_begin));
    };
    while (pos <= body.size()) {
        size_t nl = body.find('\n', pos);
        std::string_view line =
            (nl == std::string_view::npos) ? body.substr(pos) : body.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        std::string_view stripped = trim(line);
        if (stripped == close || stripped.rfind(close, 0) == 0) {
            if (in_part) close_part(pos);
            in_part = false;
            break;
        }
        if (stripped == open) {
            if (in_part) close_part(pos);
            in_part = true;
            part_begin = (nl == std::string_view::npos) ? body.size() : nl + 1;
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    if (in_part) parts.emplace_back(body.substr(part_begin));  // no closing delimiter, be lenient
    if (parts.empty())
        throw ParseError(ParseErrorKind::undecodable_part, "multipart boundary not found in body");
    return parts;
}

inline std::string decode_transfer_encoding(const std::vector<HeaderField>& headers,
                                            std::string_view body) {
    std::string cte;
    for (const auto& h : headers)
        if (iequal(h.name, "Content-Transfer-Encoding")) {
            cte = to_lower(trim(h.value));
            break;
        }
    if (cte.empty() || cte == "7bit" || cte == "8bit" || cte == "binary")
        return std::string(body);
    if (cte == "quoted-printable") return qp_decode(body);
    if (cte == "base64") return base64_decode(body);
    throw ParseError(ParseErrorKind::undecodable_part, "unsupported transfer encoding: " + cte);
}

inline std::string extract_text_impl(const std::vector<HeaderField>& headers,
                                     std::string_view body, int depth) {
    if (depth > 8)
        throw ParseError(ParseErrorKind::undecodable_part, "multipart nesting too deep");
    std::string content_type;
    for (const auto& h : headers)
        if (iequal(h.name, "Content-Type")) {
            content_type = h.value;
            break;
        }
    std::string mt = media_type(content_type);
    if (mt.rfind("multipart/", 0) == 0) {
        auto boundary = content_type_param(content_type, "boundary");
        if (!boundary || boundary->empty())
            throw ParseError(ParseErrorKind::undecodable_part, "multipart without boundary");
        std::string flattened;
        for (const std::string& part : split_multipart(body, *boundary)) {
            EmailMessage pm;
            try {
                pm = parse_email(part);
            } catch (const ParseError&) {
                throw ParseError(ParseErrorKind::undecodable_part, "malformed multipart part");
            }
            std::string part_mt = media_type(pm.header_value("Content-Type"));
            if (part_mt.rfind("multipart/", 0) == 0) {
                flattened += extract_text_impl(pm.headers, pm.body, depth + 1);
            } else if (part_mt.empty() || part_mt == "text/plain" || part_mt == "text/html") {
                flattened += decode_transfer_encoding(pm.headers, pm.body);
            }
            // non-text parts are dropped
        }
        return flattened;
    }
    return decode_transfer_encoding(headers, body);
}

}  // namespace detail

// The attack/classification-facing body text: multiparts flattened to the
// concatenation of their text/plain and text/html parts, transfer encodings
// decoded, invalid UTF-8 replaced. Throws ParseError(undecodable_part) when a
// text part cannot be decoded; such entries are filtered out of the corpus.
inline std::string extract_text(const EmailMessage& msg) {
    return utf8_lossy(detail::extract_text_impl(msg.headers, msg.body, 0));
}

// Never throws; falls back to the raw body bytes when decoding fails.
inline std::string extract_text_lossy(const EmailMessage& msg) {
    try {
        return extract_text(msg);
    } catch (const ParseError&) {
        return utf8_lossy(msg.body);
    }
}

}  // namespace gauntlet
