#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "gauntlet/bayes.hpp"
#include "gauntlet/email.hpp"
#include "gauntlet/errors.hpp"
#include "gauntlet/net.hpp"
#include "gauntlet/util.hpp"

namespace gauntlet {

inline constexpr std::string_view kGauntletIdHeader = "X-Gauntlet-Id";

// Where verdicts come from: the builtin Bayes filter, a spamd daemon, or the
// live SMTP-submit / REST-retrieve path.
struct FilterEndpoint {
    Adapter kind = Adapter::builtin;
    std::string spamd_addr;  // kind == spamd
    std::string smtp_addr;   // kind == live
    std::string api_base;    // kind == live, scheme://host:port
    int timeout_ms = 10000;
    size_t max_message_bytes = 512 * 1024;
    size_t max_inflight = 8;  // concurrent checks against the endpoint
    // REST paths are configuration; the verdict payload contract is documented
    // in the README.
    std::string api_list_path = "/api/v1/messages";
    std::string api_message_path = "/api/v1/message/{id}";
    std::string envelope_from = "pipeline@example.com";
    std::string envelope_to = "inbox@example.com";
};

// --- spamd (SPAMC/1.5 CHECK) -----------------------------------------------------

// Sends CHECK with exact Content-length framing and maps the response's
// "Spam: <True|False> ; <score> / <threshold>" line to a Verdict.
inline Verdict spamd_check(std::string_view addr, const EmailMessage& msg, int timeout_ms = 10000,
                           size_t max_message_bytes = 512 * 1024) {
    std::string payload = serialize_eml(msg);
    if (payload.size() > max_message_bytes)
        throw ProtocolError("message exceeds max_message_bytes (" +
                            std::to_string(payload.size()) + " bytes)");
    TcpClient conn(addr, timeout_ms);
    std::string request = "CHECK SPAMC/1.5\r\nContent-length: " + std::to_string(payload.size()) +
                          "\r\n\r\n" + payload;
    conn.write_all(request);
    conn.shutdown_write();

    std::string status = conn.read_line();
    // "SPAMD/<version> <code> <message>"
    if (status.rfind("SPAMD/", 0) != 0) throw ProtocolError("bad spamd status line: " + status);
    size_t sp1 = status.find(' ');
    size_t sp2 = status.find(' ', sp1 == std::string::npos ? std::string::npos : sp1 + 1);
    if (sp1 == std::string::npos || sp2 == std::string::npos)
        throw ProtocolError("bad spamd status line: " + status);
    int code = 0;
    try {
        code = std::stoi(status.substr(sp1 + 1, sp2 - sp1 - 1));
    } catch (const std::exception&) {
        throw ProtocolError("bad spamd status code: " + status);
    }
    if (code != 0) throw ProtocolError("spamd error " + std::to_string(code) + ": " + status);

    std::optional<std::string> spam_line;
    while (true) {
        std::string line;
        try {
            line = conn.read_line();
        } catch (const TransportError&) {
            break;  // EOF after headers is fine
        }
        if (line.empty()) break;
        if (line.size() > 5 && iequal(std::string_view(line).substr(0, 5), "Spam:"))
            spam_line = line.substr(5);
    }
    if (!spam_line) throw ProtocolError("spamd response without Spam header");

    // "<True|False> ; <score> / <threshold>"
    size_t semi = spam_line->find(';');
    size_t slash = spam_line->find('/', semi == std::string::npos ? 0 : semi);
    if (semi == std::string::npos || slash == std::string::npos)
        throw ProtocolError("unparseable Spam line:" + *spam_line);
    std::string_view flag = trim(std::string_view(*spam_line).substr(0, semi));
    std::string score_str(trim(std::string_view(*spam_line).substr(semi + 1, slash - semi - 1)));
    std::string threshold_str(trim(std::string_view(*spam_line).substr(slash + 1)));
    bool is_spam;
    if (iequal(flag, "True") || iequal(flag, "Yes"))
        is_spam = true;
    else if (iequal(flag, "False") || iequal(flag, "No"))
        is_spam = false;
    else
        throw ProtocolError("unparseable Spam flag:" + *spam_line);
    try {
        size_t used = 0;
        double score = std::stod(score_str, &used);
        double threshold = std::stod(threshold_str, &used);
        Verdict v;
        v.score = score;
        v.threshold = threshold;
        v.label = is_spam ? Label::spam : Label::ham;
        v.adapter = Adapter::spamd;
        return v;
    } catch (const std::exception&) {
        throw ProtocolError("unparseable Spam numbers:" + *spam_line);
    }
}

// --- SMTP submission ----------------------------------------------------------------

namespace detail {

// Reads one (possibly multiline) SMTP reply; returns the code and final text.
inline std::pair<int, std::string> read_smtp_reply(TcpClient& conn) {
    while (true) {
        std::string line = conn.read_line();
        if (line.size() < 3 || !std::isdigit(static_cast<unsigned char>(line[0])) ||
            !std::isdigit(static_cast<unsigned char>(line[1])) ||
            !std::isdigit(static_cast<unsigned char>(line[2])))
            throw ProtocolError("malformed SMTP reply: " + line);
        int code = (line[0] - '0') * 100 + (line[1] - '0') * 10 + (line[2] - '0');
        if (line.size() > 3 && line[3] == '-') continue;  // continuation
        return {code, line};
    }
}

inline void expect_smtp(TcpClient& conn, int expected) {
    auto [code, line] = read_smtp_reply(conn);
    if (code == expected) return;
    if (code >= 400) throw SmtpRejectError(code, line);
    throw ProtocolError("unexpected SMTP reply: " + line);
}

// Doubles a leading dot on every line (RFC 5321 §4.5.2).
inline std::string dot_stuff(std::string_view data) {
    std::string out;
    out.reserve(data.size() + 8);
    bool at_line_start = true;
    for (char c : data) {
        if (at_line_start && c == '.') out.push_back('.');
        out.push_back(c);
        at_line_start = (c == '\n');
    }
    return out;
}

}  // namespace detail

// Minimal EHLO/MAIL/RCPT/DATA/QUIT dialogue. The message goes out byte-exact
// except for dot-stuffing and, when absent, an appended X-Gauntlet-Id header
// (content hash) whose value is returned for later correlation.
inline std::string smtp_submit(std::string_view addr, const EmailMessage& msg,
                               std::string_view envelope_from, std::string_view envelope_to,
                               int timeout_ms = 10000) {
    EmailMessage to_send = msg;
    std::string id = to_send.header_value(kGauntletIdHeader);
    if (id.empty()) {
        id = content_id(serialize_eml(msg));
        to_send.headers.push_back({std::string(kGauntletIdHeader), id});
    }
    std::string payload = serialize_eml(to_send);

    TcpClient conn(addr, timeout_ms);
    detail::expect_smtp(conn, 220);
    conn.write_all("EHLO gauntlet.invalid\r\n");
    detail::expect_smtp(conn, 250);
    conn.write_all("MAIL FROM:<" + std::string(envelope_from) + ">\r\n");
    detail::expect_smtp(conn, 250);
    conn.write_all("RCPT TO:<" + std::string(envelope_to) + ">\r\n");
    detail::expect_smtp(conn, 250);
    conn.write_all("DATA\r\n");
    detail::expect_smtp(conn, 354);
    std::string data = detail::dot_stuff(payload);
    if (data.empty() || data.back() != '\n') data += "\r\n";
    data += ".\r\n";
    conn.write_all(data);
    detail::expect_smtp(conn, 250);
    conn.write_all("QUIT\r\n");
    try {
        detail::expect_smtp(conn, 221);
    } catch (const GauntletError&) {
        // QUIT acknowledgement is best-effort
    }
    return id;
}

// --- verdict retrieval over REST -----------------------------------------------------

namespace detail {

inline nlohmann::json http_get_json(httplib::Client& client, const std::string& path) {
    httplib::Result res = client.Get(path);
    if (!res) throw TransportError("GET " + path + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw ProtocolError("GET " + path + ": HTTP " + std::to_string(res->status));
    nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw ProtocolError("GET " + path + ": response is not JSON");
    return j;
}

inline std::string replace_id(std::string path_template, const std::string& id) {
    size_t pos = path_template.find("{id}");
    if (pos != std::string::npos) path_template.replace(pos, 4, id);
    return path_template;
}

}  // namespace detail

// Lists the server's messages, pulls each one's spam status, and correlates by
// the X-Gauntlet-Id header. Every submitted id must come back; otherwise
// MissingVerdictError names the absentees.
inline std::vector<std::pair<std::string, Verdict>> fetch_verdicts(
    const FilterEndpoint& endpoint, const std::vector<std::string>& submitted_ids) {
    httplib::Client client(endpoint.api_base);
    client.set_connection_timeout(endpoint.timeout_ms / 1000, (endpoint.timeout_ms % 1000) * 1000);
    client.set_read_timeout(endpoint.timeout_ms / 1000, (endpoint.timeout_ms % 1000) * 1000);

    nlohmann::json listing = detail::http_get_json(client, endpoint.api_list_path);
    if (!listing.contains("messages") || !listing["messages"].is_array())
        throw ProtocolError("message listing lacks a messages array");

    std::map<std::string, Verdict> by_gauntlet_id;
    for (const auto& summary : listing["messages"]) {
        if (!summary.contains("ID")) throw ProtocolError("message summary lacks ID");
        std::string server_id = summary["ID"].get<std::string>();
        nlohmann::json detail_payload = detail::http_get_json(
            client, detail::replace_id(endpoint.api_message_path, server_id));

        std::string gid;
        if (detail_payload.contains("Headers") && detail_payload["Headers"].is_object()) {
            for (const auto& [name, value] : detail_payload["Headers"].items()) {
                if (!iequal(name, kGauntletIdHeader)) continue;
                if (value.is_array() && !value.empty() && value[0].is_string())
                    gid = value[0].get<std::string>();
                else if (value.is_string())
                    gid = value.get<std::string>();
            }
        }
        if (gid.empty()) continue;  // not one of ours

        if (!detail_payload.contains("Spam") || !detail_payload["Spam"].is_object())
            throw ProtocolError("message " + server_id + " lacks a Spam status object");
        const auto& spam = detail_payload["Spam"];
        if (!spam.contains("IsSpam"))
            throw ProtocolError("message " + server_id + " Spam status lacks IsSpam");
        Verdict v;
        v.score = spam.value("Score", 0.0);
        v.threshold = spam.value("Threshold", 0.0);
        v.label = spam["IsSpam"].get<bool>() ? Label::spam : Label::ham;
        v.adapter = Adapter::live;
        by_gauntlet_id[gid] = v;
    }

    std::vector<std::pair<std::string, Verdict>> out;
    std::string missing;
    for (const auto& id : submitted_ids) {
        auto it = by_gauntlet_id.find(id);
        if (it == by_gauntlet_id.end()) {
            missing += missing.empty() ? id : ", " + id;
            continue;
        }
        out.emplace_back(id, it->second);
    }
    if (!missing.empty()) throw MissingVerdictError("no verdict for submitted id(s): " + missing);
    return out;
}

// --- uniform check dispatch ------------------------------------------------------------

// One message, one verdict, whichever adapter the endpoint names. The builtin
// path strips the correlation header before classification.
inline Verdict check(const FilterEndpoint& endpoint, const BayesModel* model,
                     const EmailMessage& msg) {
    switch (endpoint.kind) {
        case Adapter::builtin: {
            if (!model) throw UntrainedModelError();
            EmailMessage clean = msg;
            std::erase_if(clean.headers, [](const HeaderField& h) {
                return iequal(h.name, kGauntletIdHeader);
            });
            return classify(*model, clean);
        }
        case Adapter::spamd:
            return spamd_check(endpoint.spamd_addr, msg, endpoint.timeout_ms,
                               endpoint.max_message_bytes);
        case Adapter::live: {
            std::string id = smtp_submit(endpoint.smtp_addr, msg, endpoint.envelope_from,
                                         endpoint.envelope_to, endpoint.timeout_ms);
            auto deadline = std::chrono::steady_clock::now() +
                            std::chrono::milliseconds(endpoint.timeout_ms);
            while (true) {
                try {
                    return fetch_verdicts(endpoint, {id})[0].second;
                } catch (const MissingVerdictError&) {
                    if (std::chrono::steady_clock::now() >= deadline) throw;
                    std::this_thread::sleep_for(std::chrono::milliseconds(100));
                }
            }
        }
    }
    throw ConfigError("unknown filter endpoint kind");
}

// --- ground truth -----------------------------------------------------------------------

// The entries the filter itself flagged as spam before any attack; only these
// count toward attack success.
struct GroundTruth {
    DatasetVariant dataset = DatasetVariant::original;
    std::vector<std::pair<std::string, Verdict>> entries;
};

inline GroundTruth build_ground_truth(DatasetVariant dataset,
                                      const std::vector<std::pair<std::string, Verdict>>& verdicts) {
    GroundTruth gt;
    gt.dataset = dataset;
    for (const auto& [id, v] : verdicts)
        if (v.label == Label::spam) gt.entries.emplace_back(id, v);
    return gt;
}

}  // namespace gauntlet
