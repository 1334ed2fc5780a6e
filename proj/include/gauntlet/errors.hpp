#pragma once

#include <stdexcept>
#include <string>

namespace gauntlet {

struct GauntletError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ParseErrorKind {
    no_header_body_separator,
    malformed_header,
    missing_mandatory_header,
    undecodable_part,
};

inline const char* to_string(ParseErrorKind k) {
    switch (k) {
        case ParseErrorKind::no_header_body_separator: return "no-header-body-separator";
        case ParseErrorKind::malformed_header: return "malformed-header";
        case ParseErrorKind::missing_mandatory_header: return "missing-mandatory-header";
        case ParseErrorKind::undecodable_part: return "undecodable-part";
    }
    return "parse-error";
}

// Message-level failures that mark a corpus entry as filtered out.
struct ParseError : GauntletError {
    ParseError(ParseErrorKind k, const std::string& what)
        : GauntletError(std::string(to_string(k)) + ": " + what), kind(k) {}
    ParseErrorKind kind;
};

struct TransportError : GauntletError {
    using GauntletError::GauntletError;
};

struct ProtocolError : GauntletError {
    using GauntletError::GauntletError;
};

struct SmtpRejectError : GauntletError {
    SmtpRejectError(int reply_code, const std::string& line)
        : GauntletError("smtp reject " + std::to_string(reply_code) + ": " + line),
          code(reply_code) {}
    int code;
};

struct MissingVerdictError : GauntletError {
    using GauntletError::GauntletError;
};

struct UntrainedModelError : GauntletError {
    UntrainedModelError() : GauntletError("model has no trained spam or ham messages") {}
};

struct EmptyEvidenceError : GauntletError {
    EmptyEvidenceError() : GauntletError("cannot combine an empty evidence list") {}
};

struct BodyEmptyError : GauntletError {
    BodyEmptyError() : GauntletError("message body is empty") {}
};

struct EmptyRunError : GauntletError {
    EmptyRunError() : GauntletError("rate undefined: zero messages sent") {}
};

struct ConfigError : GauntletError {
    using GauntletError::GauntletError;
};

struct IoError : GauntletError {
    using GauntletError::GauntletError;
};

}  // namespace gauntlet
