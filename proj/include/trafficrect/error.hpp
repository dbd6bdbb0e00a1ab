#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include <json.hpp>

namespace trafficrect {

/// Failure categories shared by every module. The service maps each code to
/// one HTTP status and the CLI maps each code to one exit status.
enum class ErrorCode {
    validation,         // bad user-supplied value (NaN coordinate, bad parameter)
    precondition,       // caller broke an operation precondition
    degenerate,         // geometric degeneracy (collinear sample, rank loss)
    estimation_failed,  // robust estimation found no consensus
    horizon,            // projection hit w == 0
    geometry,           // degenerate annotation geometry
    unit,               // unsupported CRS unit
    io,
    parse,
    schema,
    schema_version,
    transport,          // network failure, retryable
    decode,             // malformed payload (image, JSON body)
    upstream_status,    // remote service answered with non-200
    configuration,
    conflict,
    not_found,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::validation: return "validation";
        case ErrorCode::precondition: return "precondition";
        case ErrorCode::degenerate: return "degenerate";
        case ErrorCode::estimation_failed: return "estimation_failed";
        case ErrorCode::horizon: return "horizon";
        case ErrorCode::geometry: return "geometry";
        case ErrorCode::unit: return "unit";
        case ErrorCode::io: return "io";
        case ErrorCode::parse: return "parse";
        case ErrorCode::schema: return "schema";
        case ErrorCode::schema_version: return "schema_version";
        case ErrorCode::transport: return "transport";
        case ErrorCode::decode: return "decode";
        case ErrorCode::upstream_status: return "upstream_status";
        case ErrorCode::configuration: return "configuration";
        case ErrorCode::conflict: return "conflict";
        case ErrorCode::not_found: return "not_found";
    }
    return "unknown";
}

/// Process exit status for the CLI. 0 is success, 1 an unexpected failure
/// and 2 a command-line usage error; module errors start at 10.
inline int exit_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::validation: return 10;
        case ErrorCode::precondition: return 11;
        case ErrorCode::degenerate: return 12;
        case ErrorCode::estimation_failed: return 13;
        case ErrorCode::horizon: return 14;
        case ErrorCode::geometry: return 15;
        case ErrorCode::unit: return 16;
        case ErrorCode::io: return 17;
        case ErrorCode::parse: return 18;
        case ErrorCode::schema: return 19;
        case ErrorCode::schema_version: return 20;
        case ErrorCode::transport: return 21;
        case ErrorCode::decode: return 22;
        case ErrorCode::upstream_status: return 23;
        case ErrorCode::configuration: return 24;
        case ErrorCode::conflict: return 25;
        case ErrorCode::not_found: return 26;
    }
    return 1;
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, nlohmann::json details = nlohmann::json::object())
        : std::runtime_error(message), code_(code), details_(std::move(details)) {}

    ErrorCode code() const noexcept { return code_; }
    const nlohmann::json& details() const noexcept { return details_; }

    /// Transport failures are the only ones worth retrying unchanged.
    bool retryable() const noexcept { return code_ == ErrorCode::transport; }

private:
    ErrorCode code_;
    nlohmann::json details_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message,
                              nlohmann::json details = nlohmann::json::object()) {
    throw Error(code, message, std::move(details));
}

}  // namespace trafficrect
