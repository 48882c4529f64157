#pragma once

#include <stdexcept>
#include <string>

namespace cahm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad configuration or malformed input data. Maps to CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Generation failure: pre-flight context overflow, non-retryable HTTP
// status, or retries exhausted.
class BackendError : public Error {
public:
    explicit BackendError(const std::string& msg, int http_status = 0, bool retries_exhausted = false)
        : Error(msg), http_status(http_status), retries_exhausted(retries_exhausted) {}

    int http_status;
    bool retries_exhausted;
};

// Run directory problems: missing or corrupt node files, schema mismatch.
class ArtifactError : public Error {
public:
    using Error::Error;
};

} // namespace cahm
