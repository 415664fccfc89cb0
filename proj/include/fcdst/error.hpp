#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fcdst {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A document did not parse; `where` names the line or field that failed.
class ParseError : public Error {
public:
    ParseError(const std::string& where, const std::string& what)
        : Error(where.empty() ? what : where + ": " + what), where_(where) {}

    [[nodiscard]] const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

/// Input parsed but violates a type invariant (duplicate names, empty catalog, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    BackendError(const std::string& what, bool retryable, int attempts)
        : Error(what), retryable_(retryable), attempts_(attempts) {}

    [[nodiscard]] bool retryable() const noexcept { return retryable_; }
    [[nodiscard]] int attempts() const noexcept { return attempts_; }

private:
    bool retryable_;
    int attempts_;
};

/// Replay store has no entry for a request.
class FixtureMissingError : public BackendError {
public:
    explicit FixtureMissingError(const std::string& key)
        : BackendError("replay fixture missing for request " + key, false, 1), key_(key) {}

    [[nodiscard]] const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Server answered with a payload we cannot interpret. Never retried.
class ProtocolError : public BackendError {
public:
    explicit ProtocolError(const std::string& what, int attempts = 1)
        : BackendError(what, false, attempts) {}
};

}  // namespace fcdst
