#pragma once

#include <stdexcept>
#include <string>

namespace probetime {

// Every error the library raises derives from Error so callers (the CLI in
// particular) can map families of failures onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NoData : public Error {
public:
    using Error::Error;
};

class DuplicateCheckpoint : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line, const std::string& field = {})
        : Error(format(what, line, field)), line_(line), field_(field) {}
    explicit ParseError(const std::string& what) : Error(what) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    static std::string format(const std::string& what, std::size_t line, const std::string& field) {
        std::string msg = "line " + std::to_string(line);
        if (!field.empty()) {
            msg += ", field '" + field + "'";
        }
        return msg + ": " + what;
    }

    std::size_t line_ = 0;
    std::string field_;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class ContractViolation : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    ConfigError(const std::string& what, std::string key = {}) : Error(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class CapabilityError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class UndefinedThreshold : public Error {
public:
    using Error::Error;
};

class SmoothedInputError : public Error {
public:
    using Error::Error;
};

class InsufficientOverlap : public Error {
public:
    using Error::Error;
};

} // namespace probetime
