#pragma once

#include <stdexcept>
#include <string>

namespace onsetnet {

// Exit codes reported by the CLI. Exceptions carry the code they map onto.
enum class ExitCode : int {
    ok = 0,
    failure = 1,
    config = 2,
    data = 3,
    numeric = 4,
    io = 5,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const { return ExitCode::failure; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::config; }
};

class DataError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::data; }
};

class NumericError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::numeric; }
};

class IoError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::io; }
};

}  // namespace onsetnet
