#pragma once

#include <stdexcept>
#include <string>

namespace arn {

enum class IoCode {
    io_failure,
    bad_magic,
    truncated,
    checksum_mismatch,
    bad_dtype,
    bad_value,
    duplicate_name,
};

class IoError : public std::runtime_error {
public:
    IoError(IoCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    IoCode code() const { return code_; }

private:
    IoCode code_;
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss or parameter during optimization; reports which loss and
// which step blew up.
class TrainError : public std::runtime_error {
public:
    TrainError(const std::string& loss_name, std::int64_t step, const std::string& msg)
        : std::runtime_error(msg), loss_name_(loss_name), step_(step) {}
    const std::string& loss_name() const { return loss_name_; }
    std::int64_t step() const { return step_; }

private:
    std::string loss_name_;
    std::int64_t step_;
};

}  // namespace arn
