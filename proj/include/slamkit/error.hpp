#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace slamkit {

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a metric is not defined for its input (e.g. AUC with one class).
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

using WarningSink = std::function<void(const std::string&)>;

/// Replaces the warning sink (default: stderr). Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace slamkit
