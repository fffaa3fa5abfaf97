#pragma once

#include <stdexcept>
#include <string>

namespace tsdn {

/// Precondition violated by the caller (bad shape, bad parameter, bad config).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// PNG / container decode or encode failure. The message carries the path.
class CodecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A metric that is not defined for the given input (e.g. AUC with one class).
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Raised by the optimizer when a loss term becomes non-finite.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::string term, double value)
        : std::runtime_error("training diverged: loss term '" + term + "' = " + std::to_string(value)),
          term_(std::move(term)), value_(value) {}

    const std::string& term() const noexcept { return term_; }
    double value() const noexcept { return value_; }

private:
    std::string term_;
    double value_;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
    if (!cond) throw InvalidInput(what);
}

}  // namespace detail
}  // namespace tsdn
