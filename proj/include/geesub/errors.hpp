#pragma once

#include <stdexcept>
#include <string>

namespace geesub {

/// Base class for all library errors. Carries a mutable message so callers
/// can prepend stage context before rethrowing.
class Error : public std::exception {
public:
    explicit Error(std::string msg) : msg_(std::move(msg)) {}

    const char* what() const noexcept override { return msg_.c_str(); }

    void add_context(const std::string& stage) { msg_ = stage + ": " + msg_; }

private:
    std::string msg_;
};

// --- data ingestion ---
class IoError : public Error { using Error::Error; };
class SchemaError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class BalanceError : public Error { using Error::Error; };
class EmptyPanelError : public Error { using Error::Error; };

// --- model domain / numerics ---
class DomainError : public Error { using Error::Error; };
class NumericRangeError : public Error { using Error::Error; };
class DegenerateVarianceError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class FactorizationError : public Error { using Error::Error; };
class SingularityError : public Error { using Error::Error; };
class SingularDesignError : public Error { using Error::Error; };
class SingularInformationError : public Error { using Error::Error; };
class DivergenceError : public Error { using Error::Error; };

// --- subsampling ---
class PilotError : public Error { using Error::Error; };
class DegenerateScoresError : public Error { using Error::Error; };

// --- configuration / preconditions ---
class ConfigError : public Error { using Error::Error; };

} // namespace geesub
