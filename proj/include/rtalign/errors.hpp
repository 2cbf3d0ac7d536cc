#pragma once

#include <stdexcept>
#include <string>

namespace rtalign {

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyCorpusError : std::runtime_error {
    explicit EmptyCorpusError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SplitError : std::runtime_error {
    explicit SplitError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingFrequencyError : std::runtime_error {
    explicit MissingFrequencyError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ModelError : std::runtime_error {
    explicit ModelError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NotSpdError : std::runtime_error {
    explicit NotSpdError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SingularDesignError : std::runtime_error {
    explicit SingularDesignError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConstructionError : std::runtime_error {
    explicit ConstructionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rtalign
