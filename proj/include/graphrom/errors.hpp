#pragma once

#include <stdexcept>
#include <string>

namespace graphrom {

/// Base error carrying a stable machine-readable kind tag alongside the message.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct ObstacleTooLarge : Error {
    explicit ObstacleTooLarge(const std::string& msg) : Error("ObstacleTooLarge", msg) {}
};

struct DegenerateElement : Error {
    explicit DegenerateElement(const std::string& msg) : Error("DegenerateElement", msg) {}
};

struct SolverDiverged : Error {
    explicit SolverDiverged(const std::string& msg) : Error("SolverDiverged", msg) {}
};

struct PecletExceeded : Error {
    explicit PecletExceeded(const std::string& msg) : Error("PecletExceeded", msg) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& msg) : Error("ShapeMismatch", msg) {}
};

struct NonFiniteLoss : Error {
    explicit NonFiniteLoss(const std::string& msg) : Error("NonFiniteLoss", msg) {}
};

struct NonFinitePrediction : Error {
    explicit NonFinitePrediction(const std::string& msg) : Error("NonFinitePrediction", msg) {}
};

struct ZeroNormSnapshot : Error {
    explicit ZeroNormSnapshot(const std::string& msg) : Error("ZeroNormSnapshot", msg) {}
};

struct FileNotFound : Error {
    explicit FileNotFound(const std::string& msg) : Error("FileNotFound", msg) {}
};

struct SchemaMismatch : Error {
    explicit SchemaMismatch(const std::string& msg) : Error("SchemaMismatch", msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("ConfigError", msg) {}
};

struct InvalidGeometry : Error {
    explicit InvalidGeometry(const std::string& msg) : Error("InvalidGeometry", msg) {}
};

} // namespace graphrom
