#pragma once

#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

namespace caplab {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IndexError : std::out_of_range {
    explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

struct ValueError : std::invalid_argument {
    explicit ValueError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a training step produces a non-finite loss. Carries the ids of
// the offending batch so the operator can inspect the data.
struct TrainAbort : std::runtime_error {
    std::vector<std::string> batch_ids;
    TrainAbort(const std::string& msg, std::vector<std::string> ids)
        : std::runtime_error(msg), batch_ids(std::move(ids)) {}
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

}  // namespace caplab
