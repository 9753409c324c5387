#pragma once

#include <stdexcept>
#include <string>

namespace nvs {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BadConfig : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateRays : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateAnchor : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingDependency : std::runtime_error {
    explicit MissingDependency(const std::string& what_dep)
        : std::runtime_error("missing dependency: " + what_dep), dependency(what_dep) {}
    std::string dependency;
};

struct CorruptDataset : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace nvs
