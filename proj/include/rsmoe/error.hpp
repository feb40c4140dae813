#pragma once

#include <stdexcept>
#include <string>

namespace rsmoe {

// Error taxonomy. Shape/config/input errors indicate caller bugs or bad
// options; data/vocab/io/integrity errors indicate bad external inputs;
// numeric errors indicate a diverged computation.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error("shape error: " + m) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error("config error: " + m) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& m) : std::runtime_error("input error: " + m) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& m) : std::runtime_error("data error: " + m) {}
};

struct VocabError : std::runtime_error {
    explicit VocabError(const std::string& m) : std::runtime_error("vocab error: " + m) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& m) : std::runtime_error("io error: " + m) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& m) : std::runtime_error("integrity error: " + m) {}
};

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& m) : std::runtime_error("checkpoint error: " + m) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error("numeric error: " + m) {}
};

}  // namespace rsmoe
