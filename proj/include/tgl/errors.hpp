#pragma once

#include <stdexcept>
#include <string>

namespace tgl {

struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or dimension mismatch between tensors.
struct shape_error : error {
    explicit shape_error(const std::string& msg) : error(msg) {}
};

// Invalid argument value (non-finite input, bad enum, empty range, ...).
struct value_error : error {
    explicit value_error(const std::string& msg) : error(msg) {}
};

// A forward operation produced NaN/Inf from finite inputs.
struct numeric_error : error {
    explicit numeric_error(const std::string& msg) : error(msg) {}
};

// A backward rule returned a gradient whose shape does not match its input.
struct gradient_error : error {
    explicit gradient_error(const std::string& msg) : error(msg) {}
};

// Malformed external data (IDX files, checkpoints); message carries the offset
// where parsing failed when known.
struct parse_error : error {
    explicit parse_error(const std::string& msg) : error(msg) {}
};

// Invalid experiment configuration.
struct config_error : error {
    explicit config_error(const std::string& msg) : error(msg) {}
};

// Training produced a non-finite loss.
struct divergence_error : error {
    explicit divergence_error(const std::string& msg) : error(msg) {}
};

// Hard pruning would leave a layer with zero active channels.
struct degenerate_model_error : error {
    explicit degenerate_model_error(const std::string& msg) : error(msg) {}
};

}  // namespace tgl
