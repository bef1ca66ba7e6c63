#pragma once

#include <stdexcept>
#include <string>

namespace prime {

class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or size disagreement between tensors/masks.
class dimension_error : public error {
public:
    using error::error;
};

// Invalid configuration value (schedule ranges, empty vocabulary, ...).
class config_error : public error {
public:
    using error::error;
};

// Argument outside its admissible domain (timestep out of range, empty step set).
class domain_error : public error {
public:
    using error::error;
};

// Malformed tagged prompt (unbalanced tags, empty span).
class parse_error : public error {
public:
    using error::error;
};

// Attention plan addressing outside a layer's token range or level mismatch.
class plan_error : public error {
public:
    using error::error;
};

// Solver stepped past the end of its grid.
class sequencing_error : public error {
public:
    using error::error;
};

// File read/write failure; message carries the path.
class io_error : public error {
public:
    using error::error;
};

// Input validation failure (mask containment, empty object, ...).
class validation_error : public error {
public:
    using error::error;
};

// Training diverged (non-finite loss).
class training_error : public error {
public:
    using error::error;
};

} // namespace prime
