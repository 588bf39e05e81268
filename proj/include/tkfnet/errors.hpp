#pragma once

#include <stdexcept>
#include <string>

namespace tkfnet {

// Incompatible tensor shapes, class counts or parameter layouts.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed bytes in an image, tensor or weights file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem failures: missing paths, unreadable or unwritable files.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid run configuration values or config-file syntax.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace tkfnet
