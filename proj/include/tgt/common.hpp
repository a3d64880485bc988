#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgt {

// Error categories map to CLI exit codes; see tools/tgt.cpp.
enum class ErrorCategory { config, io, shape, value, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), category_(cat) {}
    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(ErrorCategory::shape, msg) {}
};

class ValueError : public Error {
public:
    explicit ValueError(const std::string& msg) : Error(ErrorCategory::value, msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(ErrorCategory::io, msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(ErrorCategory::config, msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(ErrorCategory::numeric, msg) {}
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ValueError(msg);
}

// Round-trip-exact decimal formatting for doubles (also used for CSV output).
inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string format_real(float v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

}  // namespace tgt
