#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace pcw {

// All library failures carry a stable machine-readable kind string
// ("DimensionMismatch", "ContextOverflow", ...) next to the human message.
// The CLI surfaces the kind in its error JSON; tests match on it.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

[[noreturn]] inline void fail(std::string kind, const std::string& message) {
    throw Error(std::move(kind), message);
}

} // namespace pcw
