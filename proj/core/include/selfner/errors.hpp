#pragma once

#include <stdexcept>
#include <string>

namespace selfner {

// Exit codes used by the CLI: 1 usage/config, 2 data, 3 backend.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BackendError : public std::runtime_error {
public:
    explicit BackendError(const std::string& msg, int ordinal = -1)
        : std::runtime_error(msg), ordinal_(ordinal) {}

    // Ordinal of the completion that failed, -1 if not tied to one.
    int ordinal() const { return ordinal_; }

private:
    int ordinal_;
};

inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitBackend = 3;

} // namespace selfner
