#pragma once

#include <string>
#include <string_view>

namespace selfner {

// SHA-256 hex digest of the input bytes.
std::string sha256_hex(std::string_view bytes);

// First 16 hex chars of sha256, enough to stamp output files with their config.
std::string short_digest(std::string_view bytes);

} // namespace selfner
