#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace persona {

// FNV-1a 64-bit content digests for provenance tracking. Not cryptographic;
// used to tie reports back to the exact inputs that produced them.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64_append(std::uint64_t state, std::string_view bytes);

std::string digest_hex(std::uint64_t digest);
std::string digest_string(std::string_view bytes);
std::string digest_file(const std::filesystem::path& path);

}  // namespace persona
