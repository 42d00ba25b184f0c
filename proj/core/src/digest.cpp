#include "persona/digest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "persona/error.hpp"

namespace persona {

std::uint64_t fnv1a64_append(std::uint64_t state, std::string_view bytes) {
  for (const char c : bytes) {
    state ^= static_cast<unsigned char>(c);
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  return fnv1a64_append(0xcbf29ce484222325ULL, bytes);
}

std::string digest_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(digest));
  return std::string(buf);
}

std::string digest_string(std::string_view bytes) {
  return digest_hex(fnv1a64(bytes));
}

std::string digest_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open file for digest: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return digest_string(buf.str());
}

}  // namespace persona
