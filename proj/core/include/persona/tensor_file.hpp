#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace persona {

// Flat binary tensor container: 8-byte magic, u64 manifest length, manifest
// JSON (names, shapes, byte offsets, free-form meta), then row-major
// little-endian float32 data.
struct TensorEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t element_count() const;
};

struct TensorFile {
  std::vector<TensorEntry> tensors;
  std::string meta_json = "{}";  // opaque here; callers parse it

  const TensorEntry* find(std::string_view name) const;

  void write(const std::filesystem::path& path) const;
  static TensorFile read(const std::filesystem::path& path);
};

}  // namespace persona
