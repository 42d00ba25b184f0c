#include "persona/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "persona/error.hpp"

namespace persona {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'P', 'T', 'N', 'S', 'R', '0', '0', '1'};
}

std::int64_t TensorEntry::element_count() const {
  std::int64_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

const TensorEntry* TensorFile::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void TensorFile::write(const std::filesystem::path& path) const {
  json meta = json::parse(meta_json, nullptr, false);
  if (meta.is_discarded()) {
    throw ValidationError("tensor file meta is not valid JSON");
  }
  json manifest;
  manifest["meta"] = std::move(meta);
  manifest["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    if (t.shape.empty()) {
      throw ValidationError("tensor \"" + t.name + "\" has an empty shape");
    }
    if (t.element_count() != static_cast<std::int64_t>(t.data.size())) {
      throw ValidationError("tensor \"" + t.name +
                            "\" shape does not match its data size");
    }
    manifest["tensors"].push_back({{"name", t.name},
                                   {"shape", t.shape},
                                   {"offset", offset}});
    offset += t.data.size() * sizeof(float);
  }
  const std::string header = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

TensorFile TensorFile::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(path.string() + ": not a tensor container");
  }
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len > (1u << 26)) {
    throw ParseError(path.string() + ": bad manifest length");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ParseError(path.string() + ": truncated manifest");

  const json manifest = json::parse(header, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object() ||
      !manifest.contains("tensors") || !manifest.at("tensors").is_array()) {
    throw ParseError(path.string() + ": malformed manifest");
  }

  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());

  TensorFile out;
  out.meta_json = manifest.contains("meta") ? manifest.at("meta").dump() : "{}";
  for (const auto& e : manifest.at("tensors")) {
    if (!e.contains("name") || !e.contains("shape") || !e.contains("offset")) {
      throw ParseError(path.string() + ": malformed tensor entry");
    }
    TensorEntry t;
    t.name = e.at("name").get<std::string>();
    t.shape = e.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    if (t.shape.empty()) {
      throw ParseError(path.string() + ": tensor \"" + t.name +
                       "\" has an empty shape");
    }
    std::int64_t count = 1;
    for (const auto d : t.shape) {
      if (d <= 0) {
        throw ParseError(path.string() + ": tensor \"" + t.name +
                         "\" has a non-positive dimension");
      }
      count *= d;
    }
    const std::uint64_t bytes = static_cast<std::uint64_t>(count) * 4;
    if (offset + bytes > blob.size()) {
      throw ParseError(path.string() + ": tensor \"" + t.name +
                       "\" runs past the end of the file");
    }
    t.data.resize(static_cast<std::size_t>(count));
    std::memcpy(t.data.data(), blob.data() + offset, bytes);
    out.tensors.push_back(std::move(t));
  }
  return out;
}

}  // namespace persona
