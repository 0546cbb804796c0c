#pragma once

// Single-file tensor container:
//   8 bytes  magic "UDACKPT1"
//   8 bytes  little-endian length L of the JSON manifest
//   L bytes  manifest; its "tensors" array lists {name, shape} in file order
//   then     raw little-endian float32 data of every tensor, in that order

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "uda/core/tensor.hpp"

namespace uda::ckpt {

struct Container {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

/// Writes atomically (temporary file, then rename).
void save(const std::filesystem::path& path, const Container& c);
Container load(const std::filesystem::path& path);
/// Reads only the manifest.
nlohmann::json load_manifest(const std::filesystem::path& path);

/// FNV-1a of a string, rendered as 16 hex digits.
std::string hash_hex(const std::string& s);

}  // namespace uda::ckpt
