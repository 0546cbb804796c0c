#include "uda/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace uda::ckpt {
namespace {

constexpr char kMagic[8] = {'U', 'D', 'A', 'C', 'K', 'P', 'T', '1'};

std::runtime_error fail(const std::filesystem::path& p, const std::string& what) {
  return std::runtime_error("checkpoint " + p.string() + ": " + what);
}

std::pair<nlohmann::json, std::ifstream> open_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw fail(path, "cannot open");
  char magic[8];
  uint64_t len = 0;
  is.read(magic, 8);
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw fail(path, "not a checkpoint file");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw fail(path, "truncated manifest");
  try {
    return {nlohmann::json::parse(text), std::move(is)};
  } catch (const nlohmann::json::exception& e) {
    throw fail(path, e.what());
  }
}

}  // namespace

const Tensor* Container::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save(const std::filesystem::path& path, const Container& c) {
  nlohmann::json m = c.manifest;
  m["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : c.tensors) m["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  const std::string text = m.dump();
  const uint64_t len = text.size();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw fail(tmp, "cannot write");
    os.write(kMagic, 8);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : c.tensors) {
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw fail(tmp, "write failed");
  }
  std::filesystem::rename(tmp, path);
}

Container load(const std::filesystem::path& path) {
  auto [m, is] = open_manifest(path);
  Container c;
  try {
    for (const auto& e : m.at("tensors")) {
      Tensor t(e.at("shape").get<Shape>());
      is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
      if (!is) throw fail(path, "truncated tensor data");
      c.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(path, e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw fail(path, "trailing bytes");
  c.manifest = std::move(m);
  return c;
}

nlohmann::json load_manifest(const std::filesystem::path& path) { return open_manifest(path).first; }

std::string hash_hex(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace uda::ckpt
