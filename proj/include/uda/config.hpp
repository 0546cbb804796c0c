#pragma once

// Flat key=value configuration documents.
//
//   # comment
//   recipe = multi_sequence
//   lambda_adv1 = 1.0
//
// Later layers override earlier ones; see TrainConfig::resolve for the
// precedence used by the command line.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace uda::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues parse(const std::string& text, const std::string& origin = "<string>");
KeyValues load(const std::filesystem::path& path);
/// Parses "key=value" as given to --set.
std::pair<std::string, std::string> parse_assignment(const std::string& s);
std::string dump(const KeyValues& kv);

/// Overlays `top` onto `base`.
KeyValues merge(KeyValues base, const KeyValues& top);

double to_double(const KeyValues& kv, const std::string& key);
int64_t to_int(const KeyValues& kv, const std::string& key);
bool to_bool(const KeyValues& kv, const std::string& key);
std::vector<int> to_int_list(const KeyValues& kv, const std::string& key);

}  // namespace uda::config
