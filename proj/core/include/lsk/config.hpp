#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "lsk/backbone.hpp"

namespace lsk {

// Minimal TOML-subset reader, just enough for the backbone config files:
// flat `key = value` lines, where value is an integer, float, boolean,
// double-quoted string, or a (possibly nested) [ ... ] array. `#` comments.
struct TomlValue;
using TomlArray = std::vector<TomlValue>;

struct TomlValue {
  std::variant<std::int64_t, double, bool, std::string, TomlArray> v;

  bool is_int() const { return std::holds_alternative<std::int64_t>(v); }
  bool is_number() const { return is_int() || std::holds_alternative<double>(v); }
  std::int64_t as_int() const;
  double as_double() const;
  const std::string& as_string() const;
  const TomlArray& as_array() const;
};

using TomlTable = std::map<std::string, TomlValue>;

TomlTable parse_toml(std::istream& is);
TomlTable parse_toml_file(const std::string& path);

// Backbone config file: starts from the preset named by `preset` (or the
// given defaults when absent) and applies any overriding keys:
//   preset = "lsknet-t"            (optional)
//   channels = [32, 64, 160, 256]
//   depths = [3, 3, 5, 2]
//   plan = [[5, 1], [7, 3]]
//   ffn_ratio = [4.0, 4.0, 4.0, 4.0]
//   selection_kernel = 7
//   selection_mode = "spatial"
//   pooling = "both"
BackboneConfig backbone_config_from_toml(const TomlTable& table);
BackboneConfig load_backbone_config(const std::string& path);

// Shorthand tensor literals for CLI ergonomics:
//   zeros:NxCxHxW
//   ones:NxCxHxW
//   seed:<seed>:normal:NxCxHxW     (mean 0, std 1)
//   seed:<seed>:uniform:NxCxHxW    (range [0, 1))
// Anything else is treated as a path to an LSKT file.
Tensor parse_tensor_literal(const std::string& text);

}  // namespace lsk
