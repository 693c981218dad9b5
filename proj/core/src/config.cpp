#include "lsk/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "lsk/tensor_io.hpp"

namespace lsk {

std::int64_t TomlValue::as_int() const {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  fail_contract("config value is not an integer");
}

double TomlValue::as_double() const {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  fail_contract("config value is not a number");
}

const std::string& TomlValue::as_string() const {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  fail_contract("config value is not a string");
}

const TomlArray& TomlValue::as_array() const {
  if (const auto* a = std::get_if<TomlArray>(&v)) return *a;
  fail_contract("config value is not an array");
}

namespace {

struct Cursor {
  const std::string& s;
  std::size_t pos = 0;
  int line = 1;

  bool done() const { return pos >= s.size(); }
  char peek() const { return s[pos]; }
  char take() {
    const char c = s[pos++];
    if (c == '\n') ++line;
    return c;
  }
  void skip_ws_and_comments(bool stop_at_newline) {
    while (!done()) {
      const char c = peek();
      if (c == '#') {
        while (!done() && peek() != '\n') ++pos;
      } else if (c == '\n') {
        if (stop_at_newline) return;
        take();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        return;
      }
    }
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError("config parse error at line " + std::to_string(line) + ": " + msg);
  }
};

TomlValue parse_value(Cursor& c);

TomlValue parse_array(Cursor& c) {
  c.take();  // '['
  TomlArray arr;
  while (true) {
    c.skip_ws_and_comments(false);
    if (c.done()) c.fail("unterminated array");
    if (c.peek() == ']') {
      c.take();
      break;
    }
    arr.push_back(parse_value(c));
    c.skip_ws_and_comments(false);
    if (c.done()) c.fail("unterminated array");
    if (c.peek() == ',') {
      c.take();
    } else if (c.peek() != ']') {
      c.fail("expected ',' or ']' in array");
    }
  }
  return TomlValue{std::move(arr)};
}

TomlValue parse_value(Cursor& c) {
  c.skip_ws_and_comments(false);
  if (c.done()) c.fail("expected a value");
  const char first = c.peek();
  if (first == '[') return parse_array(c);
  if (first == '"') {
    c.take();
    std::string s;
    while (!c.done() && c.peek() != '"') s.push_back(c.take());
    if (c.done()) c.fail("unterminated string");
    c.take();
    return TomlValue{std::move(s)};
  }
  std::string token;
  while (!c.done()) {
    const char ch = c.peek();
    if (ch == ',' || ch == ']' || ch == '\n' || ch == '#' ||
        std::isspace(static_cast<unsigned char>(ch)))
      break;
    token.push_back(c.take());
  }
  if (token.empty()) c.fail("expected a value");
  if (token == "true") return TomlValue{true};
  if (token == "false") return TomlValue{false};
  if (token.find_first_of(".eE") != std::string::npos &&
      token.find_first_not_of("+-0123456789.eE") == std::string::npos) {
    try {
      return TomlValue{std::stod(token)};
    } catch (const std::exception&) {
      c.fail("malformed number '" + token + "'");
    }
  }
  try {
    std::size_t used = 0;
    const std::int64_t i = std::stoll(token, &used);
    if (used == token.size()) return TomlValue{i};
  } catch (const std::exception&) {
  }
  c.fail("malformed value '" + token + "'");
}

}  // namespace

TomlTable parse_toml(std::istream& is) {
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string text = buf.str();
  Cursor c{text};
  TomlTable table;
  while (true) {
    c.skip_ws_and_comments(false);
    if (c.done()) break;
    std::string key;
    while (!c.done()) {
      const char ch = c.peek();
      if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.') {
        key.push_back(c.take());
      } else {
        break;
      }
    }
    if (key.empty()) c.fail("expected a key");
    c.skip_ws_and_comments(true);
    if (c.done() || c.peek() != '=') c.fail("expected '=' after key '" + key + "'");
    c.take();
    table[key] = parse_value(c);
  }
  return table;
}

TomlTable parse_toml_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  return parse_toml(f);
}

namespace {

std::vector<std::int64_t> int_array(const TomlValue& v, std::size_t expect,
                                    const std::string& key) {
  const TomlArray& arr = v.as_array();
  require(arr.size() == expect, "config key '" + key + "' must have " + std::to_string(expect) +
                                    " entries, got " + std::to_string(arr.size()));
  std::vector<std::int64_t> out;
  for (const TomlValue& e : arr) out.push_back(e.as_int());
  return out;
}

}  // namespace

BackboneConfig backbone_config_from_toml(const TomlTable& table) {
  BackboneConfig cfg;
  bool have_base = false;
  if (const auto it = table.find("preset"); it != table.end()) {
    cfg = preset_backbone(it->second.as_string());
    have_base = true;
  }
  if (const auto it = table.find("name"); it != table.end()) cfg.name = it->second.as_string();

  if (const auto it = table.find("channels"); it != table.end()) {
    const auto v = int_array(it->second, 4, "channels");
    for (int i = 0; i < 4; ++i) cfg.channels[static_cast<std::size_t>(i)] = static_cast<int>(v[static_cast<std::size_t>(i)]);
    have_base = true;
  }
  if (const auto it = table.find("depths"); it != table.end()) {
    const auto v = int_array(it->second, 4, "depths");
    for (int i = 0; i < 4; ++i) cfg.depths[static_cast<std::size_t>(i)] = static_cast<int>(v[static_cast<std::size_t>(i)]);
  }
  if (const auto it = table.find("plan"); it != table.end()) {
    std::vector<KernelSpec> specs;
    for (const TomlValue& pair : it->second.as_array()) {
      const TomlArray& kd = pair.as_array();
      require(kd.size() == 2, "config key 'plan' entries must be [k, d] pairs");
      specs.push_back({static_cast<int>(kd[0].as_int()), static_cast<int>(kd[1].as_int())});
    }
    cfg.plan = DecompositionPlan::from_specs(std::move(specs));
  } else if (!have_base || cfg.plan.branches() == 0) {
    cfg.plan = DecompositionPlan::from_specs({{5, 1}, {7, 3}});
  }
  if (const auto it = table.find("ffn_ratio"); it != table.end()) {
    const TomlArray& arr = it->second.as_array();
    require(arr.size() == 4, "config key 'ffn_ratio' must have 4 entries");
    for (int i = 0; i < 4; ++i)
      cfg.ffn_ratio[static_cast<std::size_t>(i)] = arr[static_cast<std::size_t>(i)].as_double();
  }
  if (const auto it = table.find("selection_kernel"); it != table.end())
    cfg.selection_kernel = static_cast<int>(it->second.as_int());
  if (const auto it = table.find("selection_mode"); it != table.end())
    cfg.selection_mode = selection_mode_from_name(it->second.as_string());
  if (const auto it = table.find("pooling"); it != table.end())
    cfg.pooling = pool_mode_from_name(it->second.as_string());

  require(have_base, "backbone config needs either a 'preset' or explicit 'channels'");
  cfg.validate();
  return cfg;
}

BackboneConfig load_backbone_config(const std::string& path) {
  return backbone_config_from_toml(parse_toml_file(path));
}

namespace {

Shape parse_shape_literal(const std::string& text) {
  std::vector<i64> dims;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, 'x')) {
    try {
      dims.push_back(std::stoll(token));
    } catch (const std::exception&) {
      fail_contract("malformed shape literal '" + text + "', expected NxCxHxW");
    }
  }
  require(dims.size() == 4, "shape literal '" + text + "' must have 4 dims (NxCxHxW)");
  return Shape{dims[0], dims[1], dims[2], dims[3]};
}

}  // namespace

Tensor parse_tensor_literal(const std::string& text) {
  if (text.rfind("zeros:", 0) == 0) return zeros(parse_shape_literal(text.substr(6)));
  if (text.rfind("ones:", 0) == 0) return full(parse_shape_literal(text.substr(5)), 1.0);
  if (text.rfind("seed:", 0) == 0) {
    std::vector<std::string> parts;
    std::string token;
    std::istringstream in(text);
    while (std::getline(in, token, ':')) parts.push_back(token);
    require(parts.size() == 4, "seed literal must be seed:<seed>:<dist>:NxCxHxW, got '" +
                                   text + "'");
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(parts[1]);
    } catch (const std::exception&) {
      fail_contract("malformed seed in tensor literal '" + text + "'");
    }
    const Shape shape = parse_shape_literal(parts[3]);
    if (parts[2] == "normal") return seeded_normal(shape, seed, 0.0, 1.0);
    if (parts[2] == "uniform") return seeded_uniform(shape, seed, 0.0, 1.0);
    fail_contract("unknown distribution '" + parts[2] + "' in tensor literal (normal, uniform)");
  }
  return read_lskt_file(text);
}

}  // namespace lsk
