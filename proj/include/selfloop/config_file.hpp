#pragma once

// Run configuration files: a small typed subset of TOML.
//
//   # comment
//   [section]
//   key = 42          integer
//   key = 0.8         real
//   key = "text"      string
//
// Sections mirror LoopConfig: loop, cycle, model, train, sampler, diversity.
// Unknown sections or keys, duplicates and type mismatches are errors.
// The sampler count is not a key; it always equals loop.m.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "selfloop/looprunner.hpp"

namespace selfloop {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& where, int line, const std::string& what)
      : std::runtime_error(where + (line > 0 ? ":" + std::to_string(line) : std::string{}) + ": " + what) {}
};

namespace detail {

enum class ValueType { Int, UInt, Real, Text };

struct ConfigValue {
  ValueType type;
  std::string text;  // unquoted lexeme
};

struct FieldSpec {
  std::string_view section;
  std::string_view key;
  ValueType type;
  std::function<std::string(const LoopConfig&)> render;
  std::function<void(LoopConfig&, const ConfigValue&)> assign;
};

inline std::string real_text(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  // keep reals recognizable as reals
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

template <class I>
I to_integer(const ConfigValue& v) {
  I out{};
  const auto res = std::from_chars(v.text.data(), v.text.data() + v.text.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.text.data() + v.text.size()) {
    throw std::invalid_argument("integer out of range: " + v.text);
  }
  return out;
}

inline double to_real(const ConfigValue& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.text.data(), v.text.data() + v.text.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.text.data() + v.text.size()) {
    throw std::invalid_argument("bad number: " + v.text);
  }
  return out;
}

#define SELFLOOP_INT_FIELD(sec, name, member)                                                   \
  FieldSpec{sec, name, ValueType::Int, [](const LoopConfig& c) { return std::to_string(c.member); }, \
            [](LoopConfig& c, const ConfigValue& v) { c.member = to_integer<decltype(c.member)>(v); }}
#define SELFLOOP_UINT_FIELD(sec, name, member)                                                   \
  FieldSpec{sec, name, ValueType::UInt, [](const LoopConfig& c) { return std::to_string(c.member); }, \
            [](LoopConfig& c, const ConfigValue& v) { c.member = to_integer<decltype(c.member)>(v); }}
#define SELFLOOP_REAL_FIELD(sec, name, member)                                                 \
  FieldSpec{sec, name, ValueType::Real, [](const LoopConfig& c) { return real_text(c.member); }, \
            [](LoopConfig& c, const ConfigValue& v) { c.member = to_real(v); }}

inline const std::vector<FieldSpec>& config_fields() {
  static const std::vector<FieldSpec> fields = {
      SELFLOOP_UINT_FIELD("loop", "master_seed", master_seed),
      SELFLOOP_INT_FIELD("loop", "generations", generations),
      SELFLOOP_UINT_FIELD("loop", "m", m),
      SELFLOOP_INT_FIELD("loop", "d_min", d_min),
      SELFLOOP_INT_FIELD("loop", "d_max", d_max),
      FieldSpec{"loop", "model_kind", ValueType::Text,
                [](const LoopConfig& c) { return quote(to_string(c.model_kind)); },
                [](LoopConfig& c, const ConfigValue& v) { c.model_kind = model_kind_from_string(v.text); }},
      FieldSpec{"loop", "output_dir", ValueType::Text, [](const LoopConfig& c) { return quote(c.output_dir); },
                [](LoopConfig& c, const ConfigValue& v) { c.output_dir = v.text; }},

      FieldSpec{"cycle", "kind", ValueType::Text, [](const LoopConfig& c) { return quote(to_string(c.cycle.kind)); },
                [](LoopConfig& c, const ConfigValue& v) { c.cycle.kind = cycle_kind_from_string(v.text); }},
      SELFLOOP_REAL_FIELD("cycle", "lambda", cycle.lambda),

      SELFLOOP_INT_FIELD("model", "n_layer", model.n_layer),
      SELFLOOP_INT_FIELD("model", "n_head", model.n_head),
      SELFLOOP_INT_FIELD("model", "n_embd", model.n_embd),
      SELFLOOP_INT_FIELD("model", "context", model.context),
      SELFLOOP_REAL_FIELD("model", "dropout", model.dropout),

      SELFLOOP_INT_FIELD("train", "batch_size", train.batch_size),
      SELFLOOP_INT_FIELD("train", "total_iters", train.total_iters),
      SELFLOOP_REAL_FIELD("train", "lr_max", train.lr_max),
      SELFLOOP_REAL_FIELD("train", "lr_min", train.lr_min),
      SELFLOOP_INT_FIELD("train", "warmup_iters", train.warmup_iters),
      SELFLOOP_INT_FIELD("train", "val_interval", train.val_interval),
      SELFLOOP_INT_FIELD("train", "val_batches", train.val_batches),
      SELFLOOP_REAL_FIELD("train", "train_fraction", train.train_fraction),
      SELFLOOP_REAL_FIELD("train", "grad_clip", train.grad_clip),
      SELFLOOP_REAL_FIELD("train", "weight_decay", train.weight_decay),
      SELFLOOP_REAL_FIELD("train", "beta1", train.beta1),
      SELFLOOP_REAL_FIELD("train", "beta2", train.beta2),
      SELFLOOP_UINT_FIELD("train", "seed", train.seed),

      SELFLOOP_REAL_FIELD("sampler", "temperature", sampler.temperature),
      SELFLOOP_INT_FIELD("sampler", "max_tokens", sampler.max_tokens),

      FieldSpec{"diversity", "mode", ValueType::Text,
                [](const LoopConfig& c) { return quote(to_string(c.diversity.mode)); },
                [](LoopConfig& c, const ConfigValue& v) { c.diversity.mode = diversity_mode_from_string(v.text); }},
      SELFLOOP_UINT_FIELD("diversity", "pair_budget", diversity.pair_budget),
      SELFLOOP_UINT_FIELD("diversity", "exact_max_n", diversity.exact_max_n),
      FieldSpec{"diversity", "normalization", ValueType::Text,
                [](const LoopConfig& c) { return quote(to_string(c.diversity.normalization)); },
                [](LoopConfig& c, const ConfigValue& v) {
                  c.diversity.normalization = normalization_from_string(v.text);
                }},
  };
  return fields;
}

#undef SELFLOOP_INT_FIELD
#undef SELFLOOP_UINT_FIELD
#undef SELFLOOP_REAL_FIELD

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::Int: return "integer";
    case ValueType::UInt: return "non-negative integer";
    case ValueType::Real: return "number";
    case ValueType::Text: return "string";
  }
  return "?";
}

/// Lexes one value: a quoted string (with \" and \\ escapes) or a bare number.
/// Trailing comments are allowed after either.
inline ConfigValue lex_value(std::string_view s, const std::string& where, int line) {
  s = trim(s);
  if (s.empty()) throw ConfigError(where, line, "missing value");
  if (s.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < s.size() && s[i] != '"'; ++i) {
      if (s[i] == '\\' && i + 1 < s.size()) ++i;
      out += s[i];
    }
    if (i >= s.size()) throw ConfigError(where, line, "unterminated string");
    const auto rest = trim(s.substr(i + 1));
    if (!rest.empty() && rest.front() != '#') throw ConfigError(where, line, "unexpected text after string");
    return {ValueType::Text, out};
  }
  const auto hash = s.find('#');
  const std::string lexeme(trim(s.substr(0, hash)));
  const bool real = lexeme.find_first_of(".eE") != std::string::npos ||
                    lexeme == "inf" || lexeme == "nan";
  const ValueType t = real ? ValueType::Real : (lexeme.front() == '-' ? ValueType::Int : ValueType::UInt);
  return {t, lexeme};
}

inline bool compatible(ValueType want, ValueType got) {
  if (want == got) return true;
  if (want == ValueType::Int && got == ValueType::UInt) return true;
  if (want == ValueType::Real && (got == ValueType::Int || got == ValueType::UInt)) return true;
  return false;
}

}  // namespace detail

/// Parses config text. Keys missing from the text keep their defaults.
/// `where` names the source in error messages.
inline LoopConfig parse_config(std::string_view text, const std::string& where = "<config>") {
  using namespace detail;
  LoopConfig cfg;
  std::map<std::pair<std::string, std::string>, const FieldSpec*> index;
  std::set<std::string> sections;
  for (const auto& f : config_fields()) {
    index[{std::string(f.section), std::string(f.key)}] = &f;
    sections.insert(std::string(f.section));
  }

  std::string section;
  std::set<std::pair<std::string, std::string>> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto s = trim(raw);
    if (s.empty() || s.front() == '#') continue;
    if (s.front() == '[') {
      const auto close = s.find(']');
      if (close == std::string_view::npos) throw ConfigError(where, line, "unterminated section header");
      const auto rest = trim(s.substr(close + 1));
      if (!rest.empty() && rest.front() != '#') throw ConfigError(where, line, "unexpected text after section header");
      section = std::string(trim(s.substr(1, close - 1)));
      if (!sections.count(section)) {
        throw ConfigError(where, line, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where, line, "expected 'key = value'");
    const std::string key(trim(s.substr(0, eq)));
    if (section.empty()) throw ConfigError(where, line, "key '" + key + "' appears before any [section]");
    const auto it = index.find({section, key});
    if (it == index.end()) throw ConfigError(where, line, "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert({section, key}).second) {
      throw ConfigError(where, line, "duplicate key '" + key + "' in [" + section + "]");
    }
    const ConfigValue v = lex_value(s.substr(eq + 1), where, line);
    if (!compatible(it->second->type, v.type)) {
      throw ConfigError(where, line, section + "." + key + " expects a " + type_name(it->second->type) +
                                         ", got '" + v.text + "'");
    }
    try {
      it->second->assign(cfg, v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where, line, section + "." + key + ": " + e.what());
    }
  }
  cfg.sampler.count = cfg.m;
  return cfg;
}

inline LoopConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path, 0, "cannot open config file");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path);
}

/// Canonical text for a config; parse_config(render_config(c)) == c for every
/// valid config (runtime controls excepted).
inline std::string render_config(const LoopConfig& cfg) {
  std::ostringstream os;
  std::string_view section;
  for (const auto& f : detail::config_fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.render(cfg) << '\n';
  }
  return os.str();
}

inline constexpr const char* kOutputRootEnv = "SELFLOOP_OUTPUT_ROOT";

/// Default location for a run that names no output directory:
/// $SELFLOOP_OUTPUT_ROOT/run-<hash>, or ./runs/run-<hash> when unset.
inline std::string default_output_dir(const LoopConfig& cfg) {
  const char* root = std::getenv(kOutputRootEnv);
  const std::filesystem::path base = root && *root ? std::filesystem::path(root) : std::filesystem::path("runs");
  return (base / ("run-" + manifest_hash(cfg))).string();
}

}  // namespace selfloop
