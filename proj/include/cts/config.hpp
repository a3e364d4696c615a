#pragma once

// Run configuration: flat `key = value` text, later sources override earlier
// ones, unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cts/data.hpp"
#include "cts/model.hpp"
#include "cts/training.hpp"

namespace cts {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "run";

  SyntheticSpec data;
  std::size_t train_utts = 8000;
  std::size_t test_utts = 200;

  ModelConfig model;
  TrainConfig train;
  TrainConfig finetune;

  std::size_t beam = 4;
  bool mask = false;
  std::size_t max_len = 0;
  bool keep_blanks = true;

  std::vector<std::size_t> bench_beams{1, 4, 10};
  std::size_t repeats = 3;
  std::size_t bench_utts = 50;

  RunConfig() {
    data.dur_min = 16;
    data.dur_max = 32;
    train.steps = 3500;
    train.decay_from = 0.5;
    finetune.steps = 1500;
    finetune.lr = 5e-4;
    finetune.decay_from = 0.5;
    finetune.mode = FinetuneMode::kTwoStep;
    sync();
  }

  /// Propagates shared settings (seed, vocabulary, blanks) into the parts.
  void sync() {
    data.seed = seed;
    train.seed = seed;
    finetune.seed = seed;
    model.vocab_size = data.vocab_size + 1;
    model.feat_dim = data.feat_dim;
    model.ctc_weight = train.ctc_weight;
    finetune.ctc_weight = train.ctc_weight;
    finetune.keep_blanks = keep_blanks;
    finetune.batch_size = train.batch_size;
  }

  void validate() const {
    data.validate();
    model.validate();
    train.validate();
    finetune.validate();
    if (train_utts == 0 || test_utts == 0) throw ConfigError("utterance counts must be >= 1");
    if (beam == 0) throw ConfigError("beam must be >= 1");
    if (repeats < 3) throw ConfigError("repeats must be >= 3");
    if (bench_beams.empty()) throw ConfigError("bench.beams must list at least one beamwidth");
    for (std::size_t b : bench_beams)
      if (b == 0) throw ConfigError("bench.beams entries must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CTS_SIZE(path)                                                                                   \
  Field {                                                                                                \
    [](RunConfig& c, const std::string& v) { c.path = parse_number<decltype(c.path)>(#path, v); },       \
        [](const RunConfig& c) { return std::to_string(c.path); }                                        \
  }
#define CTS_REAL(path)                                                                          \
  Field {                                                                                       \
    [](RunConfig& c, const std::string& v) { c.path = parse_number<double>(#path, v); },        \
        [](const RunConfig& c) { return format_double(c.path); }                                \
  }
#define CTS_BOOL(path)                                                                         \
  Field {                                                                                      \
    [](RunConfig& c, const std::string& v) { c.path = parse_bool(#path, v); },                 \
        [](const RunConfig& c) { return std::string(c.path ? "true" : "false"); }              \
  }

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"seed", CTS_SIZE(seed)},
      {"out_dir", {[](RunConfig& c, const std::string& v) { c.out_dir = v; },
                   [](const RunConfig& c) { return c.out_dir; }}},
      {"data.vocab_size", CTS_SIZE(data.vocab_size)},
      {"data.feat_dim", CTS_SIZE(data.feat_dim)},
      {"data.dur_min", CTS_SIZE(data.dur_min)},
      {"data.dur_max", CTS_SIZE(data.dur_max)},
      {"data.min_labels", CTS_SIZE(data.min_labels)},
      {"data.max_labels", CTS_SIZE(data.max_labels)},
      {"data.noise_sigma", CTS_REAL(data.noise_sigma)},
      {"data.blank_gap_prob", CTS_REAL(data.blank_gap_prob)},
      {"data.train_utts", CTS_SIZE(train_utts)},
      {"data.test_utts", CTS_SIZE(test_utts)},
      {"model.d_model", CTS_SIZE(model.d_model)},
      {"model.n_heads", CTS_SIZE(model.n_heads)},
      {"model.d_ff", CTS_SIZE(model.d_ff)},
      {"model.enc_layers", CTS_SIZE(model.enc_layers)},
      {"model.dec_layers", CTS_SIZE(model.dec_layers)},
      {"train.steps", CTS_SIZE(train.steps)},
      {"train.batch_size", CTS_SIZE(train.batch_size)},
      {"train.lr", CTS_REAL(train.lr)},
      {"train.ctc_weight", CTS_REAL(train.ctc_weight)},
      {"train.decay_from", CTS_REAL(train.decay_from)},
      {"finetune.steps", CTS_SIZE(finetune.steps)},
      {"finetune.lr", CTS_REAL(finetune.lr)},
      {"finetune.decay_from", CTS_REAL(finetune.decay_from)},
      {"finetune.two_step_split", CTS_REAL(finetune.two_step_split)},
      {"finetune.mode", {[](RunConfig& c, const std::string& v) { c.finetune.mode = parse_finetune_mode(v); },
                         [](const RunConfig& c) { return to_string(c.finetune.mode); }}},
      {"cts.keep_blanks", CTS_BOOL(keep_blanks)},
      {"decode.beam", CTS_SIZE(beam)},
      {"decode.mask", CTS_BOOL(mask)},
      {"decode.max_len", CTS_SIZE(max_len)},
      {"bench.beams", {[](RunConfig& c, const std::string& v) {
                         c.bench_beams.clear();
                         std::stringstream ss(v);
                         std::string item;
                         while (std::getline(ss, item, ','))
                           c.bench_beams.push_back(parse_number<std::size_t>("bench.beams", trim(item)));
                       },
                       [](const RunConfig& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.bench_beams.size(); ++i)
                           s += (i ? "," : "") + std::to_string(c.bench_beams[i]);
                         return s;
                       }}},
      {"bench.repeats", CTS_SIZE(repeats)},
      {"bench.utts", CTS_SIZE(bench_utts)},
  };
  return table;
}

#undef CTS_SIZE
#undef CTS_REAL
#undef CTS_BOOL

}  // namespace detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& f = detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key: " + key);
  it->second.set(cfg, detail::trim(value));
  cfg.sync();
}

/// Applies `key = value` lines; blank lines and `#` comments are skipped.
inline void apply_config_text(RunConfig& cfg, std::istream& is) {
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, detail::trim(t.substr(0, eq)), t.substr(eq + 1));
  }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config file not found: " + path.string());
  apply_config_text(cfg, is);
}

inline std::string config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace cts
