#pragma once

// Synthetic acoustic sequences: each label owns a fixed template vector and
// is rendered as a run of noisy copies of it; silence is the zero vector.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cts/error.hpp"
#include "cts/io.hpp"
#include "cts/tensor.hpp"

namespace cts {

struct SyntheticSpec {
  std::size_t vocab_size = 12;  // labels, excluding blank
  std::size_t feat_dim = 16;
  std::size_t dur_min = 8;  // frames per label run
  std::size_t dur_max = 16;
  std::size_t min_labels = 5;
  std::size_t max_labels = 10;
  double noise_sigma = 0.1;
  double blank_gap_prob = 0.3;
  std::uint64_t seed = 7;

  void validate() const {
    if (vocab_size < 1) throw ConfigError("synthetic vocab_size must be >= 1");
    if (feat_dim < 1) throw ConfigError("synthetic feat_dim must be >= 1");
    if (dur_min < 1 || dur_min > dur_max) throw ConfigError("synthetic durations need 1 <= dur_min <= dur_max");
    if (min_labels < 1 || min_labels > max_labels) throw ConfigError("synthetic label counts need 1 <= min <= max");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!(blank_gap_prob >= 0.0 && blank_gap_prob <= 1.0)) throw ConfigError("blank_gap_prob must lie in [0,1]");
  }
};

struct Utterance {
  std::string id;
  Tensor features;              // [T × feat_dim]
  std::vector<int> transcript;  // label ids in [1, vocab_size]
  std::vector<int> frame_labels;  // generating label per frame, 0 = silence
};

using Dataset = std::vector<Utterance>;

/// Template rows [vocab_size+1 × feat_dim]; row 0 (silence) is zero. Every
/// pair of rows is at least distance 1 apart.
inline Tensor label_templates(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Tensor t({spec.vocab_size + 1, spec.feat_dim});
  for (std::size_t k = 1; k <= spec.vocab_size; ++k) {
    for (int attempt = 0;; ++attempt) {
      for (double& v : t.row(k)) v = unit(rng);
      bool separated = true;
      for (std::size_t j = 0; j < k && separated; ++j) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < spec.feat_dim; ++c) d2 += (t.at(k, c) - t.at(j, c)) * (t.at(k, c) - t.at(j, c));
        separated = d2 >= 1.0;
      }
      if (separated) break;
      if (attempt > 10000) throw ConfigError("cannot place unit-separated templates; raise feat_dim");
    }
  }
  return t;
}

/// Utterance `index` of the stream defined by `spec`; independent of every
/// other index.
inline Utterance synthesize_utterance(const SyntheticSpec& spec, const Tensor& templates, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> n_labels(spec.min_labels, spec.max_labels);
  std::uniform_int_distribution<int> label(1, static_cast<int>(spec.vocab_size));
  std::uniform_int_distribution<std::size_t> dur(spec.dur_min, spec.dur_max);
  std::bernoulli_distribution gap(spec.blank_gap_prob);
  std::normal_distribution<double> noise(0.0, 1.0);

  Utterance u;
  u.id = "utt" + std::to_string(index);
  const std::size_t n = n_labels(rng);
  for (std::size_t i = 0; i < n; ++i) u.transcript.push_back(label(rng));

  auto emit = [&](int lab, std::size_t frames) { u.frame_labels.insert(u.frame_labels.end(), frames, lab); };
  if (gap(rng)) emit(0, dur(rng));
  for (std::size_t i = 0; i < n; ++i) {
    // A repeated label is only audible as two labels with silence between.
    const bool forced = i > 0 && u.transcript[i] == u.transcript[i - 1];
    if (i > 0 && (gap(rng) || forced)) emit(0, dur(rng));
    emit(u.transcript[i], dur(rng));
  }
  if (gap(rng)) emit(0, dur(rng));

  u.features = Tensor({u.frame_labels.size(), spec.feat_dim});
  for (std::size_t t = 0; t < u.frame_labels.size(); ++t) {
    const auto tmpl = templates.row(static_cast<std::size_t>(u.frame_labels[t]));
    auto row = u.features.row(t);
    for (std::size_t c = 0; c < spec.feat_dim; ++c) row[c] = tmpl[c] + spec.noise_sigma * noise(rng);
  }
  return u;
}

/// Utterances [first, first + n) of the stream; bit-identical for equal specs.
inline Dataset gen_synthetic_dataset(const SyntheticSpec& spec, std::size_t n_utts, std::size_t first = 0) {
  const Tensor templates = label_templates(spec);
  Dataset out;
  out.reserve(n_utts);
  for (std::size_t i = 0; i < n_utts; ++i) out.push_back(synthesize_utterance(spec, templates, first + i));
  return out;
}

// Dataset file: "CTSD1", u64 count, then per utterance: u64-length id,
// u64 transcript length, u64 label ids, feature tensor.

inline constexpr const char* kDatasetMagic = "CTSD1";

inline void save_dataset(std::ostream& os, const Dataset& data) {
  os.write(kDatasetMagic, 5);
  io::write_u64(os, data.size());
  for (const Utterance& u : data) {
    io::write_string(os, u.id);
    io::write_u64(os, u.transcript.size());
    for (int id : u.transcript) io::write_u64(os, static_cast<std::uint64_t>(id));
    io::write_tensor(os, u.features);
  }
}

inline Dataset load_dataset(std::istream& is) {
  io::expect_magic(is, kDatasetMagic);
  const std::uint64_t n = io::read_u64(is);
  Dataset data;
  for (std::uint64_t i = 0; i < n; ++i) {
    Utterance u;
    u.id = io::read_string(is);
    const std::uint64_t len = io::read_u64(is);
    if (len > (1u << 20)) throw FormatError("implausible transcript length");
    for (std::uint64_t k = 0; k < len; ++k) u.transcript.push_back(static_cast<int>(io::read_u64(is)));
    u.features = io::read_tensor(is);
    if (u.features.rank() != 2) throw FormatError("utterance " + u.id + ": features must be a matrix");
    data.push_back(std::move(u));
  }
  return data;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write dataset " + path.string());
  save_dataset(os, data);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("dataset not found: " + path.string());
  return load_dataset(is);
}

}  // namespace cts
