#pragma once

// Decoder compute accounting and wall-clock decode benchmarking.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <vector>

#include "cts/evaluate.hpp"
#include "cts/model.hpp"

namespace cts {

struct DecoderOpCount {
  std::uint64_t xattn_macs_masked = 0;
  std::uint64_t xattn_macs_dense = 0;
  double savings_fraction = 0.0;
};

/// Cross-attention multiply-accumulates for `steps` decode steps of `beam`
/// hypotheses: per step, hypothesis, layer and head, one score and one
/// context MAC per key and head dimension.
inline DecoderOpCount count_decoder_ops(std::size_t enc_frames, std::size_t kept, const ModelConfig& cfg,
                                        std::size_t steps, std::size_t beam) {
  if (kept > enc_frames) throw DimensionError("count_decoder_ops: kept frames exceed encoder frames");
  const std::uint64_t dh = cfg.d_model / cfg.n_heads;
  const std::uint64_t per_key = static_cast<std::uint64_t>(steps) * beam * cfg.dec_layers * cfg.n_heads * 2 * dh;
  DecoderOpCount c;
  c.xattn_macs_dense = per_key * enc_frames;
  c.xattn_macs_masked = per_key * kept;
  c.savings_fraction =
      c.xattn_macs_dense ? 1.0 - static_cast<double>(c.xattn_macs_masked) / static_cast<double>(c.xattn_macs_dense) : 0.0;
  return c;
}

inline constexpr double kFrameShiftSeconds = 0.010;

struct BenchRow {
  std::size_t beam = 0;
  bool mask = false;
  std::size_t utts = 0;
  double mean_ms = 0.0;    // per utterance, averaged over repeats
  double median_ms = 0.0;  // per utterance, median over repeats
  std::size_t total_frames = 0;
  double ratio = 0.0;      // real-time factor from the median repeat
};

/// Times single-threaded decoding (encoder, mask construction and beam
/// search) of every utterance, `repeats` times per beamwidth.
inline std::vector<BenchRow> bench_decode(const Model& model, const Dataset& data, const std::vector<std::size_t>& beams,
                                          bool with_mask, std::size_t repeats, bool keep_blanks = true) {
  if (repeats < 3) throw ConfigError("bench_decode: repeats must be >= 3");
  if (data.empty()) throw EmptyInputError("bench_decode: empty dataset");
  std::size_t frames = 0;
  for (const Utterance& u : data) frames += u.features.dim(0);
  std::vector<BenchRow> rows;
  for (std::size_t beam : beams) {
    const DecodeSettings s{beam, with_mask, keep_blanks, 0};
    std::vector<double> per_utt_ms;
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (const Utterance& u : data) {
        const DecodedUtterance d = decode_utterance(model, u, s);
        if (d.hyp.tokens.empty()) throw DecodeError("bench_decode: empty hypothesis");
      }
      const auto t1 = std::chrono::steady_clock::now();
      per_utt_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(data.size()));
    }
    BenchRow row;
    row.beam = beam;
    row.mask = with_mask;
    row.utts = data.size();
    row.total_frames = frames;
    row.mean_ms = std::accumulate(per_utt_ms.begin(), per_utt_ms.end(), 0.0) / static_cast<double>(repeats);
    std::vector<double> sorted = per_utt_ms;
    std::sort(sorted.begin(), sorted.end());
    row.median_ms = repeats % 2 ? sorted[repeats / 2] : 0.5 * (sorted[repeats / 2 - 1] + sorted[repeats / 2]);
    const double audio_s = static_cast<double>(frames) * kFrameShiftSeconds;
    row.ratio = row.median_ms * 1e-3 * static_cast<double>(data.size()) / audio_s;
    rows.push_back(row);
  }
  return rows;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows, bool header = true) {
  if (header) os << "beamwidth,mask,utts,mean_ms,median_ms,ratio\n";
  os.precision(6);
  for (const BenchRow& r : rows)
    os << r.beam << ',' << (r.mask ? 1 : 0) << ',' << r.utts << ',' << r.mean_ms << ',' << r.median_ms << ','
       << r.ratio << '\n';
}

}  // namespace cts
