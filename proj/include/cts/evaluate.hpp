#pragma once

#include <algorithm>
#include <vector>

#include "cts/data.hpp"
#include "cts/decode.hpp"
#include "cts/metrics.hpp"
#include "cts/model.hpp"

namespace cts {

/// 1 − (edit distance / reference length) of collapsed greedy CTC output,
/// pooled over the corpus.
inline double ctc_token_accuracy(const Model& model, const Dataset& data) {
  ErrorBreakdown total;
  for (const Utterance& u : data) {
    const EncoderOutput enc = encoder_forward(model, u.features);
    total += wer_score(u.transcript, ctc_collapse(greedy_alignment(enc.posterior).labels));
  }
  return std::max(0.0, 1.0 - total.error_rate());
}

struct DecodeSettings {
  std::size_t beam = 4;
  bool use_mask = false;
  bool keep_blanks = true;
  std::size_t max_len = 0;
};

struct DecodedUtterance {
  std::string id;
  Hypothesis hyp;
  CtsMask mask;  // empty unless use_mask
};

inline DecodedUtterance decode_utterance(const Model& model, const Utterance& u, const DecodeSettings& s,
                                         kernels::MacCounter* counter = nullptr) {
  DecodedUtterance out;
  out.id = u.id;
  const EncoderOutput enc = encoder_forward(model, u.features);
  if (s.use_mask) out.mask = build_cts_mask(enc.posterior, s.keep_blanks);
  out.hyp = beam_search(model, enc, s.use_mask ? &out.mask : nullptr, SearchOptions{s.beam, s.max_len, counter});
  return out;
}

/// Pooled attention-decoding error breakdown over `data`.
inline ErrorBreakdown corpus_wer(const Model& model, const Dataset& data, const DecodeSettings& s) {
  ErrorBreakdown total;
  for (const Utterance& u : data) total += wer_score(u.transcript, decode_utterance(model, u, s).hyp.labels(model.config()));
  return total;
}

}  // namespace cts
