#pragma once

// Attention beam search over the incremental decoder, optionally restricted
// to the CTS-selected encoder frames, plus a two-pass mode that rescores a
// CTC prefix-beam N-best list with the decoder.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "cts/ctc.hpp"
#include "cts/cts.hpp"
#include "cts/kernels.hpp"
#include "cts/model.hpp"

namespace cts {

/// Partial or complete decode. `tokens` starts with start-of-sequence and,
/// once finished, ends with end-of-sequence.
struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0;  // accumulated log-probability
  bool finished = false;

  /// Emitted labels without the start/end markers.
  std::vector<int> labels(const ModelConfig& cfg) const {
    std::vector<int> out;
    for (int t : tokens)
      if (t != cfg.sos() && t != cfg.eos()) out.push_back(t);
    return out;
  }
};

/// Higher score first; equal scores fall back to the lexicographically
/// smaller token sequence.
inline bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

/// Tokens a hypothesis may be extended with: every non-blank label and eos.
inline std::vector<int> emittable_tokens(const ModelConfig& cfg) {
  std::vector<int> out;
  for (int t = 1; t < static_cast<int>(cfg.vocab_size); ++t) out.push_back(t);
  out.push_back(cfg.eos());
  return out;
}

/// 2·(number of CTS segments) + 5.
inline std::size_t default_max_len(const CtsMask& m) { return 2 * m.segments.size() + 5; }

/// Decoder memory for search: the summarized sequence when masked, else Y.
inline Tensor search_memory(const EncoderOutput& enc, const CtsMask* mask) {
  if (enc.y.rank() != 2 || enc.y.dim(0) == 0) throw DecodeError("decode: empty encoder output");
  if (!mask) return enc.y;
  if (mask->frames() != enc.y.dim(0)) throw DimensionError("decode: mask length does not match encoder frames");
  if (mask->kept() == 0) throw DecodeError("decode: mask keeps no frames");
  return summarize_sequence(enc.y, *mask);
}

struct SearchOptions {
  std::size_t beam = 4;
  std::size_t max_len = 0;  // 0: derived from the CTS segmentation
  kernels::MacCounter* counter = nullptr;
};

/// Length-synchronous beam search. Each round extends every live hypothesis
/// by every emittable token and keeps the best `beam` candidates; those
/// ending in eos are finished. Search stops when no live hypothesis can
/// beat the best finished one, or after max_len tokens.
inline Hypothesis beam_search(const Model& model, const EncoderOutput& enc, const CtsMask* mask,
                              const SearchOptions& opts) {
  if (opts.beam == 0) throw ConfigError("beam_search: beamwidth must be >= 1");
  const ModelConfig& cfg = model.config();
  const Tensor memory = search_memory(enc, mask);
  std::size_t max_len = opts.max_len;
  if (max_len == 0) max_len = default_max_len(mask ? *mask : build_cts_mask(enc.posterior));

  IncrementalDecoder dec(model, memory, {}, opts.counter);
  struct Live {
    Hypothesis hyp;
    IncrementalDecoder::State state;
    std::vector<double> next;  // log-probs for the following token
  };
  std::vector<Live> live(1);
  live[0].hyp.tokens = {cfg.sos()};
  live[0].state = dec.initial_state();
  live[0].next = dec.step(live[0].state, cfg.sos());

  const std::vector<int> vocab = emittable_tokens(cfg);
  std::optional<Hypothesis> best_finished;
  for (std::size_t len = 0; len < max_len && !live.empty(); ++len) {
    struct Candidate {
      Hypothesis hyp;
      std::size_t parent;
    };
    std::vector<Candidate> cands;
    cands.reserve(live.size() * vocab.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (int tok : vocab) {
        Candidate c{live[i].hyp, i};
        c.hyp.tokens.push_back(tok);
        c.hyp.score += live[i].next[static_cast<std::size_t>(tok)];
        c.hyp.finished = tok == cfg.eos();
        cands.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(opts.beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) { return better(a.hyp, b.hyp); });
    std::vector<Live> next_live;
    for (std::size_t k = 0; k < keep; ++k) {
      Candidate& c = cands[k];
      if (c.hyp.finished) {
        if (!best_finished || better(c.hyp, *best_finished)) best_finished = c.hyp;
        continue;
      }
      if (len + 1 == max_len) {
        next_live.push_back(Live{std::move(c.hyp), {}, {}});
        continue;
      }
      Live l{std::move(c.hyp), live[c.parent].state, {}};
      l.next = dec.step(l.state, l.hyp.tokens.back());
      next_live.push_back(std::move(l));
    }
    live = std::move(next_live);
    if (best_finished && !live.empty()) {
      double top = -std::numeric_limits<double>::infinity();
      for (const Live& l : live) top = std::max(top, l.hyp.score);
      // Scores only decrease, so no live hypothesis can overtake.
      if (top < best_finished->score) break;
    }
  }
  if (best_finished) return *best_finished;
  if (live.empty()) throw DecodeError("beam_search: no hypothesis survived");
  auto it = std::min_element(live.begin(), live.end(),
                             [](const Live& a, const Live& b) { return better(a.hyp, b.hyp); });
  return it->hyp;
}

/// Stepwise argmax decoding (lowest id on ties).
inline Hypothesis greedy_search(const Model& model, const EncoderOutput& enc, const CtsMask* mask,
                                std::size_t max_len = 0) {
  const ModelConfig& cfg = model.config();
  const Tensor memory = search_memory(enc, mask);
  if (max_len == 0) max_len = default_max_len(mask ? *mask : build_cts_mask(enc.posterior));
  IncrementalDecoder dec(model, memory);
  auto state = dec.initial_state();
  Hypothesis h;
  h.tokens = {cfg.sos()};
  std::vector<double> lp = dec.step(state, cfg.sos());
  const std::vector<int> vocab = emittable_tokens(cfg);
  for (std::size_t len = 0; len < max_len; ++len) {
    int best = vocab.front();
    for (int tok : vocab)
      if (lp[static_cast<std::size_t>(tok)] > lp[static_cast<std::size_t>(best)]) best = tok;
    h.tokens.push_back(best);
    h.score += lp[static_cast<std::size_t>(best)];
    if (best == cfg.eos()) {
      h.finished = true;
      break;
    }
    if (len + 1 < max_len) lp = dec.step(state, best);
  }
  return h;
}

/// Teacher-forced decoder log-probability of `labels` followed by eos.
inline double sequence_log_prob(const Model& model, const IncrementalDecoder& dec, std::span<const int> labels) {
  const ModelConfig& cfg = model.config();
  auto state = dec.initial_state();
  std::vector<double> lp = dec.step(state, cfg.sos());
  double score = 0.0;
  for (int l : labels) {
    score += lp[static_cast<std::size_t>(l)];
    lp = dec.step(state, l);
  }
  return score + lp[static_cast<std::size_t>(cfg.eos())];
}

/// CTC prefix beam search; returns up to `n` label sequences ordered by
/// prefix probability (ties: lexicographically smaller first).
inline std::vector<std::vector<int>> ctc_prefix_nbest(const Posterior& p, std::size_t n) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  struct Score {
    double blank = kNegInf, label = kNegInf;
    double total() const { return detail::log_add(blank, label); }
  };
  std::map<std::vector<int>, Score> beams;
  beams[{}].blank = 0.0;
  for (std::size_t t = 0; t < p.frames(); ++t) {
    std::map<std::vector<int>, Score> next;
    for (const auto& [prefix, sc] : beams) {
      for (std::size_t w = 0; w < p.vocab(); ++w) {
        const double lp = std::log(p.probs.at(t, w));
        if (w == static_cast<std::size_t>(kBlank)) {
          Score& dst = next[prefix];
          dst.blank = detail::log_add(dst.blank, sc.total() + lp);
          continue;
        }
        const int l = static_cast<int>(w);
        std::vector<int> ext = prefix;
        ext.push_back(l);
        Score& de = next[ext];
        if (!prefix.empty() && prefix.back() == l) {
          de.label = detail::log_add(de.label, sc.blank + lp);
          Score& same = next[prefix];
          same.label = detail::log_add(same.label, sc.label + lp);
        } else {
          de.label = detail::log_add(de.label, sc.total() + lp);
        }
      }
    }
    std::vector<std::pair<std::vector<int>, Score>> ranked(next.begin(), next.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
    if (ranked.size() > n) ranked.resize(n);
    beams = std::map<std::vector<int>, Score>(ranked.begin(), ranked.end());
  }
  std::vector<std::pair<std::vector<int>, Score>> ranked(beams.begin(), beams.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
  std::vector<std::vector<int>> out;
  for (auto& r : ranked) out.push_back(std::move(r.first));
  return out;
}

/// Two-pass decoding: CTC prefix-beam N-best, rescored by the (optionally
/// masked) attention decoder. The returned score is the decoder's.
inline Hypothesis ctc_rescore_search(const Model& model, const EncoderOutput& enc, const CtsMask* mask,
                                     std::size_t nbest, kernels::MacCounter* counter = nullptr) {
  if (nbest == 0) throw ConfigError("ctc_rescore_search: N-best size must be >= 1");
  const ModelConfig& cfg = model.config();
  const Tensor memory = search_memory(enc, mask);
  IncrementalDecoder dec(model, memory, {}, counter);
  std::optional<Hypothesis> best;
  for (const std::vector<int>& labels : ctc_prefix_nbest(enc.posterior, nbest)) {
    Hypothesis h;
    h.tokens = {cfg.sos()};
    h.tokens.insert(h.tokens.end(), labels.begin(), labels.end());
    h.tokens.push_back(cfg.eos());
    h.finished = true;
    h.score = sequence_log_prob(model, dec, labels);
    if (!best || better(h, *best)) best = std::move(h);
  }
  return *best;
}

}  // namespace cts
