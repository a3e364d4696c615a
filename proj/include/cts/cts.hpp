#pragma once

// Connectionist temporal summarization: segment the greedy CTC alignment into
// runs of equal labels, keep the highest-scoring frame of each run, and hide
// every other frame from the decoder's cross-attention.

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cts/ctc.hpp"
#include "cts/tensor.hpp"

namespace cts {

/// Inclusive frame range [start, end] carrying one greedy label.
struct Segment {
  std::size_t start = 0;
  std::size_t end = 0;
  int label = kBlank;

  std::size_t length() const { return end - start + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Keep/skip decision per encoder frame plus the segmentation behind it.
/// `representatives` is increasing and keep[t] holds exactly for its members.
struct CtsMask {
  std::vector<bool> keep;
  std::vector<Segment> segments;
  std::vector<std::size_t> representatives;

  std::size_t frames() const { return keep.size(); }
  std::size_t kept() const { return representatives.size(); }
};

/// Maximal runs of equal consecutive labels, blank runs included.
inline std::vector<Segment> segment_alignment(std::span<const int> labels) {
  std::vector<Segment> segs;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (segs.empty() || segs.back().label != labels[t]) {
      segs.push_back(Segment{t, t, labels[t]});
    } else {
      segs.back().end = t;
    }
  }
  return segs;
}

inline std::vector<Segment> segment_alignment(const Alignment& a) { return segment_alignment(a.labels); }

/// Frame in `seg` with the largest posterior for the segment label; the
/// earliest frame wins ties.
inline std::size_t select_representative(const Segment& seg, const Posterior& p) {
  if (seg.end < seg.start || seg.end >= p.frames()) {
    throw DimensionError("select_representative: segment outside posterior range");
  }
  std::size_t best = seg.start;
  for (std::size_t t = seg.start + 1; t <= seg.end; ++t)
    if (p.at(t, seg.label) > p.at(best, seg.label)) best = t;
  return best;
}

/// Greedy alignment, segmentation and representative selection. With
/// `keep_blanks` false, blank segments contribute no frame at all.
inline CtsMask build_cts_mask(const Posterior& p, bool keep_blanks = true) {
  CtsMask m;
  const Alignment a = greedy_alignment(p);
  m.keep.assign(a.size(), false);
  m.segments = segment_alignment(a);
  for (const Segment& seg : m.segments) {
    if (!keep_blanks && seg.label == kBlank) continue;
    const std::size_t rep = select_representative(seg, p);
    m.representatives.push_back(rep);
    m.keep[rep] = true;
  }
  return m;
}

/// Mask carrying an explicit keep vector and no segmentation (as read from a
/// mask file or built by hand).
inline CtsMask mask_from_keep(std::vector<bool> keep) {
  CtsMask m;
  m.keep = std::move(keep);
  for (std::size_t t = 0; t < m.keep.size(); ++t)
    if (m.keep[t]) m.representatives.push_back(t);
  return m;
}

enum class SummaryMode {
  kRepresentative,  // row of the representative frame
  kMaxPool,         // elementwise max over the segment (ablation only)
};

/// Y' = rows of Y at the representative frames, in time order.
inline Tensor summarize_sequence(const Tensor& y, const CtsMask& m,
                                 SummaryMode mode = SummaryMode::kRepresentative) {
  if (y.rank() != 2 || y.dim(0) != m.frames()) {
    throw DimensionError("summarize_sequence: mask covers " + std::to_string(m.frames()) +
                         " frames, sequence is " + shape_str(y.shape()));
  }
  const std::size_t d = y.dim(1);
  Tensor out({m.kept(), d});
  if (mode == SummaryMode::kRepresentative) {
    for (std::size_t i = 0; i < m.kept(); ++i)
      std::copy_n(y.row(m.representatives[i]).begin(), d, out.row(i).begin());
    return out;
  }
  std::size_t i = 0;
  for (const Segment& seg : m.segments) {
    if (i >= m.kept() || m.representatives[i] < seg.start || m.representatives[i] > seg.end) continue;
    auto dst = out.row(i++);
    std::copy_n(y.row(seg.start).begin(), d, dst.begin());
    for (std::size_t t = seg.start + 1; t <= seg.end; ++t) {
      auto src = y.row(t);
      for (std::size_t j = 0; j < d; ++j) dst[j] = std::max(dst[j], src[j]);
    }
  }
  return out;
}

/// Differentiable gather of the representative rows.
inline Var summarize_sequence(const Var& y, const CtsMask& m) {
  if (y.value().rank() != 2 || y.value().dim(0) != m.frames()) {
    throw DimensionError("summarize_sequence: mask length does not match sequence");
  }
  return gather_rows(y, m.representatives);
}

struct MaskStats {
  std::size_t frames = 0;
  std::size_t kept = 0;
  double compression_ratio = 0.0;
  double blank_fraction = 0.0;
};

inline MaskStats mask_stats(const CtsMask& m) {
  if (m.frames() == 0) throw EmptyInputError("mask_stats: mask has no frames");
  MaskStats s;
  s.frames = m.frames();
  s.kept = static_cast<std::size_t>(std::count(m.keep.begin(), m.keep.end(), true));
  s.compression_ratio = static_cast<double>(s.kept) / static_cast<double>(s.frames);
  std::size_t blank = 0;
  for (const Segment& seg : m.segments)
    if (seg.label == kBlank) blank += seg.length();
  s.blank_fraction = static_cast<double>(blank) / static_cast<double>(s.frames);
  return s;
}

// Mask file: one line per utterance, "<id> <0|1> <0|1> ...".

inline void write_mask_line(std::ostream& os, const std::string& id, const std::vector<bool>& keep) {
  os << id;
  for (bool k : keep) os << ' ' << (k ? '1' : '0');
  os << '\n';
}

struct MaskRecord {
  std::string id;
  std::vector<bool> keep;
};

inline std::vector<MaskRecord> read_mask_file(std::istream& is) {
  std::vector<MaskRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    MaskRecord rec;
    ls >> rec.id;
    std::string tok;
    while (ls >> tok) {
      if (tok != "0" && tok != "1") {
        throw FormatError("mask file line " + std::to_string(lineno) + ": expected 0/1, got '" + tok + "'");
      }
      rec.keep.push_back(tok == "1");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace cts
