#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "cts/cts.hpp"
#include "oracles.hpp"

namespace cts {
namespace {

Posterior random_posterior(std::size_t t, std::size_t v, std::mt19937_64& rng) {
  return Posterior{kernels::softmax_lastdim(testing::random_tensor({t, v}, rng, 2.0))};
}

// Posterior whose greedy labels are `labels` and whose per-frame winning
// scores are `scores`.
Posterior planted(const std::vector<int>& labels, const std::vector<double>& scores, std::size_t v) {
  Tensor p({labels.size(), v});
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const double rest = (1.0 - scores[t]) / static_cast<double>(v - 1);
    for (std::size_t w = 0; w < v; ++w) p.at(t, w) = static_cast<int>(w) == labels[t] ? scores[t] : rest;
  }
  return Posterior{p};
}

TEST(SegmentAlignment, Examples) {
  EXPECT_EQ(segment_alignment(std::vector<int>{5, 5, 0, 0, 0, 7}),
            (std::vector<Segment>{{0, 1, 5}, {2, 4, 0}, {5, 5, 7}}));
  EXPECT_EQ(segment_alignment(std::vector<int>{3}), (std::vector<Segment>{{0, 0, 3}}));
  EXPECT_EQ(segment_alignment(std::vector<int>{2, 2, 2}), (std::vector<Segment>{{0, 2, 2}}));
  EXPECT_TRUE(segment_alignment(std::vector<int>{}).empty());
}

TEST(SelectRepresentative, PicksArgmax) {
  const Posterior p = planted({4, 4, 4}, {0.2, 0.9, 0.5}, 6);
  EXPECT_EQ(select_representative({0, 2, 4}, p), 1u);
}

TEST(SelectRepresentative, TieGoesToEarliestFrame) {
  const Posterior p = planted({2, 2}, {0.5, 0.5}, 4);
  EXPECT_EQ(select_representative({0, 1, 2}, p), 0u);
}

TEST(SelectRepresentative, MatchesScanOracle) {
  std::mt19937_64 rng(9);
  const Posterior p = random_posterior(60, 5, rng);
  std::uniform_int_distribution<std::size_t> pos(0, 59);
  std::uniform_int_distribution<int> lab(0, 4);
  for (int rep = 0; rep < 500; ++rep) {
    std::size_t a = pos(rng), b = pos(rng);
    if (a > b) std::swap(a, b);
    const Segment seg{a, b, lab(rng)};
    std::size_t best = a;
    for (std::size_t t = a; t <= b; ++t)
      if (p.at(t, seg.label) > p.at(best, seg.label)) best = t;
    EXPECT_EQ(select_representative(seg, p), best);
  }
}

TEST(BuildCtsMask, OneFramePerSegment) {
  // Greedy labels a a blank blank b.
  const Posterior p = planted({1, 1, 0, 0, 2}, {0.6, 0.8, 0.9, 0.7, 0.6}, 3);
  const CtsMask with = build_cts_mask(p, true);
  EXPECT_EQ(with.keep, (std::vector<bool>{false, true, true, false, true}));
  EXPECT_EQ(with.kept(), 3u);
  const CtsMask without = build_cts_mask(p, false);
  EXPECT_EQ(without.keep, (std::vector<bool>{false, true, false, false, true}));
  EXPECT_EQ(without.kept(), 2u);
}

TEST(BuildCtsMask, MatchesPipelineOracle) {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 100; ++rep) {
    const Posterior p = random_posterior(50, 6, rng);
    for (bool kb : {true, false}) EXPECT_EQ(build_cts_mask(p, kb).keep, testing::mask_oracle(p, kb));
  }
}

TEST(SummarizeSequence, AllTrueMaskIsIdentity) {
  std::mt19937_64 rng(11);
  const Tensor y = testing::random_tensor({6, 4}, rng);
  EXPECT_EQ(summarize_sequence(y, mask_from_keep(std::vector<bool>(6, true))), y);
  // per-frame distinct labels give the all-true mask through the pipeline
  const Posterior p = planted({1, 2, 1, 3, 2, 1}, {0.9, 0.9, 0.9, 0.9, 0.9, 0.9}, 4);
  EXPECT_EQ(summarize_sequence(y, build_cts_mask(p)), y);
}

TEST(SummarizeSequence, GathersRepresentativeRows) {
  std::mt19937_64 rng(12);
  const Tensor y = testing::random_tensor({6, 3}, rng);
  const Tensor s = summarize_sequence(y, mask_from_keep({false, true, false, false, true, false}));
  ASSERT_EQ(s.shape(), (Shape{2, 3}));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(s.at(0, j), y.at(1, j));
    EXPECT_EQ(s.at(1, j), y.at(4, j));
  }
}

TEST(SummarizeSequence, RandomGatherIsBitExact) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    const Posterior p = random_posterior(30, 4, rng);
    const Tensor y = testing::random_tensor({30, 5}, rng);
    const CtsMask m = build_cts_mask(p);
    const Tensor s = summarize_sequence(y, m);
    for (std::size_t i = 0; i < m.kept(); ++i)
      for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(s.at(i, j), y.at(m.representatives[i], j));
  }
}

TEST(SummarizeSequence, LengthMismatchThrows) {
  EXPECT_THROW(summarize_sequence(Tensor({5, 2}), mask_from_keep(std::vector<bool>(4, true))), DimensionError);
}

TEST(SummarizeSequence, MaxPoolAblation) {
  const Posterior p = planted({1, 1, 0, 2}, {0.9, 0.8, 0.9, 0.9}, 3);
  const Tensor y = Tensor::matrix(4, 2, {1, 5, 3, 2, 0, 0, 7, -1});
  const Tensor s = summarize_sequence(y, build_cts_mask(p), SummaryMode::kMaxPool);
  EXPECT_EQ(s, Tensor::matrix(3, 2, {3, 5, 0, 0, 7, -1}));
  const Tensor s2 = summarize_sequence(y, build_cts_mask(p, false), SummaryMode::kMaxPool);
  EXPECT_EQ(s2, Tensor::matrix(2, 2, {3, 5, 7, -1}));
}

TEST(MaskStats, Ratios) {
  std::vector<bool> keep(100, false);
  for (std::size_t t = 0; t < 100; t += 5) keep[t] = true;
  EXPECT_DOUBLE_EQ(mask_stats(mask_from_keep(keep)).compression_ratio, 0.20);
  const Posterior p = planted({1, 2, 3, 1, 2}, {0.9, 0.9, 0.9, 0.9, 0.9}, 4);
  EXPECT_DOUBLE_EQ(mask_stats(build_cts_mask(p)).compression_ratio, 1.0);
  const Posterior q = planted({0, 0, 0, 1}, {0.9, 0.9, 0.9, 0.9}, 4);
  EXPECT_DOUBLE_EQ(mask_stats(build_cts_mask(q)).blank_fraction, 0.75);
  EXPECT_THROW(mask_stats(CtsMask{}), EmptyInputError);
}

TEST(MaskStats, MatchesCountOracle) {
  std::mt19937_64 rng(14);
  for (int rep = 0; rep < 100; ++rep) {
    const Posterior p = random_posterior(40, 3, rng);
    const CtsMask m = build_cts_mask(p, rep % 2 == 0);
    std::size_t kept = 0;
    for (bool k : m.keep) kept += k;
    EXPECT_EQ(mask_stats(m).compression_ratio, static_cast<double>(kept) / 40.0);
  }
}

TEST(CtsProperty, PartitionAlternationAndArgmax) {
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<std::size_t> tdist(1, 60), vdist(2, 8);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t t_len = tdist(rng), v = vdist(rng);
    // Low-temperature posteriors so runs are long enough to matter.
    Tensor logits = testing::random_tensor({t_len, v}, rng, 1.0);
    for (std::size_t t = 1; t < t_len; ++t)
      for (std::size_t w = 0; w < v; ++w) logits.at(t, w) = 0.7 * logits.at(t - 1, w) + 0.3 * logits.at(t, w);
    const Posterior p{kernels::softmax_lastdim(logits)};
    const CtsMask m = build_cts_mask(p);
    std::size_t next = 0;
    for (std::size_t i = 0; i < m.segments.size(); ++i) {
      const Segment& s = m.segments[i];
      EXPECT_EQ(s.start, next);
      EXPECT_LE(s.start, s.end);
      next = s.end + 1;
      if (i > 0) {
        EXPECT_NE(s.label, m.segments[i - 1].label);
      }
      const std::size_t r = m.representatives[i];
      EXPECT_TRUE(r >= s.start && r <= s.end);
      for (std::size_t t = s.start; t <= s.end; ++t) EXPECT_GE(p.at(r, s.label), p.at(t, s.label));
    }
    EXPECT_EQ(next, t_len);
    EXPECT_EQ(m.kept(), m.segments.size());
    EXPECT_EQ(m.keep, testing::mask_oracle(p, true));
  }
}

TEST(MaskFile, RoundTrip) {
  std::ostringstream os;
  write_mask_line(os, "utt1", {true, false, true});
  write_mask_line(os, "utt2", {false});
  EXPECT_EQ(os.str(), "utt1 1 0 1\nutt2 0\n");
  std::istringstream is(os.str());
  const auto recs = read_mask_file(is);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].id, "utt1");
  EXPECT_EQ(recs[0].keep, (std::vector<bool>{true, false, true}));
  std::istringstream bad("u 1 2\n");
  EXPECT_THROW(read_mask_file(bad), FormatError);
}

}  // namespace
}  // namespace cts
