#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "cts/error.hpp"

namespace cts {

/// Word error rate with its substitution/deletion/insertion split. Raw counts
/// satisfy errors() == sub + del + ins exactly; the percentage fields are
/// each rounded to two decimals on their own.
struct ErrorBreakdown {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_words = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }

  static double percent(std::size_t count, std::size_t total) {
    if (total == 0) return 0.0;
    return std::round(10000.0 * static_cast<double>(count) / static_cast<double>(total)) / 100.0;
  }
  double wer() const { return percent(errors(), ref_words); }
  double sub() const { return percent(substitutions, ref_words); }
  double del() const { return percent(deletions, ref_words); }
  double ins() const { return percent(insertions, ref_words); }

  /// Exact (unrounded) rate as a fraction.
  double error_rate() const {
    return ref_words ? static_cast<double>(errors()) / static_cast<double>(ref_words) : 0.0;
  }

  ErrorBreakdown& operator+=(const ErrorBreakdown& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    ref_words += o.ref_words;
    return *this;
  }
};

/// Unit-cost Levenshtein alignment. The backtrace prefers a substitution
/// (or match), then an insertion, then a deletion among equal-cost moves.
inline ErrorBreakdown wer_score(std::span<const int> ref, std::span<const int> hyp) {
  if (ref.empty()) throw EmptyInputError("wer_score: empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0u : 1u), at(i, j - 1) + 1, at(i - 1, j) + 1});

  ErrorBreakdown e;
  e.ref_words = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const std::size_t cost = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      if (at(i, j) == at(i - 1, j - 1) + cost) {
        e.substitutions += cost;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++e.insertions;
      --j;
    } else {
      ++e.deletions;
      --i;
    }
  }
  return e;
}

}  // namespace cts
