#pragma once

// Baseline hybrid CTC/attention training and the three CTS fine-tuning
// schedules (full, frozen encoder, frozen-then-full).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "cts/autodiff.hpp"
#include "cts/cts.hpp"
#include "cts/data.hpp"
#include "cts/model.hpp"
#include "cts/optim.hpp"

namespace cts {

enum class FinetuneMode { kFull, kFrozenEncoder, kTwoStep };

inline std::string to_string(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::kFull: return "full";
    case FinetuneMode::kFrozenEncoder: return "frozen_enc";
    case FinetuneMode::kTwoStep: return "two_step";
  }
  return "?";
}

inline FinetuneMode parse_finetune_mode(const std::string& s) {
  if (s == "full") return FinetuneMode::kFull;
  if (s == "frozen_enc") return FinetuneMode::kFrozenEncoder;
  if (s == "two_step") return FinetuneMode::kTwoStep;
  throw ConfigError("unknown fine-tuning mode '" + s + "' (expected full, frozen_enc or two_step)");
}

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double ctc_weight = 0.3;
  FinetuneMode mode = FinetuneMode::kTwoStep;
  double two_step_split = 0.5;
  /// Fraction of the schedule after which the learning rate decays linearly
  /// to 10% of its value; 1.0 keeps it constant.
  double decay_from = 1.0;
  bool keep_blanks = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw ConfigError("ctc_weight must lie in [0,1]");
    if (!(two_step_split > 0.0 && two_step_split < 1.0)) throw ConfigError("two_step_split must lie in (0,1)");
    if (!(decay_from >= 0.0 && decay_from <= 1.0)) throw ConfigError("decay_from must lie in [0,1]");
  }
};

struct StepLoss {
  std::size_t step = 0;
  double loss = 0.0;
  double ctc = 0.0;
  double att = 0.0;
};

struct TrainResult {
  std::vector<StepLoss> curve;
};

inline void write_loss_csv(std::ostream& os, const TrainResult& r) {
  os << "step,loss,ctc_loss,att_loss\n";
  os.precision(10);
  for (const StepLoss& s : r.curve) os << s.step << ',' << s.loss << ',' << s.ctc << ',' << s.att << '\n';
}

/// Hybrid loss of one utterance on `tape`. With `use_mask`, the CTS mask is
/// rebuilt from the current encoder output.
inline LossTerms utterance_loss(BoundModel& m, const Utterance& u, double ctc_weight, bool use_mask,
                                bool keep_blanks) {
  const ModelConfig& cfg = m.model().config();
  Var y = encode(m, u.features);
  Var log_post = ctc_log_posterior(m, y);
  std::vector<int> history{cfg.sos()};
  history.insert(history.end(), u.transcript.begin(), u.transcript.end());
  CtsMask mask;
  if (use_mask) {
    mask = build_cts_mask(framewise_posteriors(y.value(), m.model().param(m.model().ctc_head())), keep_blanks);
  }
  Var logits = decode_logits(m, y, use_mask ? &mask : nullptr, history);
  return hybrid_loss(log_post, logits, u.transcript, ctc_weight, cfg.eos());
}

namespace detail {

/// Epoch-shuffled batches drawn from one seeded generator.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_;
};

inline TrainResult run_schedule(Model& model, const Dataset& data, const TrainConfig& cfg, std::size_t steps,
                                bool use_mask, bool freeze_encoder) {
  cfg.validate();
  TrainResult result;
  if (steps == 0) return result;
  if (data.empty()) throw EmptyInputError("training: empty dataset");
  model.set_all_trainable(true);
  model.set_encoder_trainable(!freeze_encoder);
  model.zero_grad();
  Adam opt(model.parameter_ptrs(), AdamOptions{cfg.lr});
  BatchSampler sampler(data.size(), cfg.seed);
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  const auto decay_start = static_cast<std::size_t>(cfg.decay_from * static_cast<double>(steps));
  try {
    for (std::size_t step = 0; step < steps; ++step) {
      StepLoss sl{step, 0.0, 0.0, 0.0};
      for (std::size_t idx : sampler.next(cfg.batch_size)) {
        Tape tape;
        BoundModel m(tape, model);
        LossTerms t = utterance_loss(m, data[idx], cfg.ctc_weight, use_mask, cfg.keep_blanks);
        tape.backward(scale(t.total, inv_batch));
        sl.loss += t.total.value().item() * inv_batch;
        sl.ctc += t.ctc.value().item() * inv_batch;
        sl.att += t.att.value().item() * inv_batch;
      }
      if (!std::isfinite(sl.loss)) throw NumericError("non-finite loss");
      double lr = cfg.lr;
      if (step >= decay_start && steps > decay_start) {
        const double frac = static_cast<double>(step - decay_start) / static_cast<double>(steps - decay_start);
        lr = cfg.lr * (1.0 - 0.9 * frac);
      }
      opt.step(lr);
      result.curve.push_back(sl);
    }
  } catch (const NumericError& e) {
    model.set_all_trainable(true);
    throw TrainingFailure(std::string("training diverged: ") + e.what());
  }
  model.set_all_trainable(true);
  return result;
}

}  // namespace detail

/// Phase 1: hybrid-loss training without any mask.
inline TrainResult train_baseline(Model& model, const Dataset& data, const TrainConfig& cfg) {
  return detail::run_schedule(model, data, cfg, cfg.steps, false, false);
}

/// Phase 3: fine-tuning with the CTS mask attached. frozen_enc keeps the
/// encoder and CTC head fixed; two_step runs frozen_enc for
/// round(split * steps) steps and then full for the rest, each stage with a
/// fresh optimizer and the configured seed.
inline TrainResult finetune(Model& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  switch (cfg.mode) {
    case FinetuneMode::kFull:
      return detail::run_schedule(model, data, cfg, cfg.steps, true, false);
    case FinetuneMode::kFrozenEncoder:
      return detail::run_schedule(model, data, cfg, cfg.steps, true, true);
    case FinetuneMode::kTwoStep: {
      const auto first = static_cast<std::size_t>(std::llround(cfg.two_step_split * static_cast<double>(cfg.steps)));
      TrainResult a = detail::run_schedule(model, data, cfg, first, true, true);
      TrainResult b = detail::run_schedule(model, data, cfg, cfg.steps - first, true, false);
      for (StepLoss s : b.curve) {
        s.step += first;
        a.curve.push_back(s);
      }
      return a;
    }
  }
  return {};
}

}  // namespace cts
