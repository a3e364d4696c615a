#pragma once

// Toy attention encoder-decoder with a CTC head.
//
// Encoder: two pair-stacking linear+GELU stages (x4 time reduction),
// sinusoidal positions, pre-norm [self-attention, feedforward] blocks and a
// final layer norm. The CTC head projects encoder frames to the label
// vocabulary (blank = 0).
//
// Decoder: token embedding plus sinusoidal positions, pre-norm blocks of
// [causal self-attention, cross-attention over the encoder frames,
// feedforward], final layer norm and an output projection over the label
// vocabulary extended by start- and end-of-sequence ids.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cts/autodiff.hpp"
#include "cts/ctc.hpp"
#include "cts/cts.hpp"
#include "cts/kernels.hpp"
#include "cts/tensor.hpp"

namespace cts {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t vocab_size = 13;  // CTC vocabulary including blank
  std::size_t feat_dim = 16;
  double ctc_weight = 0.3;

  int sos() const { return static_cast<int>(vocab_size); }
  int eos() const { return static_cast<int>(vocab_size) + 1; }
  std::size_t decoder_vocab() const { return vocab_size + 2; }

  void validate() const {
    if (n_heads == 0 || d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (vocab_size < 2) throw ConfigError("vocab_size must cover blank plus at least one label");
    if (d_model < 2 || d_ff == 0 || feat_dim == 0) throw ConfigError("model widths must be positive");
    if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw ConfigError("ctc_weight must lie in [0,1]");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Encoder frames and their CTC posterior. Y has ceil(T/4) rows.
struct EncoderOutput {
  Tensor y;
  Posterior posterior;
};

class Model {
 public:
  struct Norm {
    std::size_t gamma, beta;
  };
  struct Linear {
    std::size_t w, b;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct FeedForward {
    Linear in, out;
  };
  struct EncoderLayer {
    Norm ln_attn, ln_ff;
    Attention attn;
    FeedForward ff;
  };
  struct DecoderLayer {
    Norm ln_self, ln_cross, ln_ff;
    Attention self_attn, cross_attn;
    FeedForward ff;
  };

  Model() = default;

  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 1) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.d_model;
    front1_ = add_linear("enc.front1", 2 * cfg_.feat_dim, d, rng);
    front2_ = add_linear("enc.front2", 2 * d, d, rng);
    for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
      const std::string p = "enc.layer" + std::to_string(l);
      EncoderLayer layer;
      layer.ln_attn = add_norm(p + ".ln_attn", d);
      layer.attn = add_attention(p + ".attn", d, rng);
      layer.ln_ff = add_norm(p + ".ln_ff", d);
      layer.ff = add_ff(p + ".ff", d, cfg_.d_ff, rng);
      enc_layers_.push_back(layer);
    }
    enc_norm_ = add_norm("enc.ln_out", d);
    ctc_head_ = add_param("ctc.head", {d, cfg_.vocab_size}, 1.0 / std::sqrt(double(d)), rng);
    embed_ = add_param("dec.embed", {cfg_.decoder_vocab(), d}, 1.0, rng);
    for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
      const std::string p = "dec.layer" + std::to_string(l);
      DecoderLayer layer;
      layer.ln_self = add_norm(p + ".ln_self", d);
      layer.self_attn = add_attention(p + ".self", d, rng);
      layer.ln_cross = add_norm(p + ".ln_cross", d);
      layer.cross_attn = add_attention(p + ".cross", d, rng);
      layer.ln_ff = add_norm(p + ".ln_ff", d);
      layer.ff = add_ff(p + ".ff", d, cfg_.d_ff, rng);
      dec_layers_.push_back(layer);
    }
    dec_norm_ = add_norm("dec.ln_out", d);
    out_ = add_linear("dec.out", d, cfg_.decoder_vocab(), rng);
    pos_ = kernels::sinusoidal_positions(kPositionTable, d);
  }

  static constexpr std::size_t kPositionTable = 1024;

  const ModelConfig& config() const { return cfg_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  std::vector<Parameter*> parameter_ptrs() {
    std::vector<Parameter*> out;
    for (Parameter& p : params_) out.push_back(&p);
    return out;
  }

  Parameter& param(std::size_t i) { return params_[i]; }
  const Parameter& param(std::size_t i) const { return params_[i]; }

  Parameter* find(const std::string& name) {
    for (Parameter& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  /// Encoder weights plus the CTC head; these move together when freezing.
  static bool is_encoder_param(const std::string& name) {
    return name.rfind("enc.", 0) == 0 || name.rfind("ctc.", 0) == 0;
  }

  void set_encoder_trainable(bool trainable) {
    for (Parameter& p : params_)
      if (is_encoder_param(p.name)) p.trainable = trainable;
  }

  void set_all_trainable(bool trainable) {
    for (Parameter& p : params_) p.trainable = trainable;
  }

  void zero_grad() {
    for (Parameter& p : params_) p.zero_grad();
  }

  const Linear& front1() const { return front1_; }
  const Linear& front2() const { return front2_; }
  const std::vector<EncoderLayer>& encoder_layers() const { return enc_layers_; }
  const std::vector<DecoderLayer>& decoder_layers() const { return dec_layers_; }
  Norm encoder_norm() const { return enc_norm_; }
  Norm decoder_norm() const { return dec_norm_; }
  std::size_t ctc_head() const { return ctc_head_; }
  std::size_t embedding() const { return embed_; }
  const Linear& output() const { return out_; }

  /// Sinusoidal position rows [len × d_model].
  Tensor positions(std::size_t len) const {
    if (pos_.rank() == 2 && len <= pos_.dim(0)) {
      const std::size_t d = cfg_.d_model;
      return Tensor({len, d}, std::vector<double>(pos_.data().begin(), pos_.data().begin() + len * d));
    }
    return kernels::sinusoidal_positions(len, cfg_.d_model);
  }

 private:
  std::size_t add_param(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data()) v = dist(rng);
    params_.emplace_back(name, std::move(t));
    return params_.size() - 1;
  }
  std::size_t add_const(const std::string& name, Shape shape, double value) {
    params_.emplace_back(name, Tensor::filled(std::move(shape), value));
    return params_.size() - 1;
  }
  Linear add_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Linear l;
    l.w = add_param(name + ".w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    l.b = add_const(name + ".b", {out}, 0.0);
    return l;
  }
  Norm add_norm(const std::string& name, std::size_t d) {
    return Norm{add_const(name + ".gamma", {d}, 1.0), add_const(name + ".beta", {d}, 0.0)};
  }
  Attention add_attention(const std::string& name, std::size_t d, std::mt19937_64& rng) {
    return Attention{add_linear(name + ".q", d, d, rng), add_linear(name + ".k", d, d, rng),
                     add_linear(name + ".v", d, d, rng), add_linear(name + ".o", d, d, rng)};
  }
  FeedForward add_ff(const std::string& name, std::size_t d, std::size_t dff, std::mt19937_64& rng) {
    return FeedForward{add_linear(name + ".in", d, dff, rng), add_linear(name + ".out", dff, d, rng)};
  }

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  Linear front1_{}, front2_{}, out_{};
  std::vector<EncoderLayer> enc_layers_;
  std::vector<DecoderLayer> dec_layers_;
  Norm enc_norm_{}, dec_norm_{};
  std::size_t ctc_head_ = 0, embed_ = 0;
  Tensor pos_;
};

// ---------------------------------------------------------------------------
// Taped forward passes

/// Binds model parameters to one tape, creating each leaf on first use.
class BoundModel {
 public:
  BoundModel(Tape& tape, Model& model)
      : tape_(tape), model_(model), leaves_(model.parameters().size()) {}

  Var operator[](std::size_t i) {
    if (!leaves_[i].valid()) leaves_[i] = tape_.param(model_.param(i));
    return leaves_[i];
  }

  Var linear(const Var& x, const Model::Linear& l) { return add_bias(matmul(x, (*this)[l.w]), (*this)[l.b]); }
  Var norm(const Var& x, const Model::Norm& n) { return layer_norm(x, (*this)[n.gamma], (*this)[n.beta]); }
  Var feed_forward(const Var& x, const Model::FeedForward& ff) {
    return linear(gelu(linear(x, ff.in)), ff.out);
  }
  Var attend(const Var& query_src, const Var& key_src, const Model::Attention& a,
             const kernels::AttentionMask& mask, std::uint64_t* macs = nullptr) {
    Var q = linear(query_src, a.q);
    Var k = linear(key_src, a.k);
    Var v = linear(key_src, a.v);
    return linear(attention(q, k, v, model_.config().n_heads, mask, macs), a.o);
  }

  Tape& tape() { return tape_; }
  Model& model() { return model_; }

 private:
  Tape& tape_;
  Model& model_;
  std::vector<Var> leaves_;
};

/// Encoder frames Y [ceil(T/4) × d_model].
inline Var encode(BoundModel& m, const Tensor& features) {
  const ModelConfig& cfg = m.model().config();
  if (features.rank() != 2 || features.dim(1) != cfg.feat_dim) {
    throw DimensionError("encoder: features must be [T×" + std::to_string(cfg.feat_dim) + "], got " +
                         shape_str(features.shape()));
  }
  if (features.dim(0) < 4) {
    throw InputTooShortError("encoder: need at least 4 frames, got " + std::to_string(features.dim(0)));
  }
  Var x = m.tape().constant(features);
  x = gelu(m.linear(pair_stack(x), m.model().front1()));
  x = gelu(m.linear(pair_stack(x), m.model().front2()));
  const std::size_t t_out = x.value().dim(0);
  x = add_const(x, m.model().positions(t_out));
  for (const Model::EncoderLayer& layer : m.model().encoder_layers()) {
    Var h = m.norm(x, layer.ln_attn);
    x = add(x, m.attend(h, h, layer.attn, {}));
    x = add(x, m.feed_forward(m.norm(x, layer.ln_ff), layer.ff));
  }
  return m.norm(x, m.model().encoder_norm());
}

/// log p_{w,t} = log_softmax(Y · H_ctc).
inline Var ctc_log_posterior(BoundModel& m, const Var& y) {
  return log_softmax_lastdim(matmul(y, m[m.model().ctc_head()]));
}

/// Next-token logits [L × decoder_vocab] for every history position. With a
/// mask, cross-attention scores of skipped frames get kernels::kMaskedScore.
inline Var decode_logits(BoundModel& m, const Var& y, const CtsMask* mask, std::span<const int> history,
                         std::uint64_t* cross_macs = nullptr) {
  const ModelConfig& cfg = m.model().config();
  if (history.empty()) {
    throw DecodeError("decoder: empty history; prepend the start-of-sequence token");
  }
  if (y.value().rank() != 2 || y.value().dim(1) != cfg.d_model || y.value().dim(0) == 0) {
    throw DimensionError("decoder: encoder output must be [T'×d_model], got " + shape_str(y.value().shape()));
  }
  kernels::AttentionMask cross;
  if (mask) {
    if (mask->frames() != y.value().dim(0)) {
      throw DimensionError("decoder: mask length " + std::to_string(mask->frames()) +
                           " != encoder frames " + std::to_string(y.value().dim(0)));
    }
    if (mask->kept() == 0) throw DimensionError("decoder: mask keeps no frames");
    cross.keep = mask->keep;
  }
  for (int id : history) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.decoder_vocab()) {
      throw LabelError("decoder: token id " + std::to_string(id) + " out of range");
    }
  }
  const std::size_t len = history.size();
  Var x = embedding(m[m.model().embedding()], history);
  x = add_const(x, m.model().positions(len));
  const kernels::AttentionMask causal{{}, true};
  for (const Model::DecoderLayer& layer : m.model().decoder_layers()) {
    Var h = m.norm(x, layer.ln_self);
    x = add(x, m.attend(h, h, layer.self_attn, causal));
    x = add(x, m.attend(m.norm(x, layer.ln_cross), y, layer.cross_attn, cross, cross_macs));
    x = add(x, m.feed_forward(m.norm(x, layer.ln_ff), layer.ff));
  }
  return m.linear(m.norm(x, m.model().decoder_norm()), m.model().output());
}

struct LossTerms {
  Var total;
  Var ctc;
  Var att;
};

/// λ·CTC(log posterior, target) + (1−λ)·CE(decoder logits, target + eos).
/// `dec_logits` must come from the history [sos, target...].
inline LossTerms hybrid_loss(const Var& log_posterior, const Var& dec_logits, std::span<const int> target,
                             double lambda, int eos) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("hybrid_loss: CTC weight outside [0,1]");
  std::vector<int> shifted(target.begin(), target.end());
  shifted.push_back(eos);
  LossTerms terms;
  terms.ctc = ctc_loss(log_posterior, target);
  terms.att = cross_entropy(dec_logits, shifted);
  terms.total = add(scale(terms.ctc, lambda), scale(terms.att, 1.0 - lambda));
  return terms;
}

// ---------------------------------------------------------------------------
// Value-level entry points

inline EncoderOutput encoder_forward(const Model& model, const Tensor& features) {
  Tape tape(false);
  BoundModel m(tape, const_cast<Model&>(model));  // no-grad tape never writes to parameters
  Var y = encode(m, features);
  EncoderOutput out;
  out.y = y.value();
  out.posterior = framewise_posteriors(out.y, model.param(model.ctc_head()));
  return out;
}

inline Tensor decoder_forward(const Model& model, const Tensor& y, const CtsMask* mask,
                              std::span<const int> history, std::uint64_t* cross_macs = nullptr) {
  Tape tape(false);
  BoundModel m(tape, const_cast<Model&>(model));
  return decode_logits(m, tape.constant(y), mask, history, cross_macs).value();
}

// ---------------------------------------------------------------------------
// Incremental decoding for search

/// Step-at-a-time decoder over a fixed encoder memory. Cross-attention keys
/// and values are projected once; each hypothesis carries its own cache of
/// self-attention keys and values.
class IncrementalDecoder {
 public:
  struct State {
    std::vector<std::vector<double>> keys, values;  // per layer, row-major [len×d]
    std::size_t length = 0;
  };

  /// `keep` (optional) hides memory rows from cross-attention via the
  /// additive mask; pass an already summarized memory to skip them outright.
  IncrementalDecoder(const Model& model, const Tensor& memory, std::vector<bool> keep = {},
                     kernels::MacCounter* counter = nullptr)
      : model_(model), counter_(counter) {
    const ModelConfig& cfg = model.config();
    if (memory.rank() != 2 || memory.dim(1) != cfg.d_model || memory.dim(0) == 0) {
      throw DecodeError("decoder: empty or malformed encoder memory " + shape_str(memory.shape()));
    }
    if (!keep.empty() && keep.size() != memory.dim(0)) {
      throw DimensionError("decoder: mask length does not match encoder frames");
    }
    if (!keep.empty() && std::find(keep.begin(), keep.end(), true) == keep.end()) {
      throw DimensionError("decoder: mask keeps no frames");
    }
    cross_mask_.keep = std::move(keep);
    for (const Model::DecoderLayer& layer : model.decoder_layers()) {
      cross_k_.push_back(lin(memory, layer.cross_attn.k));
      cross_v_.push_back(lin(memory, layer.cross_attn.v));
    }
  }

  State initial_state() const {
    State s;
    s.keys.resize(model_.decoder_layers().size());
    s.values.resize(model_.decoder_layers().size());
    return s;
  }

  /// Feeds `token` at the next position; returns log-probabilities over the
  /// decoder vocabulary for the following token.
  std::vector<double> step(State& state, int token) const {
    const ModelConfig& cfg = model_.config();
    const std::size_t d = cfg.d_model;
    if (token < 0 || static_cast<std::size_t>(token) >= cfg.decoder_vocab()) {
      throw LabelError("decoder: token id out of range");
    }
    const std::size_t pos = state.length;
    Tensor x({1, d});
    const Tensor& emb = model_.param(model_.embedding()).value;
    const Tensor pe = model_.positions(pos + 1);
    for (std::size_t j = 0; j < d; ++j) x[j] = emb.at(static_cast<std::size_t>(token), j) + pe.at(pos, j);
    const auto& layers = model_.decoder_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Model::DecoderLayer& layer = layers[l];
      Tensor h = norm(x, layer.ln_self);
      Tensor q = lin(h, layer.self_attn.q);
      Tensor k = lin(h, layer.self_attn.k);
      Tensor v = lin(h, layer.self_attn.v);
      state.keys[l].insert(state.keys[l].end(), k.data().begin(), k.data().end());
      state.values[l].insert(state.values[l].end(), v.data().begin(), v.data().end());
      const Tensor keys({pos + 1, d}, state.keys[l]);
      const Tensor vals({pos + 1, d}, state.values[l]);
      std::uint64_t* self_macs = counter_ ? &counter_->self_attention : nullptr;
      Tensor a = kernels::attention(q, keys, vals, cfg.n_heads, {}, self_macs).out;
      add_inplace(x, lin(a, layer.self_attn.o));

      h = norm(x, layer.ln_cross);
      q = lin(h, layer.cross_attn.q);
      std::uint64_t* cross_macs = counter_ ? &counter_->cross_attention : nullptr;
      a = kernels::attention(q, cross_k_[l], cross_v_[l], cfg.n_heads, cross_mask_, cross_macs).out;
      add_inplace(x, lin(a, layer.cross_attn.o));

      h = norm(x, layer.ln_ff);
      add_inplace(x, lin(kernels::gelu(lin(h, layer.ff.in)), layer.ff.out));
    }
    state.length = pos + 1;
    Tensor logits = lin(norm(x, model_.decoder_norm()), model_.output());
    kernels::log_softmax_inplace(logits.data());
    return std::vector<double>(logits.data().begin(), logits.data().end());
  }

  std::size_t memory_frames() const { return cross_k_.empty() ? 0 : cross_k_[0].dim(0); }

 private:
  Tensor lin(const Tensor& x, const Model::Linear& l) const {
    return kernels::linear(x, model_.param(l.w).value, model_.param(l.b).value);
  }
  Tensor norm(const Tensor& x, const Model::Norm& n) const {
    return kernels::layer_norm(x, model_.param(n.gamma).value, model_.param(n.beta).value);
  }
  static void add_inplace(Tensor& x, const Tensor& y) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  }

  const Model& model_;
  kernels::MacCounter* counter_;
  kernels::AttentionMask cross_mask_;
  std::vector<Tensor> cross_k_, cross_v_;
};

}  // namespace cts
