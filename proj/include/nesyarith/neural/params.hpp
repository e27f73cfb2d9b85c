#pragma once

#include <Eigen/Core>

#include <random>
#include <string>

#include "nesyarith/neural/config.hpp"
#include "nesyarith/rng.hpp"

namespace nesyarith::neural {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

// Biases and layer-norm vectors are stored as 1 x n matrices so that every
// tensor can be visited uniformly.
template <typename S>
struct AttentionWeights {
  Matrix<S> wq, wk, wv, wo;
  Matrix<S> bq, bk, bv, bo;
};

template <typename S>
struct LayerNormWeights {
  Matrix<S> gamma, beta;
};

template <typename S>
struct FeedForwardWeights {
  Matrix<S> w1, b1, w2, b2;
};

template <typename S>
struct EncoderWeights {
  AttentionWeights<S> self_attn;
  LayerNormWeights<S> ln1;
  FeedForwardWeights<S> ff;
  LayerNormWeights<S> ln2;
};

template <typename S>
struct DecoderWeights {
  AttentionWeights<S> self_attn;
  LayerNormWeights<S> ln1;
  AttentionWeights<S> cross_attn;
  LayerNormWeights<S> ln2;
  FeedForwardWeights<S> ff;
  LayerNormWeights<S> ln3;
};

/// All learned weights of the one-layer encoder-decoder. The token embedding
/// is shared between encoder and decoder inputs.
template <typename S>
struct BasicParams {
  Matrix<S> embedding;  // vocab x d_model
  EncoderWeights<S> encoder;
  DecoderWeights<S> decoder;
  Matrix<S> out_w;  // d_model x vocab
  Matrix<S> out_b;  // 1 x vocab

  /// Calls f(name, tensor) for every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    f("embedding", embedding);
    visit_attention("encoder.self_attn", encoder.self_attn, f);
    visit_ln("encoder.ln1", encoder.ln1, f);
    visit_ff("encoder.ff", encoder.ff, f);
    visit_ln("encoder.ln2", encoder.ln2, f);
    visit_attention("decoder.self_attn", decoder.self_attn, f);
    visit_ln("decoder.ln1", decoder.ln1, f);
    visit_attention("decoder.cross_attn", decoder.cross_attn, f);
    visit_ln("decoder.ln2", decoder.ln2, f);
    visit_ff("decoder.ff", decoder.ff, f);
    visit_ln("decoder.ln3", decoder.ln3, f);
    f("out_w", out_w);
    f("out_b", out_b);
  }

  template <typename F>
  void visit(F&& f) const {
    const_cast<BasicParams*>(this)->visit(
        [&](const std::string& name, Matrix<S>& m) { f(name, static_cast<const Matrix<S>&>(m)); });
  }

  /// Same-named tensors of two congruent parameter sets.
  template <typename T, typename F>
  void zip(BasicParams<T>& other, F&& f) {
    std::vector<Matrix<T>*> theirs;
    other.visit([&](const std::string&, Matrix<T>& m) { theirs.push_back(&m); });
    std::size_t i = 0;
    visit([&](const std::string& name, Matrix<S>& m) { f(name, m, *theirs[i++]); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix<S>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  /// Zero-filled tensors with the shapes implied by `cfg`.
  static BasicParams zeros(const ModelConfig& cfg);

  template <typename T>
  BasicParams<T> cast() const {
    BasicParams<T> out;
    auto& self = const_cast<BasicParams&>(*this);
    self.zip(out, [](const std::string&, Matrix<S>& src, Matrix<T>& dst) {
      dst = src.template cast<T>();
    });
    return out;
  }

  void set_zero() {
    visit([](const std::string&, Matrix<S>& m) { m.setZero(); });
  }

 private:
  template <typename F>
  static void visit_attention(const std::string& p, AttentionWeights<S>& a, F& f) {
    f(p + ".wq", a.wq);
    f(p + ".bq", a.bq);
    f(p + ".wk", a.wk);
    f(p + ".bk", a.bk);
    f(p + ".wv", a.wv);
    f(p + ".bv", a.bv);
    f(p + ".wo", a.wo);
    f(p + ".bo", a.bo);
  }
  template <typename F>
  static void visit_ln(const std::string& p, LayerNormWeights<S>& l, F& f) {
    f(p + ".gamma", l.gamma);
    f(p + ".beta", l.beta);
  }
  template <typename F>
  static void visit_ff(const std::string& p, FeedForwardWeights<S>& w, F& f) {
    f(p + ".w1", w.w1);
    f(p + ".b1", w.b1);
    f(p + ".w2", w.w2);
    f(p + ".b2", w.b2);
  }
};

template <typename S>
BasicParams<S> BasicParams<S>::zeros(const ModelConfig& cfg) {
  const int d = cfg.d_model, v = cfg.vocab_size, ff = cfg.d_ff;
  auto attention = [d] {
    AttentionWeights<S> a;
    for (auto* w : {&a.wq, &a.wk, &a.wv, &a.wo}) *w = Matrix<S>::Zero(d, d);
    for (auto* b : {&a.bq, &a.bk, &a.bv, &a.bo}) *b = Matrix<S>::Zero(1, d);
    return a;
  };
  auto ln = [d] { return LayerNormWeights<S>{Matrix<S>::Zero(1, d), Matrix<S>::Zero(1, d)}; };
  auto feed = [d, ff] {
    return FeedForwardWeights<S>{Matrix<S>::Zero(d, ff), Matrix<S>::Zero(1, ff),
                                 Matrix<S>::Zero(ff, d), Matrix<S>::Zero(1, d)};
  };
  BasicParams p;
  p.embedding = Matrix<S>::Zero(v, d);
  p.encoder = {attention(), ln(), feed(), ln()};
  p.decoder = {attention(), ln(), attention(), ln(), feed(), ln()};
  p.out_w = Matrix<S>::Zero(d, v);
  p.out_b = Matrix<S>::Zero(1, v);
  return p;
}

using ModelParams = BasicParams<float>;

/// Xavier-uniform projections, N(0, 1/d_model) embeddings, small output
/// projection (so initial logits are near uniform), unit layer-norm gains.
ModelParams init_params(const ModelConfig& cfg, Rng& rng);

}  // namespace nesyarith::neural
