#pragma once

#include <span>
#include <vector>

#include "nesyarith/neural/params.hpp"

namespace nesyarith::neural {

/// Row ranges of variable-length sequences packed into one matrix.
class Packing {
 public:
  Packing() = default;
  explicit Packing(std::span<const int> lengths);
  template <typename Seqs>
  static Packing of(const Seqs& seqs) {
    std::vector<int> lengths;
    for (const auto& s : seqs) lengths.push_back(static_cast<int>(s.size()));
    return Packing(lengths);
  }

  int count() const { return static_cast<int>(offsets_.size()) - 1; }
  int begin(int i) const { return offsets_[static_cast<std::size_t>(i)]; }
  int length(int i) const { return begin(i + 1) - begin(i); }
  int total() const { return offsets_.back(); }

 private:
  std::vector<int> offsets_{0};
};

/// Token ids plus the positional-table rows each token is paired with.
struct SeqBatch {
  std::vector<std::vector<int>> src;
  std::vector<std::vector<int>> src_pos;
  std::vector<std::vector<int>> tgt;  // decoder inputs, starting with SOS
  std::vector<std::vector<int>> tgt_pos;
};

template <typename S>
struct AttentionCache {
  Matrix<S> xq, xkv, q, k, v, context;
  std::vector<Matrix<S>> probs;  // index = sequence * n_heads + head
};

template <typename S>
struct LayerNormCache {
  Matrix<S> xhat;
  std::vector<S> inv_std;
};

template <typename S>
struct FeedForwardCache {
  Matrix<S> x, hidden;  // hidden is post-ReLU
};

template <typename S>
struct EncoderCache {
  Packing packing;
  Matrix<S> input, drop_in;
  AttentionCache<S> attn;
  Matrix<S> drop_attn;
  LayerNormCache<S> ln1;
  FeedForwardCache<S> ff;
  Matrix<S> drop_ff;
  LayerNormCache<S> ln2;
};

template <typename S>
struct DecoderCache {
  Packing packing;
  Matrix<S> input, drop_in;
  AttentionCache<S> self_attn;
  Matrix<S> drop_self;
  LayerNormCache<S> ln1;
  AttentionCache<S> cross_attn;
  Matrix<S> drop_cross;
  LayerNormCache<S> ln2;
  FeedForwardCache<S> ff;
  Matrix<S> drop_ff;
  LayerNormCache<S> ln3;
  Matrix<S> hidden;  // input to the output projection
};

/// Dropout masks are drawn only when a generator is supplied and the
/// configured rate is positive.
struct ForwardOptions {
  Rng* dropout_rng = nullptr;
  // When set, receives the sign of every ReLU input in evaluation order.
  std::vector<bool>* relu_pattern = nullptr;
};

/// One-layer post-norm encoder-decoder over packed sequences.
template <typename S>
class Transformer {
 public:
  explicit Transformer(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const Matrix<S>& pe_table() const { return pe_table_; }

  /// Token embeddings (scaled when configured) plus positional rows.
  Matrix<S> embed(const BasicParams<S>& p, std::span<const std::vector<int>> ids,
                  std::span<const std::vector<int>> positions) const;

  Matrix<S> encoder_forward(const BasicParams<S>& p, const Matrix<S>& src_embedded,
                            const Packing& src, EncoderCache<S>* cache = nullptr,
                            ForwardOptions opt = {}) const;

  Matrix<S> decoder_forward(const BasicParams<S>& p, const Matrix<S>& tgt_embedded,
                            const Packing& tgt, const Matrix<S>& memory,
                            const Packing& src, DecoderCache<S>* cache = nullptr,
                            ForwardOptions opt = {}) const;

  /// Mean token cross-entropy of decoder logits against `targets` (same
  /// shape as batch.tgt). Accumulates gradients into `grads` when given.
  double loss(const BasicParams<S>& p, const SeqBatch& batch,
              std::span<const std::vector<int>> targets, BasicParams<S>* grads = nullptr,
              ForwardOptions opt = {}) const;

  /// Back-propagates d(logits) through a cached forward pass.
  void backward(const BasicParams<S>& p, const SeqBatch& batch, const EncoderCache<S>& enc,
                const DecoderCache<S>& dec, const Matrix<S>& dlogits,
                BasicParams<S>& grads) const;

 private:
  ModelConfig cfg_;
  Matrix<S> pe_table_;
};

template <typename S>
void layer_norm_rows(const Matrix<S>& x, const Matrix<S>& gamma, const Matrix<S>& beta,
                     Matrix<S>& out, LayerNormCache<S>* cache);

/// Mean token cross-entropy; optionally d(mean)/d(logits) and the summed
/// loss of each example.
template <typename S>
double cross_entropy(const Matrix<S>& logits, std::span<const std::vector<int>> targets,
                     Matrix<S>* dlogits = nullptr, std::vector<double>* per_example = nullptr);

/// Row-wise softmax with double accumulation, in place.
template <typename S>
void softmax_rows(Matrix<S>& m);

}  // namespace nesyarith::neural
