#include "nesyarith/neural/transformer.hpp"

#include <cmath>
#include <limits>

#include "nesyarith/neural/positional.hpp"

namespace nesyarith::neural {

Packing::Packing(std::span<const int> lengths) {
  offsets_.reserve(lengths.size() + 1);
  for (int len : lengths) offsets_.push_back(offsets_.back() + len);
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename S>
Matrix<S> linear(const Matrix<S>& x, const Matrix<S>& w, const Matrix<S>& b) {
  Matrix<S> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// dx is accumulated into, not overwritten.
template <typename S>
void linear_backward(const Matrix<S>& x, const Matrix<S>& w, const Matrix<S>& dy, Matrix<S>& dw,
                     Matrix<S>& db, Matrix<S>* dx) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  if (dx != nullptr) dx->noalias() += dy * w.transpose();
}

template <typename S>
Matrix<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  Matrix<S> mask(rows, cols);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : S(0);
  return mask;
}

// Applies dropout in place and keeps the mask (empty when disabled).
template <typename S>
void apply_dropout(Matrix<S>& x, double rate, const ForwardOptions& opt, Matrix<S>* mask_out) {
  if (opt.dropout_rng == nullptr || rate <= 0.0) {
    if (mask_out != nullptr) mask_out->resize(0, 0);
    return;
  }
  Matrix<S> mask = dropout_mask<S>(x.rows(), x.cols(), rate, *opt.dropout_rng);
  x.array() *= mask.array();
  if (mask_out != nullptr) *mask_out = std::move(mask);
}

template <typename S>
void undo_dropout(Matrix<S>& dx, const Matrix<S>& mask) {
  if (mask.size() != 0) dx.array() *= mask.array();
}

template <typename S>
Matrix<S> attention_forward(const AttentionWeights<S>& w, const Matrix<S>& xq, const Packing& qp,
                            const Matrix<S>& xkv, const Packing& kp, bool causal, int heads,
                            AttentionCache<S>* cache) {
  if (qp.count() != kp.count()) throw ShapeMismatch("query/key sequence counts differ");
  const int d = static_cast<int>(w.wq.rows());
  const int dh = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  Matrix<S> q = linear(xq, w.wq, w.bq);
  Matrix<S> k = linear(xkv, w.wk, w.bk);
  Matrix<S> v = linear(xkv, w.wv, w.bv);
  Matrix<S> context(xq.rows(), d);
  if (cache != nullptr) cache->probs.assign(static_cast<std::size_t>(qp.count() * heads), {});

  for (int i = 0; i < qp.count(); ++i) {
    const int qb = qp.begin(i), tq = qp.length(i), kb = kp.begin(i), tk = kp.length(i);
    if (causal && tq != tk) throw ShapeMismatch("causal attention needs equal lengths");
    for (int h = 0; h < heads; ++h) {
      Matrix<S> scores(tq, tk);
      scores.noalias() = q.block(qb, h * dh, tq, dh) * k.block(kb, h * dh, tk, dh).transpose();
      scores *= scale;
      if (causal)
        for (int r = 0; r < tq; ++r)
          for (int c = r + 1; c < tk; ++c) scores(r, c) = -std::numeric_limits<S>::infinity();
      softmax_rows(scores);
      context.block(qb, h * dh, tq, dh).noalias() = scores * v.block(kb, h * dh, tk, dh);
      if (cache != nullptr) cache->probs[static_cast<std::size_t>(i * heads + h)] = std::move(scores);
    }
  }
  Matrix<S> out = linear(context, w.wo, w.bo);
  if (cache != nullptr) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
  }
  return out;
}

// dxq and dxkv are accumulated into.
template <typename S>
void attention_backward(const AttentionWeights<S>& w, const AttentionCache<S>& c,
                        const Packing& qp, const Packing& kp, int heads, const Matrix<S>& dout,
                        AttentionWeights<S>& g, Matrix<S>& dxq, Matrix<S>& dxkv) {
  const int d = static_cast<int>(w.wq.rows());
  const int dh = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  Matrix<S> dcontext(dout.rows(), d);
  dcontext.noalias() = dout * w.wo.transpose();
  g.wo.noalias() += c.context.transpose() * dout;
  g.bo += dout.colwise().sum();

  Matrix<S> dq = Matrix<S>::Zero(c.q.rows(), d);
  Matrix<S> dk = Matrix<S>::Zero(c.k.rows(), d);
  Matrix<S> dv = Matrix<S>::Zero(c.v.rows(), d);
  for (int i = 0; i < qp.count(); ++i) {
    const int qb = qp.begin(i), tq = qp.length(i), kb = kp.begin(i), tk = kp.length(i);
    for (int h = 0; h < heads; ++h) {
      const Matrix<S>& p = c.probs[static_cast<std::size_t>(i * heads + h)];
      const auto dctx = dcontext.block(qb, h * dh, tq, dh);
      Matrix<S> dp(tq, tk);
      dp.noalias() = dctx * c.v.block(kb, h * dh, tk, dh).transpose();
      dv.block(kb, h * dh, tk, dh).noalias() += p.transpose() * dctx;
      Matrix<S> ds(tq, tk);
      for (int r = 0; r < tq; ++r) {
        const S dot = dp.row(r).cwiseProduct(p.row(r)).sum();
        ds.row(r) = p.row(r).cwiseProduct((dp.row(r).array() - dot).matrix()) * scale;
      }
      dq.block(qb, h * dh, tq, dh).noalias() += ds * c.k.block(kb, h * dh, tk, dh);
      dk.block(kb, h * dh, tk, dh).noalias() += ds.transpose() * c.q.block(qb, h * dh, tq, dh);
    }
  }
  linear_backward(c.xq, w.wq, dq, g.wq, g.bq, &dxq);
  linear_backward(c.xkv, w.wk, dk, g.wk, g.bk, &dxkv);
  linear_backward(c.xkv, w.wv, dv, g.wv, g.bv, &dxkv);
}

template <typename S>
Matrix<S> layer_norm_backward(const LayerNormCache<S>& c, const Matrix<S>& gamma,
                              const Matrix<S>& dy, LayerNormWeights<S>& g) {
  g.gamma += dy.cwiseProduct(c.xhat).colwise().sum();
  g.beta += dy.colwise().sum();
  const auto n = static_cast<double>(dy.cols());
  Matrix<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const auto dxhat = dy.row(r).cwiseProduct(gamma.row(0));
    double sum = 0.0, dot = 0.0;
    for (Eigen::Index j = 0; j < dy.cols(); ++j) {
      sum += static_cast<double>(dxhat(j));
      dot += static_cast<double>(dxhat(j)) * static_cast<double>(c.xhat(r, j));
    }
    const S mean = static_cast<S>(sum / n), mean_dot = static_cast<S>(dot / n);
    dx.row(r) = c.inv_std[static_cast<std::size_t>(r)] *
                (dxhat.array() - mean - c.xhat.row(r).array() * mean_dot).matrix();
  }
  return dx;
}

template <typename S>
Matrix<S> feed_forward(const FeedForwardWeights<S>& w, const Matrix<S>& x,
                       FeedForwardCache<S>* cache, const ForwardOptions& opt) {
  Matrix<S> pre = linear(x, w.w1, w.b1);
  if (opt.relu_pattern != nullptr)
    for (Eigen::Index i = 0; i < pre.size(); ++i) opt.relu_pattern->push_back(pre.data()[i] > S(0));
  Matrix<S> hidden = pre.cwiseMax(S(0));
  Matrix<S> out = linear(hidden, w.w2, w.b2);
  if (cache != nullptr) {
    cache->x = x;
    cache->hidden = std::move(hidden);
  }
  return out;
}

template <typename S>
Matrix<S> feed_forward_backward(const FeedForwardWeights<S>& w, const FeedForwardCache<S>& c,
                                const Matrix<S>& dy, FeedForwardWeights<S>& g) {
  Matrix<S> dhidden = Matrix<S>::Zero(c.hidden.rows(), c.hidden.cols());
  linear_backward(c.hidden, w.w2, dy, g.w2, g.b2, &dhidden);
  dhidden.array() *= (c.hidden.array() > S(0)).template cast<S>();
  Matrix<S> dx = Matrix<S>::Zero(c.x.rows(), c.x.cols());
  linear_backward(c.x, w.w1, dhidden, g.w1, g.b1, &dx);
  return dx;
}

template <typename S>
void embedding_backward(const Matrix<S>& dx, std::span<const std::vector<int>> ids, S scale,
                        Matrix<S>& dembedding) {
  Eigen::Index row = 0;
  for (const auto& seq : ids)
    for (int id : seq) dembedding.row(id) += scale * dx.row(row++);
}

template <typename S>
S embedding_scale(const ModelConfig& cfg) {
  return cfg.scale_embeddings ? static_cast<S>(std::sqrt(static_cast<double>(cfg.d_model))) : S(1);
}

}  // namespace

template <typename S>
void softmax_rows(Matrix<S>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const S max = m.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const S e = std::exp(m(r, c) - max);
      m(r, c) = e;
      sum += static_cast<double>(e);
    }
    m.row(r) *= static_cast<S>(1.0 / sum);
  }
}

template <typename S>
void layer_norm_rows(const Matrix<S>& x, const Matrix<S>& gamma, const Matrix<S>& beta,
                     Matrix<S>& out, LayerNormCache<S>* cache) {
  const auto n = static_cast<double>(x.cols());
  out.resize(x.rows(), x.cols());
  if (cache != nullptr) {
    cache->xhat.resize(x.rows(), x.cols());
    cache->inv_std.resize(static_cast<std::size_t>(x.rows()));
  }
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) mean += static_cast<double>(x(r, j));
    mean /= n;
    double var = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double dlt = static_cast<double>(x(r, j)) - mean;
      var += dlt * dlt;
    }
    var /= n;
    const S inv = static_cast<S>(1.0 / std::sqrt(var + kLayerNormEps));
    const auto xhat = ((x.row(r).array() - static_cast<S>(mean)) * inv).matrix().eval();
    out.row(r) = xhat.cwiseProduct(gamma.row(0)) + beta.row(0);
    if (cache != nullptr) {
      cache->xhat.row(r) = xhat;
      cache->inv_std[static_cast<std::size_t>(r)] = inv;
    }
  }
}

template <typename S>
double cross_entropy(const Matrix<S>& logits, std::span<const std::vector<int>> targets,
                     Matrix<S>* dlogits, std::vector<double>* per_example) {
  Eigen::Index n = 0;
  for (const auto& t : targets) n += static_cast<Eigen::Index>(t.size());
  if (n != logits.rows()) throw ShapeMismatch("target count differs from logits rows");
  const auto n_tokens = static_cast<double>(n);
  if (dlogits != nullptr) dlogits->resize(logits.rows(), logits.cols());
  if (per_example != nullptr) per_example->assign(targets.size(), 0.0);
  double total = 0.0;
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (int target : targets[i]) {
      const auto l = logits.row(row);
      const double max = static_cast<double>(l.maxCoeff());
      double sum = 0.0;
      for (Eigen::Index c = 0; c < l.cols(); ++c) sum += std::exp(static_cast<double>(l(c)) - max);
      const double log_z = max + std::log(sum);
      const double token_loss = log_z - static_cast<double>(l(target));
      total += token_loss;
      if (per_example != nullptr) (*per_example)[i] += token_loss;
      if (dlogits != nullptr) {
        for (Eigen::Index c = 0; c < l.cols(); ++c)
          (*dlogits)(row, c) =
              static_cast<S>(std::exp(static_cast<double>(l(c)) - log_z) / n_tokens);
        (*dlogits)(row, target) -= static_cast<S>(1.0 / n_tokens);
      }
      ++row;
    }
  }
  return total / n_tokens;
}

template <typename S>
Transformer<S>::Transformer(const ModelConfig& cfg)
    : cfg_(cfg), pe_table_(sinusoidal_table(cfg.max_positions, cfg.d_model).template cast<S>()) {
  cfg_.validate();
}

template <typename S>
Matrix<S> Transformer<S>::embed(const BasicParams<S>& p, std::span<const std::vector<int>> ids,
                                std::span<const std::vector<int>> positions) const {
  if (ids.size() != positions.size()) throw ShapeMismatch("ids/positions count mismatch");
  const S scale = embedding_scale<S>(cfg_);
  Eigen::Index rows = 0;
  for (const auto& s : ids) rows += static_cast<Eigen::Index>(s.size());
  Matrix<S> out(rows, cfg_.d_model);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].size() != positions[i].size()) throw ShapeMismatch("ids/positions length mismatch");
    if (static_cast<int>(ids[i].size()) > cfg_.max_positions)
      throw SequenceTooLong("sequence of length " + std::to_string(ids[i].size()) +
                            " exceeds max_positions " + std::to_string(cfg_.max_positions));
    for (std::size_t t = 0; t < ids[i].size(); ++t, ++r) {
      const int id = ids[i][t], pos = positions[i][t];
      if (id < 0 || id >= cfg_.vocab_size) throw ShapeMismatch("token id out of range");
      if (pos < 0 || pos >= cfg_.max_positions) throw SequenceTooLong("position out of range");
      out.row(r) = scale * p.embedding.row(id) + pe_table_.row(pos);
    }
  }
  return out;
}

template <typename S>
Matrix<S> Transformer<S>::encoder_forward(const BasicParams<S>& p, const Matrix<S>& src_embedded,
                                          const Packing& src, EncoderCache<S>* cache,
                                          ForwardOptions opt) const {
  if (src_embedded.rows() != src.total() || src_embedded.cols() != cfg_.d_model)
    throw ShapeMismatch("encoder input shape does not match packing/d_model");
  const auto& w = p.encoder;
  Matrix<S> x = src_embedded;
  apply_dropout(x, cfg_.dropout, opt, cache ? &cache->drop_in : nullptr);

  Matrix<S> a = attention_forward(w.self_attn, x, src, x, src, false, cfg_.n_heads,
                                  cache ? &cache->attn : nullptr);
  apply_dropout(a, cfg_.dropout, opt, cache ? &cache->drop_attn : nullptr);
  Matrix<S> h1;
  layer_norm_rows<S>(x + a, w.ln1.gamma, w.ln1.beta, h1, cache ? &cache->ln1 : nullptr);

  Matrix<S> f = feed_forward(w.ff, h1, cache ? &cache->ff : nullptr, opt);
  apply_dropout(f, cfg_.dropout, opt, cache ? &cache->drop_ff : nullptr);
  Matrix<S> memory;
  layer_norm_rows<S>(h1 + f, w.ln2.gamma, w.ln2.beta, memory, cache ? &cache->ln2 : nullptr);
  if (cache != nullptr) {
    cache->packing = src;
    cache->input = src_embedded;
  }
  return memory;
}

template <typename S>
Matrix<S> Transformer<S>::decoder_forward(const BasicParams<S>& p, const Matrix<S>& tgt_embedded,
                                          const Packing& tgt, const Matrix<S>& memory,
                                          const Packing& src, DecoderCache<S>* cache,
                                          ForwardOptions opt) const {
  if (tgt_embedded.rows() != tgt.total() || tgt_embedded.cols() != cfg_.d_model)
    throw ShapeMismatch("decoder input shape does not match packing/d_model");
  if (memory.rows() != src.total() || memory.cols() != cfg_.d_model)
    throw ShapeMismatch("memory shape does not match packing/d_model");
  const auto& w = p.decoder;
  Matrix<S> y = tgt_embedded;
  apply_dropout(y, cfg_.dropout, opt, cache ? &cache->drop_in : nullptr);

  Matrix<S> a = attention_forward(w.self_attn, y, tgt, y, tgt, true, cfg_.n_heads,
                                  cache ? &cache->self_attn : nullptr);
  apply_dropout(a, cfg_.dropout, opt, cache ? &cache->drop_self : nullptr);
  Matrix<S> h1;
  layer_norm_rows<S>(y + a, w.ln1.gamma, w.ln1.beta, h1, cache ? &cache->ln1 : nullptr);

  Matrix<S> c = attention_forward(w.cross_attn, h1, tgt, memory, src, false, cfg_.n_heads,
                                  cache ? &cache->cross_attn : nullptr);
  apply_dropout(c, cfg_.dropout, opt, cache ? &cache->drop_cross : nullptr);
  Matrix<S> h2;
  layer_norm_rows<S>(h1 + c, w.ln2.gamma, w.ln2.beta, h2, cache ? &cache->ln2 : nullptr);

  Matrix<S> f = feed_forward(w.ff, h2, cache ? &cache->ff : nullptr, opt);
  apply_dropout(f, cfg_.dropout, opt, cache ? &cache->drop_ff : nullptr);
  Matrix<S> h3;
  layer_norm_rows<S>(h2 + f, w.ln3.gamma, w.ln3.beta, h3, cache ? &cache->ln3 : nullptr);

  Matrix<S> logits = linear(h3, p.out_w, p.out_b);
  if (cache != nullptr) {
    cache->packing = tgt;
    cache->input = tgt_embedded;
    cache->hidden = std::move(h3);
  }
  return logits;
}

template <typename S>
double Transformer<S>::loss(const BasicParams<S>& p, const SeqBatch& batch,
                            std::span<const std::vector<int>> targets, BasicParams<S>* grads,
                            ForwardOptions opt) const {
  if (batch.src.size() != batch.tgt.size() || batch.tgt.size() != targets.size())
    throw ShapeMismatch("batch and targets disagree on the number of examples");
  const Packing src = Packing::of(batch.src);
  const Packing tgt = Packing::of(batch.tgt);

  EncoderCache<S> enc;
  DecoderCache<S> dec;
  const bool train = grads != nullptr;
  const Matrix<S> memory = encoder_forward(p, embed(p, batch.src, batch.src_pos), src,
                                           train ? &enc : nullptr, opt);
  Matrix<S> logits = decoder_forward(p, embed(p, batch.tgt, batch.tgt_pos), tgt, memory, src,
                                     train ? &dec : nullptr, opt);

  Matrix<S> dlogits;
  const double mean = cross_entropy<S>(logits, targets, train ? &dlogits : nullptr);
  if (train) backward(p, batch, enc, dec, dlogits, *grads);
  return mean;
}

template <typename S>
void Transformer<S>::backward(const BasicParams<S>& p, const SeqBatch& batch,
                              const EncoderCache<S>& enc, const DecoderCache<S>& dec,
                              const Matrix<S>& dlogits, BasicParams<S>& g) const {
  const int heads = cfg_.n_heads;
  const S scale = embedding_scale<S>(cfg_);
  const auto& dw = p.decoder;
  auto& dg = g.decoder;

  // Decoder, top down.
  Matrix<S> dh3 = Matrix<S>::Zero(dec.hidden.rows(), dec.hidden.cols());
  linear_backward(dec.hidden, p.out_w, dlogits, g.out_w, g.out_b, &dh3);
  Matrix<S> ds3 = layer_norm_backward(dec.ln3, dw.ln3.gamma, dh3, dg.ln3);
  Matrix<S> df = ds3;
  undo_dropout(df, dec.drop_ff);
  Matrix<S> dh2 = ds3 + feed_forward_backward(dw.ff, dec.ff, df, dg.ff);

  Matrix<S> ds2 = layer_norm_backward(dec.ln2, dw.ln2.gamma, dh2, dg.ln2);
  Matrix<S> dc = ds2;
  undo_dropout(dc, dec.drop_cross);
  Matrix<S> dh1 = ds2;
  Matrix<S> dmemory = Matrix<S>::Zero(enc.packing.total(), cfg_.d_model);
  attention_backward(dw.cross_attn, dec.cross_attn, dec.packing, enc.packing, heads, dc,
                     dg.cross_attn, dh1, dmemory);

  Matrix<S> ds1 = layer_norm_backward(dec.ln1, dw.ln1.gamma, dh1, dg.ln1);
  Matrix<S> da = ds1;
  undo_dropout(da, dec.drop_self);
  Matrix<S> dy = ds1;
  Matrix<S> dy_kv = Matrix<S>::Zero(dy.rows(), dy.cols());
  attention_backward(dw.self_attn, dec.self_attn, dec.packing, dec.packing, heads, da,
                     dg.self_attn, dy, dy_kv);
  dy += dy_kv;
  undo_dropout(dy, dec.drop_in);
  embedding_backward<S>(dy, batch.tgt, scale, g.embedding);

  // Encoder.
  const auto& ew = p.encoder;
  auto& eg = g.encoder;
  Matrix<S> es2 = layer_norm_backward(enc.ln2, ew.ln2.gamma, dmemory, eg.ln2);
  Matrix<S> edf = es2;
  undo_dropout(edf, enc.drop_ff);
  Matrix<S> eh1 = es2 + feed_forward_backward(ew.ff, enc.ff, edf, eg.ff);
  Matrix<S> es1 = layer_norm_backward(enc.ln1, ew.ln1.gamma, eh1, eg.ln1);
  Matrix<S> eda = es1;
  undo_dropout(eda, enc.drop_attn);
  Matrix<S> dx = es1;
  Matrix<S> dx_kv = Matrix<S>::Zero(dx.rows(), dx.cols());
  attention_backward(ew.self_attn, enc.attn, enc.packing, enc.packing, heads, eda, eg.self_attn,
                     dx, dx_kv);
  dx += dx_kv;
  undo_dropout(dx, enc.drop_in);
  embedding_backward<S>(dx, batch.src, scale, g.embedding);
}

template class Transformer<float>;
template class Transformer<double>;
template double cross_entropy<float>(const Matrix<float>&, std::span<const std::vector<int>>,
                                     Matrix<float>*, std::vector<double>*);
template double cross_entropy<double>(const Matrix<double>&, std::span<const std::vector<int>>,
                                      Matrix<double>*, std::vector<double>*);
template void softmax_rows<float>(Matrix<float>&);
template void softmax_rows<double>(Matrix<double>&);
template void layer_norm_rows<float>(const Matrix<float>&, const Matrix<float>&,
                                     const Matrix<float>&, Matrix<float>&, LayerNormCache<float>*);
template void layer_norm_rows<double>(const Matrix<double>&, const Matrix<double>&,
                                      const Matrix<double>&, Matrix<double>&,
                                      LayerNormCache<double>*);

}  // namespace nesyarith::neural
