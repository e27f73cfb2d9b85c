#include "nesyarith/neural/inference.hpp"

#include <cmath>

#include "nesyarith/neural/positional.hpp"

namespace nesyarith::neural {

namespace {

MatrixF project(const MatrixF& x, const MatrixF& w, const MatrixF& b) {
  MatrixF y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// Single-query attention for one sequence and head.
void attend(const float* q, const MatrixF& keys, const MatrixF& values, int first, int count,
            int col, int dh, float scale, float* out) {
  Eigen::Map<const Eigen::RowVectorXf> qv(q, dh);
  Eigen::RowVectorXf scores(count);
  for (int j = 0; j < count; ++j)
    scores(j) = qv.dot(keys.row(first + j).segment(col, dh)) * scale;
  const float max = scores.maxCoeff();
  double sum = 0.0;
  for (int j = 0; j < count; ++j) {
    scores(j) = std::exp(scores(j) - max);
    sum += scores(j);
  }
  scores *= static_cast<float>(1.0 / sum);
  Eigen::Map<Eigen::RowVectorXf> o(out, dh);
  o.setZero();
  for (int j = 0; j < count; ++j) o += scores(j) * values.row(first + j).segment(col, dh);
}

std::vector<std::string> decode_lockstep(const Transformer<float>& model, const ModelParams& params,
                                         const CrossMemory& memory, std::vector<int> memory_index,
                                         std::vector<std::vector<int>> frames, DecodeOptions opt,
                                         Rng& rng) {
  const int n = static_cast<int>(memory_index.size());
  IncrementalDecoder decoder(model, params, memory, std::move(memory_index), std::move(frames));
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
  std::vector<int> active(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) active[static_cast<std::size_t>(s)] = s;
  std::vector<int> tokens(active.size(), Vocab::kSos);

  for (int t = 0; t < model.config().max_decode_len && !active.empty(); ++t) {
    const MatrixF logits = decoder.step(active, tokens);
    std::vector<int> next_active, next_tokens;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const auto row = static_cast<Eigen::Index>(j);
      const int token = opt.mode == DecodeMode::Greedy
                            ? argmax(logits, row)
                            : sample_token(logits, row, opt.temperature, rng);
      if (token == Vocab::kEos) continue;
      out[static_cast<std::size_t>(active[j])].push_back(token);
      next_active.push_back(active[j]);
      next_tokens.push_back(token);
    }
    active = std::move(next_active);
    tokens = std::move(next_tokens);
  }
  std::vector<std::string> texts;
  texts.reserve(out.size());
  for (const auto& ids : out) texts.push_back(Vocab::decode(ids));
  return texts;
}

// Encodes inputs in one packed pass.
CrossMemory encode_inputs(const Transformer<float>& model, const ModelParams& params,
                          std::span<const std::string> inputs, Rng& rng) {
  std::vector<std::vector<int>> ids, positions;
  for (const auto& text : inputs) {
    ids.push_back(Vocab::encode(text));
    positions.push_back(encoder_positions(model.config(), static_cast<int>(ids.back().size()), rng));
  }
  const Packing packing = Packing::of(ids);
  const MatrixF memory = model.encoder_forward(params, model.embed(params, ids, positions), packing);
  return project_memory(params, memory, packing);
}

}  // namespace

CrossMemory project_memory(const ModelParams& p, const MatrixF& memory, const Packing& packing) {
  const auto& w = p.decoder.cross_attn;
  return {project(memory, w.wk, w.bk), project(memory, w.wv, w.bv), packing};
}

IncrementalDecoder::IncrementalDecoder(const Transformer<float>& model, const ModelParams& params,
                                       const CrossMemory& memory, std::vector<int> memory_index,
                                       std::vector<std::vector<int>> positions)
    : model_(model),
      params_(params),
      memory_(memory),
      memory_index_(std::move(memory_index)),
      positions_(std::move(positions)) {
  if (memory_index_.size() != positions_.size())
    throw ShapeMismatch("one positional frame per decoded sequence is required");
  const int d = model_.config().d_model;
  states_.resize(memory_index_.size());
  for (std::size_t s = 0; s < states_.size(); ++s) {
    const auto rows = static_cast<Eigen::Index>(positions_[s].size());
    states_[s].k.resize(rows, d);
    states_[s].v.resize(rows, d);
  }
}

MatrixF IncrementalDecoder::step(std::span<const int> active, std::span<const int> tokens) {
  const ModelConfig& cfg = model_.config();
  const int d = cfg.d_model, heads = cfg.n_heads, dh = cfg.head_dim();
  const auto b = static_cast<Eigen::Index>(active.size());
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const float emb_scale = cfg.scale_embeddings ? std::sqrt(static_cast<float>(d)) : 1.0f;
  const auto& w = params_.decoder;

  MatrixF x(b, d);
  for (Eigen::Index r = 0; r < b; ++r) {
    State& st = states_[static_cast<std::size_t>(active[r])];
    const auto& frame = positions_[static_cast<std::size_t>(active[r])];
    if (st.steps >= static_cast<int>(frame.size()))
      throw SequenceTooLong("decoder ran past its positional frame");
    x.row(r) = emb_scale * params_.embedding.row(tokens[r]) +
               model_.pe_table().row(frame[static_cast<std::size_t>(st.steps)]);
  }

  // Causal self-attention over this sequence's cached steps.
  const MatrixF q = project(x, w.self_attn.wq, w.self_attn.bq);
  const MatrixF k = project(x, w.self_attn.wk, w.self_attn.bk);
  const MatrixF v = project(x, w.self_attn.wv, w.self_attn.bv);
  MatrixF ctx(b, d);
  for (Eigen::Index r = 0; r < b; ++r) {
    State& st = states_[static_cast<std::size_t>(active[r])];
    st.k.row(st.steps) = k.row(r);
    st.v.row(st.steps) = v.row(r);
    ++st.steps;
    for (int h = 0; h < heads; ++h)
      attend(q.row(r).data() + h * dh, st.k, st.v, 0, st.steps, h * dh, dh, scale,
             ctx.row(r).data() + h * dh);
  }
  MatrixF h1;
  layer_norm_rows<float>(x + project(ctx, w.self_attn.wo, w.self_attn.bo), w.ln1.gamma,
                         w.ln1.beta, h1, nullptr);

  const MatrixF qc = project(h1, w.cross_attn.wq, w.cross_attn.bq);
  for (Eigen::Index r = 0; r < b; ++r) {
    const int m = memory_index_[static_cast<std::size_t>(active[r])];
    for (int h = 0; h < heads; ++h)
      attend(qc.row(r).data() + h * dh, memory_.k, memory_.v, memory_.packing.begin(m),
             memory_.packing.length(m), h * dh, dh, scale, ctx.row(r).data() + h * dh);
  }
  MatrixF h2;
  layer_norm_rows<float>(h1 + project(ctx, w.cross_attn.wo, w.cross_attn.bo), w.ln2.gamma,
                         w.ln2.beta, h2, nullptr);

  const MatrixF hidden = project(h2, w.ff.w1, w.ff.b1).cwiseMax(0.0f);
  MatrixF h3;
  layer_norm_rows<float>(h2 + project(hidden, w.ff.w2, w.ff.b2), w.ln3.gamma, w.ln3.beta, h3,
                         nullptr);
  return project(h3, params_.out_w, params_.out_b);
}

std::vector<int> encoder_positions(const ModelConfig& cfg, int k, Rng& rng) {
  if (k > cfg.max_positions)
    throw SequenceTooLong("input of " + std::to_string(k) + " tokens exceeds max_positions " +
                          std::to_string(cfg.max_positions));
  return cfg.pe_mode == PeMode::Label ? label_positions(rng, k, cfg.max_positions)
                                      : first_positions(k);
}

std::vector<int> decoder_frame(const ModelConfig& cfg, Rng& rng) {
  return encoder_positions(cfg, cfg.max_decode_len, rng);
}

int argmax(const MatrixF& logits, Eigen::Index row) {
  Eigen::Index best = 0;
  logits.row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

int sample_token(const MatrixF& logits, Eigen::Index row, double temperature, Rng& rng) {
  if (temperature <= 0.0) return argmax(logits, row);
  const auto l = logits.row(row);
  const double max = static_cast<double>(l.maxCoeff());
  std::vector<double> weights(static_cast<std::size_t>(l.cols()));
  for (Eigen::Index c = 0; c < l.cols(); ++c)
    weights[static_cast<std::size_t>(c)] = std::exp((static_cast<double>(l(c)) - max) / temperature);
  std::discrete_distribution<int> dist(weights.begin(), weights.end());
  return dist(rng);
}

std::string generate(const Transformer<float>& model, const ModelParams& params,
                     const std::string& input_text, DecodeOptions opt, Rng& rng) {
  return generate_batch(model, params, std::span(&input_text, 1), opt, rng).front();
}

std::vector<std::string> generate_multi(const Transformer<float>& model, const ModelParams& params,
                                        const std::string& input_text, int n, Rng& rng,
                                        double temperature) {
  if (n < 1) throw std::invalid_argument("generate_multi needs n >= 1");
  const CrossMemory memory = encode_inputs(model, params, std::span(&input_text, 1), rng);
  std::vector<std::vector<int>> frames;
  frames.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) frames.push_back(decoder_frame(model.config(), rng));
  return decode_lockstep(model, params, memory, std::vector<int>(static_cast<std::size_t>(n), 0),
                         std::move(frames), {DecodeMode::Sample, temperature}, rng);
}

std::vector<std::string> generate_batch(const Transformer<float>& model, const ModelParams& params,
                                        std::span<const std::string> inputs, DecodeOptions opt,
                                        Rng& rng) {
  if (inputs.empty()) return {};
  const CrossMemory memory = encode_inputs(model, params, inputs, rng);
  std::vector<int> index(inputs.size());
  std::vector<std::vector<int>> frames;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    index[i] = static_cast<int>(i);
    frames.push_back(decoder_frame(model.config(), rng));
  }
  return decode_lockstep(model, params, memory, std::move(index), std::move(frames), opt, rng);
}

}  // namespace nesyarith::neural
