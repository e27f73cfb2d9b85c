#include "nesyarith/neural/training.hpp"

#include <algorithm>
#include <cmath>

#include "nesyarith/neural/inference.hpp"

namespace nesyarith::neural {

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p = ModelParams::zeros(cfg);
  auto xavier = [&rng](MatrixF& w) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(dist(rng));
  };
  auto normal = [&rng](MatrixF& w, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(dist(rng));
  };
  normal(p.embedding, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
  for (auto* a : {&p.encoder.self_attn, &p.decoder.self_attn, &p.decoder.cross_attn})
    for (auto* w : {&a->wq, &a->wk, &a->wv, &a->wo}) xavier(*w);
  for (auto* f : {&p.encoder.ff, &p.decoder.ff}) {
    xavier(f->w1);
    xavier(f->w2);
  }
  for (auto* ln : {&p.encoder.ln1, &p.encoder.ln2, &p.decoder.ln1, &p.decoder.ln2, &p.decoder.ln3})
    ln->gamma.setOnes();
  normal(p.out_w, 0.02);
  return p;
}

AdamState AdamState::for_model(const ModelConfig& cfg, double lr) {
  AdamState s;
  s.lr = lr;
  s.m = BasicParams<double>::zeros(cfg);
  s.v = BasicParams<double>::zeros(cfg);
  return s;
}

void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state) {
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  std::vector<const MatrixF*> g;
  grads.visit([&](const std::string&, const MatrixF& m) { g.push_back(&m); });
  std::vector<MatrixD*> m, v;
  state.m.visit([&](const std::string&, MatrixD& t) { m.push_back(&t); });
  state.v.visit([&](const std::string&, MatrixD& t) { v.push_back(&t); });
  std::size_t i = 0;
  params.visit([&](const std::string& name, MatrixF& p) {
    const MatrixF& gi = *g[i];
    MatrixD& mi = *m[i];
    MatrixD& vi = *v[i];
    if (gi.rows() != p.rows() || gi.cols() != p.cols() || mi.rows() != p.rows() ||
        mi.cols() != p.cols())
      throw ShapeMismatch("optimizer state does not match parameter " + name);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double grad = static_cast<double>(gi.data()[k]);
      mi.data()[k] = state.beta1 * mi.data()[k] + (1.0 - state.beta1) * grad;
      vi.data()[k] = state.beta2 * vi.data()[k] + (1.0 - state.beta2) * grad * grad;
      const double mhat = mi.data()[k] / c1;
      const double vhat = vi.data()[k] / c2;
      p.data()[k] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
    ++i;
  });
}

namespace {

struct Encoded {
  SeqBatch seqs;
  std::vector<std::vector<int>> targets;
  std::vector<std::vector<int>> frames;
};

// Source tokens, positions, targets and decoder frames; decoder inputs are
// filled in later according to the regime.
Encoded encode_examples(const ModelConfig& cfg, std::span<const Example> examples, Rng& rng) {
  Encoded e;
  for (const Example& ex : examples) {
    e.seqs.src.push_back(Vocab::encode(ex.input_text));
    e.seqs.src_pos.push_back(
        encoder_positions(cfg, static_cast<int>(e.seqs.src.back().size()), rng));
    std::vector<int> target = Vocab::encode(ex.target_text);
    target.erase(target.begin());  // drop SOS, keep EOS
    if (static_cast<int>(target.size()) > cfg.max_decode_len)
      throw SequenceTooLong("target '" + ex.target_text + "' needs more than max_decode_len steps");
    e.targets.push_back(std::move(target));
    e.frames.push_back(decoder_frame(cfg, rng));
  }
  return e;
}

void teacher_inputs(Encoded& e) {
  for (const auto& target : e.targets) {
    std::vector<int> in{Vocab::kSos};
    in.insert(in.end(), target.begin(), target.end() - 1);
    e.seqs.tgt.push_back(std::move(in));
  }
}

// Greedy rollout: each sequence runs for exactly as many steps as its target
// has tokens, consuming its own argmax choices.
void rollout_inputs(const Transformer<float>& model, const ModelParams& params,
                    const MatrixF& memory, const Packing& src, Encoded& e) {
  const CrossMemory cross = project_memory(params, memory, src);
  const int n = static_cast<int>(e.targets.size());
  std::vector<int> index(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) index[static_cast<std::size_t>(i)] = i;
  IncrementalDecoder decoder(model, params, cross, index, e.frames);

  e.seqs.tgt.assign(static_cast<std::size_t>(n), std::vector<int>{Vocab::kSos});
  auto needs_more = [&](int s) {
    const auto i = static_cast<std::size_t>(s);
    return e.seqs.tgt[i].size() < e.targets[i].size();
  };
  std::vector<int> active;
  std::copy_if(index.begin(), index.end(), std::back_inserter(active), needs_more);
  std::vector<int> tokens(active.size(), Vocab::kSos);
  while (!active.empty()) {
    const MatrixF logits = decoder.step(active, tokens);
    std::vector<int> next_active, next_tokens;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const int token = argmax(logits, static_cast<Eigen::Index>(j));
      e.seqs.tgt[static_cast<std::size_t>(active[j])].push_back(token);
      if (!needs_more(active[j])) continue;
      next_active.push_back(active[j]);
      next_tokens.push_back(token);
    }
    active = std::move(next_active);
    tokens = std::move(next_tokens);
  }
}

void attach_positions(Encoded& e) {
  for (std::size_t i = 0; i < e.seqs.tgt.size(); ++i)
    e.seqs.tgt_pos.emplace_back(e.frames[i].begin(),
                                e.frames[i].begin() + static_cast<long>(e.seqs.tgt[i].size()));
}

}  // namespace

PreparedBatch prepare_batch(const Transformer<float>& model, const ModelParams& params,
                            std::span<const Example> examples, Regime regime, Rng& position_rng) {
  Encoded e = encode_examples(model.config(), examples, position_rng);
  if (regime == Regime::TeacherForced) {
    teacher_inputs(e);
  } else {
    const Packing src = Packing::of(e.seqs.src);
    const MatrixF memory =
        model.encoder_forward(params, model.embed(params, e.seqs.src, e.seqs.src_pos), src);
    rollout_inputs(model, params, memory, src, e);
  }
  attach_positions(e);
  return {std::move(e.seqs), std::move(e.targets)};
}

StepResult training_step(const Transformer<float>& model, ModelParams& params, AdamState& adam,
                         std::span<const Example> examples, Regime regime, Rng& position_rng,
                         Rng* dropout_rng) {
  if (examples.empty()) throw std::invalid_argument("empty training batch");
  const Task task = examples.front().task;
  if (std::any_of(examples.begin(), examples.end(), [&](const Example& ex) { return ex.task != task; }))
    throw std::invalid_argument("training batch mixes tasks");

  const ModelConfig& cfg = model.config();
  const ForwardOptions opt{dropout_rng};
  Encoded e = encode_examples(cfg, examples, position_rng);
  const Packing src = Packing::of(e.seqs.src);
  EncoderCache<float> enc;
  const MatrixF memory =
      model.encoder_forward(params, model.embed(params, e.seqs.src, e.seqs.src_pos), src, &enc, opt);
  if (regime == Regime::TeacherForced)
    teacher_inputs(e);
  else
    rollout_inputs(model, params, memory, src, e);
  attach_positions(e);

  const Packing tgt = Packing::of(e.seqs.tgt);
  DecoderCache<float> dec;
  const MatrixF logits = model.decoder_forward(
      params, model.embed(params, e.seqs.tgt, e.seqs.tgt_pos), tgt, memory, src, &dec, opt);
  MatrixF dlogits;
  std::vector<double> per_example;
  const double loss = cross_entropy<float>(logits, e.targets, &dlogits, &per_example);
  for (std::size_t i = 0; i < per_example.size(); ++i)
    if (!std::isfinite(per_example[i]))
      throw NonFiniteLoss("non-finite loss on example '" + examples[i].input_text + "'", i);

  ModelParams grads = ModelParams::zeros(cfg);
  model.backward(params, e.seqs, enc, dec, dlogits, grads);
  adam_update(params, grads, adam);
  return {loss, tgt.total()};
}

GradCheckResult gradient_check(const ModelConfig& cfg, Rng& rng, GradCheckOptions opt) {
  const Transformer<double> model(cfg);
  ModelParams init = init_params(cfg, rng);
  // Perturb every tensor so biases and layer-norm parameters are generic.
  init.visit([&rng](const std::string&, MatrixF& m) {
    std::normal_distribution<double> noise(0.0, 0.05);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += static_cast<float>(noise(rng));
  });
  init.out_w *= 10.0f;
  BasicParams<double> params = init.cast<double>();

  Rng data_rng(rng());
  BatchRequest req;
  req.nesting_set = {1, 2};
  req.batch_size = 2;
  const std::vector<Example> examples = sample_batch(data_rng, req);
  Encoded e = encode_examples(cfg, examples, rng);
  teacher_inputs(e);
  attach_positions(e);

  BasicParams<double> grads = BasicParams<double>::zeros(cfg);
  model.loss(params, e.seqs, e.targets, &grads);

  std::vector<std::pair<MatrixD*, MatrixD*>> tensors;
  params.zip(grads, [&](const std::string&, MatrixD& p, MatrixD& g) { tensors.emplace_back(&p, &g); });
  std::size_t total = 0;
  for (auto& [p, g] : tensors) total += static_cast<std::size_t>(p->size());
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);

  // A probe whose +/- step flips the sign of any ReLU input straddles a
  // kink, where central differences do not estimate the derivative; such
  // coordinates are redrawn.
  auto pattern_at = [&](std::vector<bool>& pattern) {
    pattern.clear();
    ForwardOptions fo;
    fo.relu_pattern = &pattern;
    return model.loss(params, e.seqs, e.targets, nullptr, fo);
  };
  std::vector<bool> base, up_pattern, down_pattern;
  pattern_at(base);

  GradCheckResult result;
  const int max_draws = 50 * opt.samples;
  for (int draw = 0; result.compared < opt.samples && draw < max_draws; ++draw) {
    std::size_t flat = pick(rng);
    std::size_t t = 0;
    while (flat >= static_cast<std::size_t>(tensors[t].first->size())) {
      flat -= static_cast<std::size_t>(tensors[t].first->size());
      ++t;
    }
    double& w = tensors[t].first->data()[flat];
    const double saved = w;
    w = saved + opt.step;
    const double up = pattern_at(up_pattern);
    w = saved - opt.step;
    const double down = pattern_at(down_pattern);
    w = saved;
    if (up_pattern != base || down_pattern != base) {
      ++result.skipped_kinks;
      continue;
    }
    double analytic = tensors[t].second->data()[flat];
    if (opt.corrupt && result.compared == 0) analytic = analytic * 2.0 + 1.0;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    ++result.compared;
  }
  return result;
}

}  // namespace nesyarith::neural
