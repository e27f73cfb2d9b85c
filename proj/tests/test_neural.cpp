#include <doctest.h>

#include <cmath>
#include <map>

#include "nesyarith/neural/inference.hpp"
#include "nesyarith/neural/positional.hpp"
#include "nesyarith/neural/training.hpp"

using namespace nesyarith;
using namespace nesyarith::neural;

namespace {

ModelConfig small_config(PeMode mode = PeMode::Label) {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.pe_mode = mode;
  return cfg;
}

std::vector<Example> some_examples(int n, std::uint64_t seed, Task task = Task::SubExpr) {
  Rng rng = stream(seed, "examples");
  BatchRequest req;
  req.task = task;
  req.nesting_set = {1, 2};
  req.batch_size = n;
  return sample_batch(rng, req);
}

bool bit_equal(const MatrixF& a, const MatrixF& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  bool same = true;
  ModelParams copy = b;
  ModelParams lhs = a;
  lhs.zip(copy, [&](const std::string&, MatrixF& x, MatrixF& y) { same = same && bit_equal(x, y); });
  return same;
}

// Full decoder logits for one source/target pair with explicit positions.
MatrixF full_logits(const Transformer<float>& model, const ModelParams& p, const std::vector<int>& src,
                    const std::vector<int>& src_pos, const std::vector<int>& tgt,
                    const std::vector<int>& tgt_pos) {
  const std::vector<std::vector<int>> s{src}, sp{src_pos}, t{tgt}, tp{tgt_pos};
  const Packing sp_pack = Packing::of(s), tp_pack = Packing::of(t);
  const MatrixF memory = model.encoder_forward(p, model.embed(p, s, sp), sp_pack);
  return model.decoder_forward(p, model.embed(p, t, tp), tp_pack, memory, sp_pack);
}

}  // namespace

TEST_CASE("sinusoidal table") {
  const MatrixD t = sinusoidal_table(150, 16);
  for (int c = 0; c < 16; ++c) CHECK(t(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
  CHECK(t(1, 0) == doctest::Approx(0.841471).epsilon(1e-6));
  CHECK(t(1, 1) == doctest::Approx(0.540302).epsilon(1e-6));
  for (int pos = 0; pos < 150; pos += 7)
    for (int i = 0; i < 8; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / 16.0);
      CHECK(std::abs(t(pos, 2 * i) - std::sin(angle)) <= 1e-6);
      CHECK(std::abs(t(pos, 2 * i + 1) - std::cos(angle)) <= 1e-6);
    }
  CHECK_THROWS(sinusoidal_table(10, 15));
}

TEST_CASE("label positions") {
  Rng rng = stream(1, "label");
  CHECK(label_positions(rng, 3, 3) == std::vector<int>{0, 1, 2});
  const auto one = label_positions(rng, 1, 100);
  REQUIRE(one.size() == 1);
  CHECK(one[0] >= 0);
  CHECK(one[0] < 100);
  for (int i = 0; i < 500; ++i) {
    const auto p = label_positions(rng, 20, 150);
    REQUIRE(p.size() == 20);
    for (std::size_t j = 1; j < p.size(); ++j) CHECK(p[j - 1] < p[j]);
    CHECK(p.front() >= 0);
    CHECK(p.back() < 150);
  }
  CHECK_THROWS_AS(label_positions(rng, 4, 3), KTooLarge);
  CHECK(first_positions(4) == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("label pairs are uniform (chi-square)") {
  Rng rng = stream(2, "label-chi");
  std::map<std::pair<int, int>, int> counts;
  const int draws = 10'000;
  for (int i = 0; i < draws; ++i) {
    const auto p = label_positions(rng, 2, 10);
    ++counts[{p[0], p[1]}];
  }
  CHECK(counts.size() == 45);
  const double expected = draws / 45.0;
  double chi2 = 0.0;
  for (const auto& [pair, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 99.9th percentile of chi-square with 44 degrees of freedom is about 78.7.
  CHECK(chi2 < 78.7);
}

TEST_CASE("label mode with m equal to the length reproduces sinusoidal mode") {
  const std::string input = "((21-6)*2)";
  const int k = static_cast<int>(Vocab::encode(input).size());
  ModelConfig sin_cfg = small_config(PeMode::Sinusoidal);
  sin_cfg.max_decode_len = k;
  ModelConfig label_cfg = sin_cfg;
  label_cfg.pe_mode = PeMode::Label;
  label_cfg.max_positions = k;

  Rng init = stream(3, "init");
  const ModelParams p = init_params(sin_cfg, init);
  const Transformer<float> sin_model(sin_cfg), label_model(label_cfg);
  Rng r1 = stream(4, "pos"), r2 = stream(5, "pos");
  CHECK(encoder_positions(label_cfg, k, r1) == first_positions(k));
  CHECK(decoder_frame(label_cfg, r1) == first_positions(k));

  const std::vector<std::vector<int>> ids{Vocab::encode(input)};
  const std::vector<std::vector<int>> sin_pos{encoder_positions(sin_cfg, k, r1)};
  const std::vector<std::vector<int>> label_pos{encoder_positions(label_cfg, k, r2)};
  CHECK(bit_equal(sin_model.embed(p, ids, sin_pos), label_model.embed(p, ids, label_pos)));

  for (auto mode : {DecodeMode::Greedy, DecodeMode::Sample}) {
    Rng a = stream(6, "gen"), b = stream(6, "gen");
    CHECK(generate(sin_model, p, input, {mode, 1.0}, a) == generate(label_model, p, input, {mode, 1.0}, b));
  }
  Rng a = stream(7, "multi"), b = stream(7, "multi");
  CHECK(generate_multi(sin_model, p, input, 20, a) == generate_multi(label_model, p, input, 20, b));
}

TEST_CASE("label mode resamples positions") {
  const ModelConfig cfg = small_config();
  Rng rng = stream(8, "resample");
  const auto a = encoder_positions(cfg, 12, rng);
  const auto b = encoder_positions(cfg, 12, rng);
  CHECK(a != b);
  ModelConfig sin_cfg = small_config(PeMode::Sinusoidal);
  CHECK(encoder_positions(sin_cfg, 12, rng) == encoder_positions(sin_cfg, 12, rng));
  CHECK_THROWS_AS(encoder_positions(cfg, 151, rng), SequenceTooLong);
}

TEST_CASE("decoder is causal") {
  const ModelConfig cfg = small_config(PeMode::Sinusoidal);
  Rng init = stream(9, "init");
  const ModelParams p = init_params(cfg, init);
  const Transformer<float> model(cfg);
  const std::vector<int> src = Vocab::encode("((21-6)*2)");
  const std::vector<int> pos = first_positions(static_cast<int>(src.size()));
  std::vector<int> tgt{Vocab::kSos, 1, 5, 15, 10, 2, 1};
  const auto tpos = first_positions(static_cast<int>(tgt.size()));
  const MatrixF base = full_logits(model, p, src, pos, tgt, tpos);
  REQUIRE(base.rows() == static_cast<Eigen::Index>(tgt.size()));
  REQUIRE(base.cols() == Vocab::kSize);
  for (std::size_t t = 0; t + 1 < tgt.size(); ++t) {
    std::vector<int> changed = tgt;
    for (std::size_t j = t + 1; j < changed.size(); ++j) changed[j] = (changed[j] + 3) % 16;
    const MatrixF other = full_logits(model, p, src, pos, changed, tpos);
    CHECK(bit_equal(base.topRows(static_cast<Eigen::Index>(t + 1)),
                    other.topRows(static_cast<Eigen::Index>(t + 1))));
    CHECK_FALSE(bit_equal(base.row(static_cast<Eigen::Index>(t + 1)),
                          other.row(static_cast<Eigen::Index>(t + 1))));
  }
}

TEST_CASE("single token gives one finite logits row") {
  const ModelConfig cfg = small_config();
  Rng init = stream(10, "init");
  const ModelParams p = init_params(cfg, init);
  const Transformer<float> model(cfg);
  const MatrixF logits = full_logits(model, p, {Vocab::kSos, 4, Vocab::kEos}, {0, 5, 9}, {Vocab::kSos}, {3});
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == Vocab::kSize);
  CHECK(logits.allFinite());
}

TEST_CASE("attention weights, softmax and layer norm") {
  const ModelConfig cfg = small_config();
  Rng init = stream(11, "init");
  ModelParams p = init_params(cfg, init);
  p.visit([&](const std::string&, MatrixF& m) {
    std::normal_distribution<float> noise(0.0f, 0.3f);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += noise(init);
  });
  const Transformer<float> model(cfg);
  Rng rng = stream(12, "batch");
  const auto examples = some_examples(6, 12);
  const PreparedBatch batch = prepare_batch(model, p, examples, Regime::TeacherForced, rng);
  const Packing src = Packing::of(batch.seqs.src), tgt = Packing::of(batch.seqs.tgt);
  EncoderCache<float> enc;
  DecoderCache<float> dec;
  const MatrixF memory =
      model.encoder_forward(p, model.embed(p, batch.seqs.src, batch.seqs.src_pos), src, &enc);
  model.decoder_forward(p, model.embed(p, batch.seqs.tgt, batch.seqs.tgt_pos), tgt, memory, src, &dec);
  for (const auto* cache : {&enc.attn, &dec.self_attn, &dec.cross_attn}) {
    REQUIRE(cache->probs.size() == static_cast<std::size_t>(6 * cfg.n_heads));
    for (const MatrixF& probs : cache->probs)
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        CHECK(std::abs(probs.row(r).cast<double>().sum() - 1.0) <= 1e-5);
        CHECK(probs.row(r).minCoeff() >= 0.0f);
      }
  }
  // Self-attention of the decoder puts no weight on later positions.
  for (const MatrixF& probs : dec.self_attn.probs)
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
      for (Eigen::Index c = r + 1; c < probs.cols(); ++c) CHECK(probs(r, c) == 0.0f);

  for (const auto* ln : {&enc.ln1, &enc.ln2, &dec.ln1, &dec.ln2, &dec.ln3})
    for (Eigen::Index r = 0; r < ln->xhat.rows(); ++r) {
      const auto row = ln->xhat.row(r).cast<double>();
      const double mean = row.mean();
      const double var = (row.array() - mean).square().mean();
      CHECK(std::abs(mean) <= 1e-5);
      CHECK(std::abs(var - 1.0) <= 1e-3);
    }

  MatrixF m(3, 5);
  m << 1, 2, 3, 4, 5, -100, 0, 100, 3, 3, 0, 0, 0, 0, 0;
  softmax_rows(m);
  for (Eigen::Index r = 0; r < 3; ++r) CHECK(std::abs(m.row(r).cast<double>().sum() - 1.0) <= 1e-5);
  CHECK(m(2, 0) == doctest::Approx(0.2));
}

TEST_CASE("incremental decoding matches the full decoder") {
  const ModelConfig cfg = small_config();
  Rng init = stream(13, "init");
  const ModelParams p = init_params(cfg, init);
  const Transformer<float> model(cfg);
  Rng rng = stream(14, "pos");
  const std::vector<std::vector<int>> src{Vocab::encode("((21-6)*2)"), Vocab::encode("(4+5)")};
  std::vector<std::vector<int>> src_pos;
  for (const auto& s : src) src_pos.push_back(encoder_positions(cfg, static_cast<int>(s.size()), rng));
  const Packing src_pack = Packing::of(src);
  const MatrixF memory = model.encoder_forward(p, model.embed(p, src, src_pos), src_pack);
  const CrossMemory cross = project_memory(p, memory, src_pack);

  const std::vector<std::vector<int>> tgt{{Vocab::kSos, 1, 5, 15, 10, 2, 1},
                                          {Vocab::kSos, 9, 15, 10}};
  std::vector<std::vector<int>> frames{decoder_frame(cfg, rng), decoder_frame(cfg, rng)};
  IncrementalDecoder inc(model, p, cross, {0, 1}, frames);
  std::vector<MatrixF> rows(2);
  for (std::size_t t = 0; t < tgt[0].size(); ++t) {
    std::vector<int> active, tokens;
    for (int s = 0; s < 2; ++s)
      if (t < tgt[static_cast<std::size_t>(s)].size()) {
        active.push_back(s);
        tokens.push_back(tgt[static_cast<std::size_t>(s)][t]);
      }
    const MatrixF step = inc.step(active, tokens);
    for (std::size_t j = 0; j < active.size(); ++j) {
      MatrixF& r = rows[static_cast<std::size_t>(active[j])];
      r.conservativeResize(r.rows() + 1, Vocab::kSize);
      r.row(r.rows() - 1) = step.row(static_cast<Eigen::Index>(j));
    }
  }
  for (int s = 0; s < 2; ++s) {
    const auto& t = tgt[static_cast<std::size_t>(s)];
    const std::vector<int> tpos(frames[static_cast<std::size_t>(s)].begin(),
                                frames[static_cast<std::size_t>(s)].begin() + static_cast<long>(t.size()));
    const MatrixF full = full_logits(model, p, src[static_cast<std::size_t>(s)],
                                     src_pos[static_cast<std::size_t>(s)], t, tpos);
    CHECK((full - rows[static_cast<std::size_t>(s)]).cwiseAbs().maxCoeff() <= 1e-4f);
  }
}

TEST_CASE("generation") {
  ModelConfig cfg = small_config();
  cfg.max_decode_len = 10;
  Rng init = stream(15, "init");
  ModelParams p = init_params(cfg, init);
  const Transformer<float> model(cfg);

  SUBCASE("a dominant logit is emitted until the length limit") {
    p.out_b(0, 7) = 1e4f;
    Rng rng = stream(16, "gen");
    CHECK(generate(model, p, "(4+5)", {}, rng) == std::string(10, '7'));
  }
  SUBCASE("an EOS-dominant model returns the empty string") {
    p.out_b(0, Vocab::kEos) = 1e4f;
    Rng rng = stream(16, "gen");
    CHECK(generate(model, p, "(4+5)", {}, rng).empty());
  }
  SUBCASE("near-zero temperature agrees with greedy") {
    p.out_w *= 50.0f;
    const Transformer<float> sin_model(small_config(PeMode::Sinusoidal));
    for (const auto& ex : some_examples(20, 17)) {
      Rng a = stream(18, "gen"), b = stream(18, "gen");
      CHECK(generate(sin_model, p, ex.input_text, {DecodeMode::Sample, 1e-6}, a) ==
            generate(sin_model, p, ex.input_text, {DecodeMode::Greedy, 1.0}, b));
    }
  }
  SUBCASE("output length and multi-output counts") {
    p.out_w *= 30.0f;
    Rng rng = stream(19, "gen");
    const auto one = generate_multi(model, p, "((21-6)*2)", 1, rng);
    CHECK(one.size() == 1);
    const auto many = generate_multi(model, p, "((21-6)*2)", 100, rng);
    CHECK(many.size() == 100);
    for (const auto& s : many) CHECK(s.size() <= 10u);
    Rng a = stream(20, "gen"), b = stream(20, "gen");
    CHECK(generate_multi(model, p, "((21-6)*2)", 50, a) == generate_multi(model, p, "((21-6)*2)", 50, b));
    std::vector<std::string> inputs;
    for (const auto& ex : some_examples(9, 21)) inputs.push_back(ex.input_text);
    Rng c = stream(22, "gen");
    const auto batch = generate_batch(model, p, inputs, {}, c);
    CHECK(batch.size() == inputs.size());
  }
}

TEST_CASE("initial loss is close to uniform") {
  const ModelConfig cfg;  // desk configuration
  Rng init = stream(23, "init");
  const ModelParams p = init_params(cfg, init);
  const Transformer<float> model(cfg);
  Rng rng = stream(24, "pos");
  const PreparedBatch b = prepare_batch(model, p, some_examples(32, 24), Regime::Autoregressive, rng);
  const double loss = model.loss(p, b.seqs, b.targets);
  CHECK(loss == doctest::Approx(std::log(19.0)).epsilon(0.2));
}

TEST_CASE("Adam with zero gradients leaves parameters unchanged") {
  const ModelConfig cfg = small_config();
  Rng init = stream(25, "init");
  ModelParams p = init_params(cfg, init);
  const ModelParams before = p;
  AdamState adam = AdamState::for_model(cfg);
  const ModelParams zero = ModelParams::zeros(cfg);
  for (int i = 0; i < 3; ++i) adam_update(p, zero, adam);
  CHECK(params_equal(p, before));
  CHECK(adam.step == 3);
}

TEST_CASE("training steps are deterministic") {
  const ModelConfig cfg = small_config();
  const auto examples = some_examples(16, 26);
  auto run = [&](int steps) {
    Rng init = stream(27, "init");
    ModelParams p = init_params(cfg, init);
    AdamState adam = AdamState::for_model(cfg, 1e-3);
    const Transformer<float> model(cfg);
    Rng pos = stream(27, "pos");
    std::vector<double> losses;
    for (int i = 0; i < steps; ++i)
      losses.push_back(training_step(model, p, adam, examples, Regime::Autoregressive, pos).loss);
    return std::make_pair(p, losses);
  };
  const auto [p1, l1] = run(100);
  const auto [p2, l2] = run(100);
  CHECK(l1 == l2);
  CHECK(params_equal(p1, p2));
  CHECK(l1.back() < l1.front());
}

TEST_CASE("training reduces the loss in both regimes") {
  const ModelConfig cfg = small_config();
  const auto examples = some_examples(8, 28);
  for (Regime regime : {Regime::Autoregressive, Regime::TeacherForced}) {
    Rng init = stream(29, "init");
    ModelParams p = init_params(cfg, init);
    AdamState adam = AdamState::for_model(cfg, 3e-3);
    const Transformer<float> model(cfg);
    Rng pos = stream(29, "pos");
    const double first = training_step(model, p, adam, examples, regime, pos).loss;
    double last = first;
    for (int i = 0; i < 150; ++i) last = training_step(model, p, adam, examples, regime, pos).loss;
    CHECK(last < 0.7 * first);
  }
}

TEST_CASE("autoregressive rollout has the target's length") {
  const ModelConfig cfg = small_config();
  Rng init = stream(30, "init");
  const ModelParams p = init_params(cfg, init);
  const Transformer<float> model(cfg);
  Rng pos = stream(30, "pos");
  const auto examples = some_examples(10, 30);
  const PreparedBatch b = prepare_batch(model, p, examples, Regime::Autoregressive, pos);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    CHECK(b.targets[i].size() == examples[i].target_text.size() + 1);
    CHECK(b.seqs.tgt[i].size() == b.targets[i].size());
    CHECK(b.seqs.tgt[i].front() == Vocab::kSos);
    CHECK(b.targets[i].back() == Vocab::kEos);
  }
}

TEST_CASE("non-finite loss aborts without touching parameters") {
  const ModelConfig cfg = small_config();
  Rng init = stream(31, "init");
  ModelParams p = init_params(cfg, init);
  p.out_b(0, 3) = std::numeric_limits<float>::quiet_NaN();
  const ModelParams before = p;
  AdamState adam = AdamState::for_model(cfg);
  const Transformer<float> model(cfg);
  Rng pos = stream(31, "pos");
  CHECK_THROWS_AS(training_step(model, p, adam, some_examples(4, 31), Regime::Autoregressive, pos),
                  NonFiniteLoss);
  CHECK(adam.step == 0);
  bool same = true;
  ModelParams b = before;
  p.zip(b, [&](const std::string&, MatrixF& x, MatrixF& y) {
    same = same && std::memcmp(x.data(), y.data(), sizeof(float) * static_cast<std::size_t>(x.size())) == 0;
  });
  CHECK(same);
}

TEST_CASE("dropout changes the update only when enabled") {
  ModelConfig cfg = small_config();
  cfg.dropout = 0.3;
  const auto examples = some_examples(8, 32);
  const Transformer<float> model(cfg);
  auto step = [&](bool with_dropout) {
    Rng init = stream(33, "init");
    ModelParams p = init_params(cfg, init);
    AdamState adam = AdamState::for_model(cfg);
    Rng pos = stream(33, "pos"), drop = stream(33, "drop");
    return training_step(model, p, adam, examples, Regime::TeacherForced, pos,
                         with_dropout ? &drop : nullptr).loss;
  };
  CHECK(step(true) != step(false));
  CHECK(step(false) == step(false));
  CHECK(step(true) == step(true));
}

TEST_CASE("gradient check") {
  const ModelConfig cfg = small_config();
  Rng rng = stream(34, "gradcheck");
  const auto ok = gradient_check(cfg, rng);
  CHECK(ok.compared == 200);
  CHECK(ok.max_rel_error <= 1e-3);

  Rng again = stream(34, "gradcheck");
  GradCheckOptions corrupt;
  corrupt.corrupt = true;
  CHECK(gradient_check(cfg, again, corrupt).max_rel_error > 1e-2);
}

TEST_CASE("the loss is a pure function of parameters and batch") {
  const ModelConfig cfg = small_config();
  Rng init = stream(35, "init");
  const ModelParams p = init_params(cfg, init);
  const Transformer<float> model(cfg);
  Rng pos = stream(35, "pos");
  const PreparedBatch b = prepare_batch(model, p, some_examples(4, 35), Regime::TeacherForced, pos);
  CHECK(model.loss(p, b.seqs, b.targets) - model.loss(p, b.seqs, b.targets) == 0.0);
}

TEST_CASE("shape errors") {
  const ModelConfig cfg = small_config();
  Rng init = stream(36, "init");
  const ModelParams p = init_params(cfg, init);
  const Transformer<float> model(cfg);
  Rng pos = stream(36, "pos");
  PreparedBatch b = prepare_batch(model, p, some_examples(2, 36), Regime::TeacherForced, pos);
  b.targets.pop_back();
  CHECK_THROWS_AS(model.loss(p, b.seqs, b.targets), ShapeMismatch);
  ModelConfig bad = cfg;
  bad.n_heads = 3;
  CHECK_THROWS(bad.validate());
}
