#pragma once

#include <span>
#include <string>
#include <vector>

#include "nesyarith/neural/transformer.hpp"

namespace nesyarith::neural {

/// Cross-attention keys/values projected once from encoder memory.
struct CrossMemory {
  MatrixF k, v;
  Packing packing;
};

CrossMemory project_memory(const ModelParams& p, const MatrixF& memory, const Packing& packing);

/// Step-at-a-time decoder with per-sequence self-attention caches. Logits
/// for step t match row t of a full causal decoder pass over the same
/// inputs and positions.
class IncrementalDecoder {
 public:
  /// `memory_index[s]` picks the encoded input that sequence s attends to;
  /// `positions[s]` is the positional frame sequence s draws from.
  IncrementalDecoder(const Transformer<float>& model, const ModelParams& params,
                     const CrossMemory& memory, std::vector<int> memory_index,
                     std::vector<std::vector<int>> positions);

  int sequences() const { return static_cast<int>(states_.size()); }

  /// Feeds one token to each listed sequence and returns one logits row per
  /// listed sequence, in the same order.
  MatrixF step(std::span<const int> active, std::span<const int> tokens);

 private:
  struct State {
    MatrixF k, v;  // grows one row per step, preallocated to the frame size
    int steps = 0;
  };

  const Transformer<float>& model_;
  const ModelParams& params_;
  const CrossMemory& memory_;
  std::vector<int> memory_index_;
  std::vector<std::vector<int>> positions_;
  std::vector<State> states_;
};

enum class DecodeMode { Greedy, Sample };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::Greedy;
  double temperature = 1.0;
};

/// Positions used for the encoder input of length `k`.
std::vector<int> encoder_positions(const ModelConfig& cfg, int k, Rng& rng);
/// Positional frame of size max_decode_len for one decoder run.
std::vector<int> decoder_frame(const ModelConfig& cfg, Rng& rng);

/// Autoregressive decoding from SOS until EOS or max_decode_len tokens.
std::string generate(const Transformer<float>& model, const ModelParams& params,
                     const std::string& input_text, DecodeOptions opt, Rng& rng);

/// N sampled decodings of one input; the encoder positions are drawn once,
/// decoder frames once per sample.
std::vector<std::string> generate_multi(const Transformer<float>& model,
                                        const ModelParams& params,
                                        const std::string& input_text, int n, Rng& rng,
                                        double temperature = 1.0);

/// Decodes several inputs in lockstep; one output per input.
std::vector<std::string> generate_batch(const Transformer<float>& model,
                                        const ModelParams& params,
                                        std::span<const std::string> inputs, DecodeOptions opt,
                                        Rng& rng);

int argmax(const MatrixF& logits, Eigen::Index row);
int sample_token(const MatrixF& logits, Eigen::Index row, double temperature, Rng& rng);

}  // namespace nesyarith::neural
