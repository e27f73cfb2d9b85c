#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "nesyarith/datagen.hpp"

namespace nesyarith::neural {

enum class PeMode { Sinusoidal, Label };

std::string_view to_string(PeMode mode);
PeMode pe_mode_from_string(std::string_view s);

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = Vocab::kSize;
  int max_positions = 150;  // size of the sinusoidal table label positions draw from
  PeMode pe_mode = PeMode::Label;
  int max_decode_len = 16;
  double dropout = 0.0;
  bool scale_embeddings = true;  // multiply token embeddings by sqrt(d_model)

  int head_dim() const { return d_model / n_heads; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

class ShapeMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SequenceTooLong : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nesyarith::neural
