#include "nesyarith/neural/positional.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nesyarith::neural {

std::string_view to_string(PeMode mode) {
  return mode == PeMode::Label ? "label" : "sinusoidal";
}

PeMode pe_mode_from_string(std::string_view s) {
  if (s == "label") return PeMode::Label;
  if (s == "sinusoidal") return PeMode::Sinusoidal;
  throw std::invalid_argument("unknown pe_mode '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("model config: " + why); };
  if (d_model <= 0 || d_model % 2 != 0) fail("d_model must be positive and even");
  if (n_heads <= 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ff <= 0) fail("d_ff must be positive");
  if (vocab_size != Vocab::kSize) fail("vocab_size must be " + std::to_string(Vocab::kSize));
  if (max_decode_len < 1) fail("max_decode_len must be >= 1");
  if (max_positions < max_decode_len) fail("max_positions must be >= max_decode_len");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

MatrixD sinusoidal_table(int m, int d_model) {
  if (d_model % 2 != 0) throw std::invalid_argument("d_model must be even");
  MatrixD table(m, d_model);
  for (int pos = 0; pos < m; ++pos) {
    for (int i = 0; i < d_model / 2; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / d_model);
      table(pos, 2 * i) = std::sin(angle);
      table(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return table;
}

std::vector<int> label_positions(Rng& rng, int k, int m) {
  if (k > m)
    throw KTooLarge("cannot draw " + std::to_string(k) + " distinct positions from " +
                    std::to_string(m));
  // The only draw when k == m is the full range; skipping the generator keeps
  // Label mode bit-identical to Sinusoidal mode in that case.
  if (k == m) return first_positions(k);
  std::vector<int> all(static_cast<std::size_t>(m));
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(k));
  // Selection sampling keeps the input order, so the result is already sorted.
  std::sample(all.begin(), all.end(), std::back_inserter(picked), k, rng);
  return picked;
}

std::vector<int> first_positions(int k) {
  std::vector<int> p(static_cast<std::size_t>(k));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

}  // namespace nesyarith::neural
