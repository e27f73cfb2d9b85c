#pragma once

#include <stdexcept>
#include <vector>

#include "nesyarith/neural/params.hpp"

namespace nesyarith::neural {

class KTooLarge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// m x d_model table: column 2i holds sin(pos / 10000^(2i/d)), column 2i+1
/// the matching cosine.
MatrixD sinusoidal_table(int m, int d_model);

/// k distinct integers drawn uniformly from [0, m-1], ascending.
std::vector<int> label_positions(Rng& rng, int k, int m);

/// 0, 1, ..., k-1.
std::vector<int> first_positions(int k);

}  // namespace nesyarith::neural
