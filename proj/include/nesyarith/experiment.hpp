#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "nesyarith/config.hpp"

namespace nesyarith {

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

struct TrainSummary {
  long steps = 0;
  double final_loss = 0.0;
  double final_val_seq_acc = 0.0;
  std::filesystem::path checkpoint;
};

/// Trains a fresh model on `task`. Writes loss.csv (every log_every steps),
/// validation.csv and the checkpoint (every checkpoint_every steps and at
/// the end) into `run_dir`; progress lines go to `progress`.
TrainSummary run_training(const RunConfig& cfg, Task task, const std::filesystem::path& run_dir,
                          std::ostream& progress);

}  // namespace nesyarith
