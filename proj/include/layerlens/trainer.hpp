#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "layerlens/differentiable.hpp"
#include "layerlens/model.hpp"
#include "layerlens/tasks.hpp"

namespace layerlens {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm cap; 0 disables clipping.
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  /// Optimizer steps between checkpoints; 0 keeps only the final model.
  std::size_t checkpoint_every = 0;
  LossKind loss = LossKind::kLastToken;

  void validate() const;
};

/// Loss became non-finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct Checkpoint {
  std::size_t step = 0;
  std::string model;  // serialized TransformerModel
  double train_accuracy = 0.0;
};

struct CheckpointSeries {
  std::vector<Checkpoint> checkpoints;
};

struct TrainResult {
  TransformerModel model;
  CheckpointSeries series;
  /// Mean training loss of each epoch.
  std::vector<double> epoch_loss;
};

/// Trains a freshly initialized model (init seed = hyper.seed).
TrainResult train(const ModelConfig& config, const CalibrationDataset& data, const TrainConfig& hyper);

/// Continues training from `initial`.
TrainResult train_from(const TransformerModel& initial, const CalibrationDataset& data, const TrainConfig& hyper);

struct HealResult {
  TransformerModel model;
  /// Accuracy on the healing set after each epoch; entry 0 is the input model.
  std::vector<double> curve;
  std::size_t best_epoch = 0;
};

/// Full-parameter fine-tuning for hyper.epochs epochs; returns the state of
/// the epoch with the highest accuracy on `data` (epoch 0 included, earliest
/// epoch on ties).
HealResult heal(const TransformerModel& model, const CalibrationDataset& data, const TrainConfig& hyper);

/// Writes ckpt_<step>.json files plus series.csv into `dir`.
void save_checkpoints(const CheckpointSeries& series, const std::string& dir);
CheckpointSeries load_checkpoints(const std::string& dir);

}  // namespace layerlens
