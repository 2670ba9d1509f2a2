#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "feddrift/dataset.hpp"

namespace feddrift::model {

inline constexpr int kInputDim = dataset::kPixelCount;  // 784
inline constexpr int kNumClasses = 2;
inline constexpr int kWeightCount = kInputDim * kNumClasses;   // 1568
inline constexpr int kParamCount = kWeightCount + kNumClasses; // 1570

/// Softmax classifier parameters: 784x2 weights plus a 2-vector of biases.
struct ModelParams {
  Eigen::MatrixXd weights{Eigen::MatrixXd::Zero(kInputDim, kNumClasses)};
  Eigen::Vector2d biases{Eigen::Vector2d::Zero()};
};

ModelParams zero_params();

/// Weights uniform in [-0.05, 0.05], biases zero.
ModelParams random_init(std::uint64_t seed);

// Flattening order is defined here and nowhere else: weights row-major
// (w(0,0), w(0,1), w(1,0), ...), then the biases.
Eigen::VectorXd flatten(const ModelParams& params);              // length 1570
Eigen::VectorXd flatten_weights(const ModelParams& params);      // length 1568
ModelParams unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat);

/// The weight portion of (local - global) for one node and round.
struct WeightUpdate {
  int node_id = 0;
  int round = 0;
  Eigen::VectorXd delta;  // length 1568
};

struct TrainConfig {
  double learning_rate = 0.1;
  int batch_size = 32;
  int local_epochs = 1;
  std::uint64_t seed = 0;
};

/// Row-per-sample view of a sample list, cached once per node so the SGD loop
/// does not rebuild matrices every round.
struct TrainingSet {
  using InputMatrix = Eigen::Matrix<double, Eigen::Dynamic, kInputDim, Eigen::RowMajor>;
  InputMatrix inputs;                     // n x 784
  std::vector<std::uint8_t> labels;       // n binary labels
  Eigen::Index size() const { return inputs.rows(); }
};

TrainingSet make_training_set(std::span<const dataset::DigitSample> samples);

/// Class probabilities via max-subtraction stabilized softmax.
Eigen::Vector2d forward(const ModelParams& params,
                        const Eigen::Ref<const Eigen::VectorXd>& pixels);
Eigen::Vector2d forward(const ModelParams& params, const dataset::DigitSample& sample);

/// Mean cross-entropy over the set.
double cross_entropy(const ModelParams& params, const TrainingSet& data);

struct Gradients {
  Eigen::MatrixXd weights;
  Eigen::Vector2d biases;
};

/// Mean-reduction gradient of cross_entropy at params.
Gradients loss_gradient(const ModelParams& params, const TrainingSet& data);

struct LocalTrainResult {
  ModelParams local;
  WeightUpdate update;
  int n_samples = 0;
};

/// local_epochs passes of mini-batch SGD from the global model. Batch order
/// is a seeded shuffle per epoch; deterministic for a fixed config.
LocalTrainResult train_local(const ModelParams& global, const TrainingSet& data,
                             const TrainConfig& cfg, int node_id = 0, int round = 0);
LocalTrainResult train_local(const ModelParams& global,
                             std::span<const dataset::DigitSample> data,
                             const TrainConfig& cfg, int node_id = 0, int round = 0);

/// Fraction of samples whose argmax probability matches class_label.
/// Ties break toward label 0.
double accuracy(const ModelParams& params, const TrainingSet& data);
double accuracy(const ModelParams& params, std::span<const dataset::DigitSample> data);

}  // namespace feddrift::model
