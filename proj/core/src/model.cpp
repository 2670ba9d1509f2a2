#include "feddrift/model.hpp"

#include <cmath>
#include <numeric>

#include "feddrift/errors.hpp"
#include "feddrift/rng.hpp"

namespace feddrift::model {

namespace {

void check_nonempty(Eigen::Index n, const char* op) {
  if (n == 0) throw DomainError(std::string(op) + ": data must be non-empty");
}

template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double m = logits.row(r).maxCoeff();
    double e0 = std::exp(logits(r, 0) - m);
    double e1 = std::exp(logits(r, 1) - m);
    double z = e0 + e1;
    logits(r, 0) = e0 / z;
    logits(r, 1) = e1 / z;
  }
}

}  // namespace

ModelParams zero_params() { return ModelParams{}; }

ModelParams random_init(std::uint64_t seed) {
  ModelParams p;
  auto g = rng::engine(seed);
  for (int i = 0; i < kInputDim; ++i) {
    for (int j = 0; j < kNumClasses; ++j) {
      p.weights(i, j) = rng::uniform_range(g, -0.05, 0.05);
    }
  }
  return p;
}

Eigen::VectorXd flatten(const ModelParams& params) {
  Eigen::VectorXd flat(kParamCount);
  flat.head(kWeightCount) = flatten_weights(params);
  flat.tail(kNumClasses) = params.biases;
  return flat;
}

Eigen::VectorXd flatten_weights(const ModelParams& params) {
  Eigen::VectorXd flat(kWeightCount);
  for (int i = 0; i < kInputDim; ++i) {
    for (int j = 0; j < kNumClasses; ++j) {
      flat(i * kNumClasses + j) = params.weights(i, j);
    }
  }
  return flat;
}

ModelParams unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat) {
  if (flat.size() != kParamCount) {
    throw ShapeError("unflatten: expected length " + std::to_string(kParamCount) +
                     ", got " + std::to_string(flat.size()));
  }
  ModelParams p;
  for (int i = 0; i < kInputDim; ++i) {
    for (int j = 0; j < kNumClasses; ++j) {
      p.weights(i, j) = flat(i * kNumClasses + j);
    }
  }
  p.biases = flat.tail(kNumClasses);
  return p;
}

TrainingSet make_training_set(std::span<const dataset::DigitSample> samples) {
  TrainingSet out;
  out.inputs.resize(static_cast<Eigen::Index>(samples.size()), kInputDim);
  out.labels.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int p = 0; p < kInputDim; ++p) {
      out.inputs(static_cast<Eigen::Index>(i), p) = samples[i].pixels[p];
    }
    out.labels[i] = samples[i].class_label;
  }
  return out;
}

Eigen::Vector2d forward(const ModelParams& params,
                        const Eigen::Ref<const Eigen::VectorXd>& pixels) {
  if (pixels.size() != kInputDim) {
    throw ShapeError("forward: expected " + std::to_string(kInputDim) + " pixels");
  }
  Eigen::Vector2d logits = params.weights.transpose() * pixels + params.biases;
  double m = logits.maxCoeff();
  Eigen::Vector2d e = (logits.array() - m).exp();
  return e / e.sum();
}

Eigen::Vector2d forward(const ModelParams& params, const dataset::DigitSample& sample) {
  Eigen::VectorXd pixels(kInputDim);
  for (int p = 0; p < kInputDim; ++p) pixels(p) = sample.pixels[p];
  return forward(params, pixels);
}

double cross_entropy(const ModelParams& params, const TrainingSet& data) {
  check_nonempty(data.size(), "cross_entropy");
  Eigen::Matrix<double, Eigen::Dynamic, kNumClasses> probs =
      data.inputs * params.weights;
  probs.rowwise() += params.biases.transpose();
  softmax_rows_inplace(probs);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    loss -= std::log(std::max(probs(r, data.labels[r]), 1e-300));
  }
  return loss / static_cast<double>(data.size());
}

Gradients loss_gradient(const ModelParams& params, const TrainingSet& data) {
  check_nonempty(data.size(), "loss_gradient");
  Eigen::Matrix<double, Eigen::Dynamic, kNumClasses> probs =
      data.inputs * params.weights;
  probs.rowwise() += params.biases.transpose();
  softmax_rows_inplace(probs);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    probs(r, data.labels[r]) -= 1.0;  // p - onehot(y)
  }
  probs /= static_cast<double>(data.size());
  Gradients g;
  g.weights = data.inputs.transpose() * probs;
  g.biases = probs.colwise().sum();
  return g;
}

LocalTrainResult train_local(const ModelParams& global, const TrainingSet& data,
                             const TrainConfig& cfg, int node_id, int round) {
  check_nonempty(data.size(), "train_local");
  if (cfg.learning_rate <= 0.0) throw DomainError("learning_rate must be > 0");
  if (cfg.batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (cfg.local_epochs < 1) throw DomainError("local_epochs must be >= 1");

  const auto n = data.size();
  ModelParams local = global;
  auto g = rng::engine(cfg.seed);

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::size_t{0});

  const Eigen::Index max_batch = std::min<Eigen::Index>(cfg.batch_size, n);
  TrainingSet::InputMatrix batch_inputs(max_batch, kInputDim);
  Eigen::Matrix<double, Eigen::Dynamic, kNumClasses> probs(max_batch, kNumClasses);

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng::shuffle(order, g);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n - start);
      auto inputs_b = batch_inputs.topRows(b);
      auto probs_b = probs.topRows(b);
      for (Eigen::Index r = 0; r < b; ++r) {
        inputs_b.row(r) = data.inputs.row(static_cast<Eigen::Index>(order[start + r]));
      }
      probs_b.noalias() = inputs_b * local.weights;
      probs_b.rowwise() += local.biases.transpose();
      softmax_rows_inplace(probs_b);
      for (Eigen::Index r = 0; r < b; ++r) {
        probs_b(r, data.labels[order[start + r]]) -= 1.0;
      }
      // Constant divisor: every sample carries weight 1/batch_size no matter
      // which batch it lands in, so a short final batch cannot amplify its
      // samples' gradients.
      probs_b /= static_cast<double>(max_batch);
      local.weights.noalias() -= cfg.learning_rate * (inputs_b.transpose() * probs_b);
      local.biases -= cfg.learning_rate * probs_b.colwise().sum().transpose();
    }
  }

  LocalTrainResult result;
  result.update.node_id = node_id;
  result.update.round = round;
  result.update.delta = flatten_weights(local) - flatten_weights(global);
  result.local = std::move(local);
  result.n_samples = static_cast<int>(n);
  return result;
}

LocalTrainResult train_local(const ModelParams& global,
                             std::span<const dataset::DigitSample> data,
                             const TrainConfig& cfg, int node_id, int round) {
  return train_local(global, make_training_set(data), cfg, node_id, round);
}

double accuracy(const ModelParams& params, const TrainingSet& data) {
  check_nonempty(data.size(), "accuracy");
  Eigen::Matrix<double, Eigen::Dynamic, kNumClasses> logits =
      data.inputs * params.weights;
  logits.rowwise() += params.biases.transpose();
  Eigen::Index correct = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    // argmax with ties toward label 0; softmax is monotone so logits suffice.
    int pred = logits(r, 1) > logits(r, 0) ? 1 : 0;
    if (pred == data.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double accuracy(const ModelParams& params, std::span<const dataset::DigitSample> data) {
  return accuracy(params, make_training_set(data));
}

}  // namespace feddrift::model
