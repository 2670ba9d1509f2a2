#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <variant>
#include <vector>

#include "feddrift/dataset.hpp"
#include "feddrift/driftdetect.hpp"
#include "feddrift/model.hpp"

namespace feddrift::federation {

/// Full-vector model delta plus its sample weight, ready for aggregation.
struct WeightedDelta {
  Eigen::VectorXd delta;  // length 1570
  int n_samples = 0;
};

/// What a healthy node sends after local training: the weights-only update
/// consumed by drift detection, the bias delta completing the full parameter
/// delta, and the sample count used as the aggregation weight.
struct UpdatePayload {
  model::WeightUpdate weight_update;
  Eigen::Vector2d bias_delta{Eigen::Vector2d::Zero()};
  int n_samples = 0;
};

/// Sent instead of an update once a node's detector flags drift.
struct DriftAlert {
  int detected_round = 0;  // round at which the verdict first fired
};

struct NodeMessage {
  int node_id = 0;
  int round = 0;
  std::variant<UpdatePayload, DriftAlert> payload;
};

/// Full 1570-entry delta (weights then biases) from an update payload.
WeightedDelta to_weighted_delta(const UpdatePayload& payload);

struct AggregatorState {
  model::ModelParams global;
  int round = 0;
  std::optional<driftdetect::NormalStatistics> normal_stats;
  std::set<int> drifted_nodes;
};

/// new_params = global + sum_i (n_i / sum_j n_j) * delta_i over the full
/// flattened vector. Summation runs in the order given.
model::ModelParams fed_avg(const model::ModelParams& global,
                           std::span<const WeightedDelta> updates);

/// mu_norm = arithmetic mean, sigma_norm = population standard deviation of
/// the per-node drift-free cluster distances.
driftdetect::NormalStatistics collect_normal_stats(std::span<const double> distances);

enum class Phase { training, detection };

const char* to_string(Phase phase);

/// One simulated participant: owns its data, its training cache, and its
/// drift detector.
class FederatedNode {
 public:
  FederatedNode(int node_id, std::vector<dataset::DigitSample> samples,
                const model::TrainConfig& train_cfg,
                const driftdetect::DetectorConfig& detector_cfg);

  /// Trains on the current global model and returns an update, or a
  /// DriftAlert if this node has been (or is now) flagged as drifted.
  /// Training-phase updates are retained for fit_detector.
  NodeMessage step(const model::ModelParams& global, int round, Phase phase);

  /// Fits the node's projector and normal clustering on the retained
  /// training-phase updates. Returns the normal cluster distance.
  double fit_detector();

  void set_normal_statistics(driftdetect::NormalStatistics stats);

  /// While recording is off, training-phase updates are sent to the
  /// aggregator but not retained for detector fitting. On by default; the
  /// harness turns it off during burn-in rounds.
  void set_recording(bool on) { recording_ = on; }

  /// Swaps in fresh samples (the start of the detection phase) and rebuilds
  /// the training cache. The detector and its buffers are untouched.
  void replace_data(std::vector<dataset::DigitSample> samples);

  int node_id() const { return node_id_; }
  int n_samples() const { return static_cast<int>(data_.size()); }
  const model::TrainingSet& data() const { return data_; }
  const std::vector<model::WeightUpdate>& normal_updates() const { return normal_updates_; }
  const driftdetect::NodeDetector& detector() const { return detector_; }
  driftdetect::NodeDetector& detector() { return detector_; }

 private:
  int node_id_;
  model::TrainConfig train_cfg_;
  model::TrainingSet data_;
  std::vector<model::WeightUpdate> normal_updates_;
  driftdetect::NodeDetector detector_;
  int alert_round_ = -1;
  bool recording_ = true;
};

/// Per-round record mirroring the round report CSV row.
struct RoundReport {
  int round = 0;
  Phase phase = Phase::training;
  int n_updates = 0;
  int n_alerts = 0;
  double global_train_accuracy = 0.0;
  bool aggregation_skipped = false;
};

/// Advances the federation one synchronous round: every node steps against
/// the current global model, alerts mark their senders drifted, and the
/// remaining updates are merged in ascending node_id order.
RoundReport run_round(AggregatorState& state, std::span<FederatedNode> nodes, Phase phase);

}  // namespace feddrift::federation
