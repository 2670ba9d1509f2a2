#include "feddrift/federation.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "feddrift/errors.hpp"
#include "feddrift/rng.hpp"

namespace feddrift::federation {

WeightedDelta to_weighted_delta(const UpdatePayload& payload) {
  WeightedDelta out;
  out.delta.resize(model::kParamCount);
  out.delta.head(model::kWeightCount) = payload.weight_update.delta;
  out.delta.tail(model::kNumClasses) = payload.bias_delta;
  out.n_samples = payload.n_samples;
  return out;
}

model::ModelParams fed_avg(const model::ModelParams& global,
                           std::span<const WeightedDelta> updates) {
  if (updates.empty()) throw DomainError("fed_avg needs at least one update");
  long long total = 0;
  for (const auto& u : updates) {
    if (u.delta.size() != model::kParamCount) {
      throw ShapeError("fed_avg delta has length " + std::to_string(u.delta.size()) +
                       ", expected " + std::to_string(model::kParamCount));
    }
    if (u.n_samples < 1) throw DomainError("fed_avg update has no samples");
    total += u.n_samples;
  }
  Eigen::VectorXd merged = model::flatten(global);
  for (const auto& u : updates) {
    merged += (static_cast<double>(u.n_samples) / static_cast<double>(total)) * u.delta;
  }
  return model::unflatten(merged);
}

driftdetect::NormalStatistics collect_normal_stats(std::span<const double> distances) {
  if (distances.size() < 2) {
    throw StatsError("normal statistics need at least 2 distances, got " +
                     std::to_string(distances.size()));
  }
  const auto n = static_cast<double>(distances.size());
  double mean = 0.0;
  for (double d : distances) mean += d;
  mean /= n;
  double var = 0.0;
  for (double d : distances) var += (d - mean) * (d - mean);
  var /= n;
  return driftdetect::NormalStatistics{mean, std::sqrt(var)};
}

const char* to_string(Phase phase) {
  return phase == Phase::training ? "training" : "detection";
}

FederatedNode::FederatedNode(int node_id, std::vector<dataset::DigitSample> samples,
                             const model::TrainConfig& train_cfg,
                             const driftdetect::DetectorConfig& detector_cfg)
    : node_id_(node_id),
      train_cfg_(train_cfg),
      data_(model::make_training_set(samples)),
      detector_(node_id, detector_cfg) {
  if (samples.empty()) throw DomainError("node needs at least one sample");
}

NodeMessage FederatedNode::step(const model::ModelParams& global, int round, Phase phase) {
  if (detector_.status() == driftdetect::Verdict::drifted) {
    return NodeMessage{node_id_, round, DriftAlert{alert_round_}};
  }

  model::TrainConfig cfg = train_cfg_;
  cfg.seed = rng::mix(train_cfg_.seed, static_cast<std::uint64_t>(round));
  model::LocalTrainResult result = model::train_local(global, data_, cfg, node_id_, round);

  if (phase == Phase::training) {
    if (recording_) {
      normal_updates_.push_back(result.update);
    }
  } else {
    const auto verdict = detector_.observe(result.update);
    if (verdict == driftdetect::Verdict::drifted) {
      alert_round_ = round;
      return NodeMessage{node_id_, round, DriftAlert{alert_round_}};
    }
  }

  UpdatePayload payload;
  payload.weight_update = std::move(result.update);
  payload.bias_delta = result.local.biases - global.biases;
  payload.n_samples = result.n_samples;
  return NodeMessage{node_id_, round, std::move(payload)};
}

double FederatedNode::fit_detector() {
  return detector_.fit_normal(normal_updates_);
}

void FederatedNode::set_normal_statistics(driftdetect::NormalStatistics stats) {
  detector_.set_normal_statistics(stats);
}

void FederatedNode::replace_data(std::vector<dataset::DigitSample> samples) {
  if (samples.empty()) throw DomainError("node needs at least one sample");
  data_ = model::make_training_set(samples);
}

RoundReport run_round(AggregatorState& state, std::span<FederatedNode> nodes, Phase phase) {
  if (nodes.empty()) throw DomainError("run_round needs at least one node");

  const int round = state.round + 1;
  std::vector<NodeMessage> messages;
  messages.reserve(nodes.size());
  for (auto& node : nodes) {
    messages.push_back(node.step(state.global, round, phase));
  }
  std::sort(messages.begin(), messages.end(),
            [](const NodeMessage& a, const NodeMessage& b) { return a.node_id < b.node_id; });

  std::vector<WeightedDelta> updates;
  updates.reserve(messages.size());
  RoundReport report;
  report.round = round;
  report.phase = phase;
  for (const auto& msg : messages) {
    if (const auto* payload = std::get_if<UpdatePayload>(&msg.payload)) {
      updates.push_back(to_weighted_delta(*payload));
      report.n_updates++;
    } else {
      state.drifted_nodes.insert(msg.node_id);
      report.n_alerts++;
    }
  }

  if (!updates.empty()) {
    state.global = fed_avg(state.global, updates);
  } else {
    report.aggregation_skipped = true;
  }
  state.round = round;

  double correct_weighted = 0.0;
  double total = 0.0;
  for (const auto& node : nodes) {
    const auto n = static_cast<double>(node.n_samples());
    correct_weighted += model::accuracy(state.global, node.data()) * n;
    total += n;
  }
  report.global_train_accuracy = correct_weighted / total;
  return report;
}

}  // namespace feddrift::federation
