#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "feddrift/dataset.hpp"
#include "feddrift/driftdetect.hpp"
#include "feddrift/federation.hpp"
#include "feddrift/metrics.hpp"
#include "feddrift/model.hpp"

namespace feddrift::harness {

struct DataSource {
  enum class Kind { synthetic, idx };
  Kind kind = Kind::synthetic;
  int synthetic_per_digit = 0;  // per-digit pool size; presets fill this in
  std::string images_path;
  std::string labels_path;
};

struct ExperimentConfig {
  enum class PartitionMode { single_digit, random_mix };

  int experiment_id = 0;  // 1-4 presets, 0 custom
  int n_nodes = 10;
  int n_burnin_rounds = 0;  // unrecorded rounds before the training window
  int n_training_rounds = 100;
  int detection_interval = 10;
  int detection_rounds = 0;  // 0 resolves to one interval
  PartitionMode partition_mode = PartitionMode::single_digit;
  int samples_per_node = 1000;  // single_digit mode
  int min_per_digit = 100;      // random_mix mode
  int max_per_digit = 500;
  int heldout_per_node = 1000;  // fresh samples per drifted node; healthy
                                // nodes get fresh data mirroring their
                                // training size and composition
  int drifted_node_count = 1;
  std::vector<int> drifted_node_ids;  // empty: seeded uniform choice
  int drifted_digit = -1;             // -1: seeded choice among class-1 digits
  double threshold_multiplier = 3.0;
  int n_components = driftdetect::kAutoComponents;
  int kmeans_restarts = 10;
  int kmeans_max_iter = 300;
  std::uint64_t seed = 42;
  model::TrainConfig train;
  DataSource data;
};

/// Canonical configuration for experiments 1-4: 10 nodes, 100 training
/// rounds, detection interval 10; experiment 1 partitions one digit per node
/// and drifts node 6 via digit 6, experiments 2-4 use random [100,500]
/// per-digit mixes and drift nodes {7}, {6,9}, {1,3,4,5}.
ExperimentConfig preset(int experiment_id);

/// Rejects invalid configurations with ConfigError before any computation.
void validate(const ExperimentConfig& cfg);

struct NodeReport {
  int node_id = 0;
  bool injected = false;  // ground truth: this node's new data were relabeled
  driftdetect::Verdict final_verdict = driftdetect::Verdict::pending;
  double normal_distance = 0.0;
  int n_components = 0;
  Eigen::VectorXd scree;
  std::vector<driftdetect::DetectionRecord> detections;
  std::vector<driftdetect::ReducedUpdate> normal_points;
  std::vector<driftdetect::ReducedUpdate> active_points;
  std::vector<int> cluster_labels;  // normal then active order; -1 = never clustered
};

struct ConfusionCounts {
  int tp = 0;
  int fp = 0;
  int tn = 0;
  int fn = 0;
};

struct ExperimentReport {
  ExperimentConfig config;  // resolved: drift targets and rounds filled in
  driftdetect::NormalStatistics stats;
  std::vector<NodeReport> nodes;
  std::vector<federation::RoundReport> rounds;
  std::vector<int> injected_nodes;  // ascending
  std::vector<int> detected_nodes;  // ascending
  int drifted_digit = -1;
  ConfusionCounts confusion;
  metrics::CommSizes sizes;
  double alpha = 0.0;
  double beta = 0.0;  // evaluated at the detected, not injected, count
  double final_train_accuracy = 0.0;
};

/// Runs the full two-phase pipeline: federated system training, per-node
/// detector fitting, pooled normal statistics, drift injection into the
/// configured nodes via fresh held-out data, and active detection until
/// every node has had the chance to produce one verdict.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Writes summary.csv, per_node_distances.csv, elbow.csv, clusters.csv,
/// rounds.csv, and config.echo into out_dir (created if missing). Output is
/// byte-identical across reruns of the same config and seed.
void emit_report(const ExperimentReport& report, const std::filesystem::path& out_dir);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

}  // namespace feddrift::harness
