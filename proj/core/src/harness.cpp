#include "feddrift/harness.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "feddrift/errors.hpp"
#include "feddrift/rng.hpp"

namespace feddrift::harness {

namespace {

// Seed stream tags: every consumer of randomness gets its own stream so a
// change in one stage cannot shift the draws of another.
constexpr std::uint64_t kStreamPool = 0x01;
constexpr std::uint64_t kStreamTrainSplit = 0x02;
constexpr std::uint64_t kStreamHeldoutSplit = 0x03;
constexpr std::uint64_t kStreamInit = 0x04;
constexpr std::uint64_t kStreamNodeTrain = 0x05;
constexpr std::uint64_t kStreamNodeDetect = 0x06;
constexpr std::uint64_t kStreamDriftNodes = 0x07;
constexpr std::uint64_t kStreamDriftDigit = 0x08;

using PartitionMode = ExperimentConfig::PartitionMode;

// Scales a node's training mix down to `target` held-out samples with the
// largest-remainder method, so the fresh data keep the node's distribution
// shape. Only strata the node trained on receive samples.
template <std::size_t N>
std::array<int, N> scale_counts(const std::array<int, N>& train_counts, int target) {
  long long total = 0;
  for (int c : train_counts) total += c;

  std::array<int, N> out{};
  std::array<double, N> remainder{};
  int assigned = 0;
  for (std::size_t d = 0; d < N; ++d) {
    const double ideal =
        static_cast<double>(target) * train_counts[d] / static_cast<double>(total);
    out[d] = static_cast<int>(std::floor(ideal));
    remainder[d] = ideal - out[d];
    assigned += out[d];
  }

  std::vector<std::size_t> eligible;
  for (std::size_t d = 0; d < N; ++d) {
    if (train_counts[d] > 0) eligible.push_back(d);
  }
  std::stable_sort(eligible.begin(), eligible.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < target; ++i) {
    out[eligible[i % eligible.size()]]++;
    assigned++;
  }
  return out;
}

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ';';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace

std::string format_double(double value) {
  std::array<char, 64> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), res.ptr);
}

ExperimentConfig preset(int experiment_id) {
  ExperimentConfig cfg;
  cfg.experiment_id = experiment_id;
  // 50 unrecorded rounds put every node's margins at their settle points
  // before baseline statistics are collected; without them the early
  // convergence transient inflates sigma and the drift threshold.
  cfg.n_burnin_rounds = 50;
  switch (experiment_id) {
    case 1:
      cfg.partition_mode = PartitionMode::single_digit;
      cfg.drifted_node_count = 1;
      cfg.drifted_node_ids = {6};
      cfg.drifted_digit = 6;  // node 6 holds only digit 6
      cfg.data.synthetic_per_digit = 8000;
      break;
    case 2:
      cfg.partition_mode = PartitionMode::random_mix;
      cfg.drifted_node_count = 1;
      cfg.drifted_node_ids = {7};
      cfg.data.synthetic_per_digit = 12000;
      break;
    case 3:
      cfg.partition_mode = PartitionMode::random_mix;
      cfg.drifted_node_count = 2;
      cfg.drifted_node_ids = {6, 9};
      cfg.data.synthetic_per_digit = 12000;
      break;
    case 4:
      cfg.partition_mode = PartitionMode::random_mix;
      cfg.drifted_node_count = 4;
      cfg.drifted_node_ids = {1, 3, 4, 5};
      cfg.data.synthetic_per_digit = 12000;
      break;
    default:
      throw ConfigError("preset experiment_id must be 1-4, got " +
                        std::to_string(experiment_id));
  }
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.experiment_id < 0 || cfg.experiment_id > 4) {
    throw ConfigError("experiment_id must be 0 (custom) or 1-4");
  }
  if (cfg.n_nodes < 2) {
    throw ConfigError("n_nodes must be >= 2 so normal statistics are defined");
  }
  if (cfg.partition_mode == PartitionMode::single_digit &&
      cfg.n_nodes > dataset::kDigitCount) {
    throw ConfigError("single-digit partitioning supports at most 10 nodes");
  }
  if (cfg.n_burnin_rounds < 0) throw ConfigError("n_burnin_rounds must be >= 0");
  if (cfg.n_training_rounds < 2) {
    throw ConfigError("n_training_rounds must be >= 2 so the projector can be fitted");
  }
  if (cfg.detection_interval < 1) throw ConfigError("detection_interval must be >= 1");
  if (cfg.detection_rounds < 0) throw ConfigError("detection_rounds must be >= 0");
  if (cfg.partition_mode == PartitionMode::single_digit) {
    if (cfg.samples_per_node < 1) throw ConfigError("samples_per_node must be >= 1");
  } else {
    if (cfg.min_per_digit < 0 || cfg.max_per_digit < 1 ||
        cfg.min_per_digit > cfg.max_per_digit) {
      throw ConfigError("per-digit range needs 0 <= min <= max and max >= 1");
    }
  }
  if (cfg.heldout_per_node < 1) throw ConfigError("heldout_per_node must be >= 1");
  if (cfg.drifted_node_count < 0 || cfg.drifted_node_count > cfg.n_nodes) {
    throw ConfigError("drifted_node_count must be in [0, n_nodes]");
  }
  if (!cfg.drifted_node_ids.empty()) {
    if (static_cast<int>(cfg.drifted_node_ids.size()) != cfg.drifted_node_count) {
      throw ConfigError("drifted_node_ids length must equal drifted_node_count");
    }
    std::vector<int> ids = cfg.drifted_node_ids;
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw ConfigError("drifted_node_ids must be unique");
    }
    if (ids.front() < 0 || ids.back() >= cfg.n_nodes) {
      throw ConfigError("drifted_node_ids must be in [0, n_nodes)");
    }
  }
  if (cfg.drifted_digit != -1) {
    if (cfg.drifted_node_count == 0) {
      throw ConfigError("drifted_digit requires drifted_node_count >= 1");
    }
    const auto normal = dataset::ConceptMap::normal();
    if (cfg.drifted_digit < 0 || cfg.drifted_digit >= dataset::kDigitCount ||
        normal.class_of(cfg.drifted_digit) != 1) {
      throw ConfigError("drifted_digit must be -1 or a digit mapped to label 1");
    }
  }
  if (!(cfg.threshold_multiplier > 0.0)) {
    throw ConfigError("threshold_multiplier must be > 0");
  }
  if (cfg.n_components != driftdetect::kAutoComponents) {
    if (cfg.n_components < 1) {
      throw ConfigError("n_components must be auto or >= 1");
    }
    const int limit = std::min(cfg.n_training_rounds, model::kWeightCount);
    if (cfg.n_components > limit) {
      throw ConfigError("n_components must be <= min(n_training_rounds, weight count)");
    }
  }
  if (cfg.kmeans_restarts < 1) throw ConfigError("kmeans_restarts must be >= 1");
  if (cfg.kmeans_max_iter < 1) throw ConfigError("kmeans_max_iter must be >= 1");
  if (!(cfg.train.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (cfg.train.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.train.local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (cfg.data.kind == DataSource::Kind::synthetic) {
    if (cfg.data.synthetic_per_digit < 1) {
      throw ConfigError("synthetic_per_digit must be >= 1");
    }
  } else {
    if (cfg.data.images_path.empty() || cfg.data.labels_path.empty()) {
      throw ConfigError("idx data source needs both image and label paths");
    }
  }
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  ExperimentConfig resolved = cfg;
  if (resolved.detection_rounds == 0) {
    resolved.detection_rounds = resolved.detection_interval;
  }

  ExperimentReport report;

  std::vector<dataset::DigitSample> pool;
  if (cfg.data.kind == DataSource::Kind::synthetic) {
    pool = dataset::generate_synthetic(cfg.data.synthetic_per_digit,
                                       rng::mix(cfg.seed, kStreamPool));
  } else {
    pool = dataset::load_idx(cfg.data.images_path, cfg.data.labels_path);
  }

  // Training partitions first, then held-out partitions from the leftover so
  // the detection-phase data are genuinely unseen.
  dataset::PartitionSet training;
  if (cfg.partition_mode == PartitionMode::single_digit) {
    training = dataset::partition_single_digit(std::move(pool), cfg.n_nodes,
                                               cfg.samples_per_node,
                                               rng::mix(cfg.seed, kStreamTrainSplit));
  } else {
    training = dataset::partition_random_mix(std::move(pool), cfg.n_nodes,
                                             cfg.min_per_digit, cfg.max_per_digit,
                                             rng::mix(cfg.seed, kStreamTrainSplit));
  }

  // The injected set is resolved before the held-out split so fresh data can
  // be sized per role. A healthy node's partition mirrors its training census
  // exactly (size, digit mix, and per-digit label-noise counts): its data
  // source has not changed, so swapping in new observations must not move its
  // update statistics. An injected node models a drift event delivering
  // heldout_per_node new observations in its training shape.
  std::vector<int> injected = resolved.drifted_node_ids;
  if (injected.empty() && resolved.drifted_node_count > 0) {
    std::vector<int> ids(cfg.n_nodes);
    std::iota(ids.begin(), ids.end(), 0);
    auto g = rng::engine(rng::mix(cfg.seed, kStreamDriftNodes));
    rng::shuffle(ids, g);
    injected.assign(ids.begin(), ids.begin() + resolved.drifted_node_count);
  }
  std::sort(injected.begin(), injected.end());
  resolved.drifted_node_ids = injected;

  const auto normal_concept = dataset::ConceptMap::normal();
  std::vector<std::array<int, dataset::kDigitCount * 2>> heldout_counts(cfg.n_nodes);
  for (int i = 0; i < cfg.n_nodes; ++i) {
    std::array<int, dataset::kDigitCount * 2> census{};
    for (const auto& s : training.nodes[i].samples) {
      const int m = s.class_label == normal_concept.class_of(s.digit) ? 0 : 1;
      census[2 * s.digit + m]++;
    }
    heldout_counts[i] = std::binary_search(injected.begin(), injected.end(), i)
                            ? scale_counts(census, cfg.heldout_per_node)
                            : census;
  }
  dataset::PartitionSet heldout = dataset::partition_by_label_counts(
      std::move(training.leftover), heldout_counts, normal_concept,
      rng::mix(cfg.seed, kStreamHeldoutSplit));

  std::vector<federation::FederatedNode> nodes;
  nodes.reserve(cfg.n_nodes);
  for (int i = 0; i < cfg.n_nodes; ++i) {
    model::TrainConfig tc = cfg.train;
    tc.seed = rng::mix(cfg.seed, kStreamNodeTrain, static_cast<std::uint64_t>(i));
    driftdetect::DetectorConfig dc;
    dc.n_components = cfg.n_components;
    dc.detection_interval = cfg.detection_interval;
    dc.threshold_multiplier = cfg.threshold_multiplier;
    dc.kmeans_restarts = cfg.kmeans_restarts;
    dc.kmeans_max_iter = cfg.kmeans_max_iter;
    dc.seed = rng::mix(cfg.seed, kStreamNodeDetect, static_cast<std::uint64_t>(i));
    nodes.emplace_back(i, std::move(training.nodes[i].samples), tc, dc);
  }

  federation::AggregatorState state;
  state.global = model::random_init(rng::mix(cfg.seed, kStreamInit));

  if (resolved.n_burnin_rounds > 0) {
    for (auto& node : nodes) node.set_recording(false);
    for (int r = 0; r < resolved.n_burnin_rounds; ++r) {
      report.rounds.push_back(
          federation::run_round(state, nodes, federation::Phase::training));
    }
    for (auto& node : nodes) node.set_recording(true);
  }

  for (int r = 0; r < resolved.n_training_rounds; ++r) {
    report.rounds.push_back(
        federation::run_round(state, nodes, federation::Phase::training));
  }

  std::vector<double> distances;
  distances.reserve(nodes.size());
  for (auto& node : nodes) distances.push_back(node.fit_detector());
  report.stats = federation::collect_normal_stats(distances);
  state.normal_stats = report.stats;
  for (auto& node : nodes) node.set_normal_statistics(report.stats);

  auto drifted_concept = normal_concept;
  int drifted_digit = -1;
  if (resolved.drifted_node_count > 0) {
    const dataset::DriftInjection injection =
        resolved.drifted_digit >= 0
            ? dataset::force_drift(normal_concept, resolved.drifted_digit)
            : dataset::inject_drift(normal_concept,
                                    rng::mix(cfg.seed, kStreamDriftDigit));
    drifted_concept = injection.concept_map;
    drifted_digit = injection.drifted_digit;
  }
  resolved.drifted_digit = drifted_digit;
  report.drifted_digit = drifted_digit;

  // Everyone receives fresh data; the injected nodes see it under the
  // altered concept.
  for (int i = 0; i < cfg.n_nodes; ++i) {
    std::vector<dataset::DigitSample> fresh = std::move(heldout.nodes[i].samples);
    if (std::binary_search(injected.begin(), injected.end(), i)) {
      fresh = dataset::relabel(std::move(fresh), drifted_concept);
    }
    nodes[i].replace_data(std::move(fresh));
  }

  for (int r = 0; r < resolved.detection_rounds; ++r) {
    report.rounds.push_back(
        federation::run_round(state, nodes, federation::Phase::detection));
  }

  report.injected_nodes = injected;
  report.detected_nodes.assign(state.drifted_nodes.begin(), state.drifted_nodes.end());
  for (int i = 0; i < cfg.n_nodes; ++i) {
    const bool truth = std::binary_search(injected.begin(), injected.end(), i);
    const bool flagged = state.drifted_nodes.count(i) > 0;
    if (truth && flagged) report.confusion.tp++;
    if (!truth && flagged) report.confusion.fp++;
    if (!truth && !flagged) report.confusion.tn++;
    if (truth && !flagged) report.confusion.fn++;
  }

  report.sizes = metrics::artifact_sizes();
  report.alpha = metrics::alpha(resolved.n_training_rounds, report.sizes);
  report.beta = metrics::beta(resolved.n_nodes,
                              static_cast<int>(report.detected_nodes.size()),
                              report.sizes);
  report.final_train_accuracy = report.rounds.back().global_train_accuracy;

  report.nodes.reserve(nodes.size());
  for (const auto& node : nodes) {
    const auto& det = node.detector();
    NodeReport nr;
    nr.node_id = node.node_id();
    nr.injected = std::binary_search(injected.begin(), injected.end(), node.node_id());
    nr.final_verdict = det.status();
    nr.normal_distance = det.normal_distance();
    nr.n_components = static_cast<int>(det.projector().component_count());
    nr.scree = det.projector().scree;
    nr.detections = det.detections();
    nr.normal_points = det.normal_points();
    nr.active_points = det.active_points();
    nr.cluster_labels.assign(nr.normal_points.size() + nr.active_points.size(), -1);
    const auto& labels = det.last_clusters() ? det.last_clusters()->assignments
                         : det.normal_clusters() ? det.normal_clusters()->assignments
                                                 : std::vector<int>{};
    std::copy(labels.begin(),
              labels.begin() + std::min(labels.size(), nr.cluster_labels.size()),
              nr.cluster_labels.begin());
    report.nodes.push_back(std::move(nr));
  }

  report.config = resolved;
  return report;
}

void emit_report(const ExperimentReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  }
  const ExperimentConfig& cfg = report.config;

  {
    const auto path = out_dir / "summary.csv";
    auto out = open_for_write(path);
    out << "experiment_id,n_nodes,n_burnin_rounds,n_training_rounds,"
           "detection_interval,detection_rounds,seed,drifted_digit,"
           "injected_nodes,detected_nodes,n_drifted,tp,fp,tn,fn,alpha,beta,"
           "mu_norm,sigma_norm,final_train_accuracy\n";
    out << cfg.experiment_id << ',' << cfg.n_nodes << ','
        << cfg.n_burnin_rounds << ',' << cfg.n_training_rounds
        << ',' << cfg.detection_interval << ',' << cfg.detection_rounds << ','
        << cfg.seed << ',' << report.drifted_digit << ','
        << join_ids(report.injected_nodes) << ',' << join_ids(report.detected_nodes)
        << ',' << report.detected_nodes.size() << ',' << report.confusion.tp << ','
        << report.confusion.fp << ',' << report.confusion.tn << ','
        << report.confusion.fn << ',' << format_double(report.alpha) << ','
        << format_double(report.beta) << ',' << format_double(report.stats.mu_norm)
        << ',' << format_double(report.stats.sigma_norm) << ','
        << format_double(report.final_train_accuracy) << '\n';
    finish_write(out, path);
  }

  {
    const auto path = out_dir / "per_node_distances.csv";
    auto out = open_for_write(path);
    out << "node_id,round,c_dist,mu_norm,sigma_norm,verdict\n";
    const std::string mu = format_double(report.stats.mu_norm);
    const std::string sigma = format_double(report.stats.sigma_norm);
    const int baseline_round = cfg.n_burnin_rounds + cfg.n_training_rounds;
    for (const auto& node : report.nodes) {
      out << node.node_id << ',' << baseline_round << ','
          << format_double(node.normal_distance) << ',' << mu << ',' << sigma
          << ",baseline\n";
      for (const auto& det : node.detections) {
        out << node.node_id << ',' << det.round << ',' << format_double(det.c_dist)
            << ',' << mu << ',' << sigma << ',' << driftdetect::to_string(det.verdict)
            << '\n';
      }
    }
    finish_write(out, path);
  }

  {
    const auto path = out_dir / "elbow.csv";
    auto out = open_for_write(path);
    out << "node_id,component,explained_variance_ratio\n";
    for (const auto& node : report.nodes) {
      for (Eigen::Index j = 0; j < node.scree.size(); ++j) {
        out << node.node_id << ',' << (j + 1) << ',' << format_double(node.scree(j))
            << '\n';
      }
    }
    finish_write(out, path);
  }

  {
    const auto path = out_dir / "clusters.csv";
    auto out = open_for_write(path);
    int max_k = 1;
    for (const auto& node : report.nodes) max_k = std::max(max_k, node.n_components);
    out << "node_id,source,round,cluster";
    for (int j = 1; j <= max_k; ++j) out << ",c" << j;
    out << '\n';
    for (const auto& node : report.nodes) {
      std::size_t row = 0;
      auto write_point = [&](const driftdetect::ReducedUpdate& point, const char* source) {
        out << node.node_id << ',' << source << ',' << point.round << ','
            << node.cluster_labels[row++];
        for (int j = 0; j < max_k; ++j) {
          out << ',';
          if (j < point.coords.size()) out << format_double(point.coords(j));
        }
        out << '\n';
      };
      for (const auto& point : node.normal_points) write_point(point, "normal");
      for (const auto& point : node.active_points) write_point(point, "active");
    }
    finish_write(out, path);
  }

  {
    const auto path = out_dir / "rounds.csv";
    auto out = open_for_write(path);
    out << "round,phase,n_updates,n_alerts,global_train_accuracy\n";
    for (const auto& round : report.rounds) {
      out << round.round << ',' << federation::to_string(round.phase) << ','
          << round.n_updates << ',' << round.n_alerts << ','
          << format_double(round.global_train_accuracy) << '\n';
    }
    finish_write(out, path);
  }

  {
    const auto path = out_dir / "config.echo";
    auto out = open_for_write(path);
    std::map<std::string, std::string> kv;
    kv["experiment_id"] = std::to_string(cfg.experiment_id);
    kv["n_nodes"] = std::to_string(cfg.n_nodes);
    kv["n_burnin_rounds"] = std::to_string(cfg.n_burnin_rounds);
    kv["n_training_rounds"] = std::to_string(cfg.n_training_rounds);
    kv["detection_interval"] = std::to_string(cfg.detection_interval);
    kv["detection_rounds"] = std::to_string(cfg.detection_rounds);
    kv["partition_mode"] = cfg.partition_mode == PartitionMode::single_digit
                               ? "single_digit"
                               : "random_mix";
    kv["samples_per_node"] = std::to_string(cfg.samples_per_node);
    kv["min_per_digit"] = std::to_string(cfg.min_per_digit);
    kv["max_per_digit"] = std::to_string(cfg.max_per_digit);
    kv["heldout_per_node"] = std::to_string(cfg.heldout_per_node);
    kv["drifted_node_count"] = std::to_string(cfg.drifted_node_count);
    kv["drifted_node_ids"] = join_ids(cfg.drifted_node_ids);
    kv["drifted_digit"] = std::to_string(cfg.drifted_digit);
    kv["threshold_multiplier"] = format_double(cfg.threshold_multiplier);
    kv["n_components"] = cfg.n_components == driftdetect::kAutoComponents
                             ? "auto"
                             : std::to_string(cfg.n_components);
    kv["kmeans_restarts"] = std::to_string(cfg.kmeans_restarts);
    kv["kmeans_max_iter"] = std::to_string(cfg.kmeans_max_iter);
    kv["seed"] = std::to_string(cfg.seed);
    kv["learning_rate"] = format_double(cfg.train.learning_rate);
    kv["batch_size"] = std::to_string(cfg.train.batch_size);
    kv["local_epochs"] = std::to_string(cfg.train.local_epochs);
    kv["data_source"] =
        cfg.data.kind == DataSource::Kind::synthetic ? "synthetic" : "idx";
    kv["synthetic_per_digit"] = std::to_string(cfg.data.synthetic_per_digit);
    kv["images_path"] = cfg.data.images_path;
    kv["labels_path"] = cfg.data.labels_path;
    for (const auto& [key, value] : kv) out << key << '=' << value << '\n';
    finish_write(out, path);
  }
}

}  // namespace feddrift::harness
