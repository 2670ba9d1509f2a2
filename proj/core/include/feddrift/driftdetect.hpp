#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "feddrift/model.hpp"

namespace feddrift::driftdetect {

/// Component count sentinel: pick k from the explained-variance elbow.
inline constexpr int kAutoComponents = 0;

/// Frozen mean + orthonormal component basis mapping weight updates to
/// k-dimensional reduced space.
struct PcaProjector {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;                // k x dim, rows orthonormal
  Eigen::VectorXd explained_variance_ratio;  // k entries, nonincreasing
  Eigen::VectorXd scree;                     // leading ratios (up to 10) for elbow audits

  Eigen::Index dim() const { return mean.size(); }
  Eigen::Index component_count() const { return components.rows(); }
};

/// Mean-centered PCA of the rows of `data`. n_components = kAutoComponents
/// selects k at the elbow of the explained-variance curve: the number of
/// components whose ratio is at least 2% of the first component's, clamped
/// to [2, 10].
PcaProjector fit_pca(const Eigen::MatrixXd& data, int n_components);
PcaProjector fit_pca(std::span<const model::WeightUpdate> updates, int n_components);

struct ReducedUpdate {
  int node_id = 0;
  int round = 0;
  Eigen::VectorXd coords;
};

Eigen::VectorXd project(const PcaProjector& projector,
                        const Eigen::Ref<const Eigen::VectorXd>& delta);
ReducedUpdate project(const PcaProjector& projector, const model::WeightUpdate& update);

struct DetectorConfig {
  int n_components = kAutoComponents;
  int detection_interval = 10;
  double threshold_multiplier = 3.0;
  int kmeans_restarts = 10;
  int kmeans_max_iter = 300;
  std::uint64_t seed = 0;
};

/// Two cluster centers in reduced space, ordered by first coordinate
/// (lexicographic on ties), plus their Euclidean distance.
struct ClusterSummary {
  Eigen::VectorXd center_low;
  Eigen::VectorXd center_high;
  std::vector<int> assignments;    // 0 = center_low, 1 = center_high
  double distance = 0.0;
  double wcss = 0.0;
  bool degenerate = false;         // all points identical
  std::vector<double> wcss_trace;  // per-iteration WCSS of the winning restart
};

/// Lloyd's algorithm with k = 2, k-means++ seeding, and
/// cfg.kmeans_restarts restarts keeping the lowest within-cluster sum of
/// squares. Deterministic for a fixed cfg.seed.
ClusterSummary kmeans2(std::span<const Eigen::VectorXd> points, const DetectorConfig& cfg);

/// Euclidean distance between cluster centers.
double cluster_distance(const Eigen::VectorXd& c1, const Eigen::VectorXd& c2);

/// Mean and standard deviation of the per-node cluster distances gathered
/// during the drift-free phase.
struct NormalStatistics {
  double mu_norm = 0.0;
  double sigma_norm = 0.0;
};

/// True iff c_dist is strictly outside [mu - m*sigma, mu + m*sigma].
bool is_drifted(double c_dist, const NormalStatistics& stats, double multiplier);

enum class Verdict { pending, normal, drifted };

const char* to_string(Verdict v);

struct DetectionRecord {
  int round = 0;
  double c_dist = 0.0;
  Verdict verdict = Verdict::pending;
};

/// Per-node drift detector. Lifecycle: fit_normal() once on the node's
/// drift-free updates, set_normal_statistics() with the aggregator's pooled
/// stats, then observe() each active-phase update. Every
/// detection_interval observations, the combined normal + active reduced
/// points are clustered and the center distance is thresholded. The active
/// buffer is never evicted; a drifted verdict is permanent.
class NodeDetector {
 public:
  NodeDetector(int node_id, DetectorConfig cfg);

  /// Fits the projector on the node's own normal updates, projects them, and
  /// clusters them. Returns the node's normal-phase cluster distance.
  double fit_normal(std::span<const model::WeightUpdate> normal_updates);

  void set_normal_statistics(NormalStatistics stats);

  /// Reduces and buffers one active-phase update; runs a detection check
  /// when the buffer length reaches a multiple of the interval.
  Verdict observe(const model::WeightUpdate& update);

  int node_id() const { return node_id_; }
  const DetectorConfig& config() const { return cfg_; }
  bool fitted() const { return projector_.has_value(); }
  const PcaProjector& projector() const;
  const std::vector<ReducedUpdate>& normal_points() const { return normal_; }
  const std::vector<ReducedUpdate>& active_points() const { return active_; }
  double normal_distance() const { return normal_distance_; }
  const std::optional<ClusterSummary>& normal_clusters() const { return normal_clusters_; }
  const std::optional<NormalStatistics>& normal_statistics() const { return stats_; }
  const std::vector<DetectionRecord>& detections() const { return detections_; }
  const std::optional<ClusterSummary>& last_clusters() const { return last_clusters_; }
  /// Latest verdict: pending before the first completed check, sticky
  /// drifted afterwards.
  Verdict status() const { return status_; }

 private:
  int node_id_;
  DetectorConfig cfg_;
  std::optional<PcaProjector> projector_;
  std::vector<ReducedUpdate> normal_;
  std::vector<ReducedUpdate> active_;
  std::optional<NormalStatistics> stats_;
  std::optional<ClusterSummary> normal_clusters_;
  std::optional<ClusterSummary> last_clusters_;
  std::vector<DetectionRecord> detections_;
  double normal_distance_ = 0.0;
  Verdict status_ = Verdict::pending;
};

}  // namespace feddrift::driftdetect
