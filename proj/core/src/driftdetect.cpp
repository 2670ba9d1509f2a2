#include "feddrift/driftdetect.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "feddrift/errors.hpp"
#include "feddrift/rng.hpp"

namespace feddrift::driftdetect {

namespace {

constexpr double kCenterShiftTol = 1e-9;
constexpr double kElbowFraction = 0.02;
constexpr int kAutoMinComponents = 2;
constexpr int kAutoMaxComponents = 10;
constexpr int kScreeLength = 10;

// Number of components whose explained variance is at least kElbowFraction
// of the first component's, clamped to [2, 10]. The cutoff is relative to
// the leading component so a weak but real direction survives alongside
// strong ones, while the near-zero tail past the signal subspace is cut.
int select_components(const Eigen::VectorXd& ratios) {
  const auto available = static_cast<int>(ratios.size());
  int k = available;
  if (available >= 1 && ratios(0) > 0.0) {
    const double cutoff = kElbowFraction * ratios(0);
    for (int j = 1; j < available; ++j) {
      if (ratios(j) < cutoff) {
        k = j;  // component j+1 (1-based) fell below the cutoff
        break;
      }
    }
  }
  k = std::clamp(k, kAutoMinComponents, kAutoMaxComponents);
  return std::min(k, available);
}

void sign_normalize_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index idx = 0;
    m.row(r).cwiseAbs().maxCoeff(&idx);
    if (m(r, idx) < 0.0) m.row(r) = -m.row(r);
  }
}

bool lexicographic_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) < b(i)) return true;
    if (a(i) > b(i)) return false;
  }
  return false;
}

struct KmeansRun {
  Eigen::VectorXd centers[2];
  std::vector<int> assignments;
  double wcss = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
};

double squared_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).squaredNorm();
}

KmeansRun lloyd_once(std::span<const Eigen::VectorXd> points, std::mt19937_64& g,
                     int max_iter) {
  const std::size_t n = points.size();
  KmeansRun run;
  run.assignments.assign(n, 0);

  // k-means++ seeding: first center uniform, second weighted by squared
  // distance to the first.
  std::size_t first = rng::uniform_below(g, n);
  run.centers[0] = points[first];
  std::vector<double> d2(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d2[i] = squared_distance(points[i], run.centers[0]);
    total += d2[i];
  }
  double target = rng::uniform_unit(g) * total;
  std::size_t second = first;
  double cum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cum += d2[i];
    if (d2[i] > 0.0 && cum > target) {
      second = i;
      break;
    }
  }
  if (second == first) {  // rounding fallback: take the farthest point
    second = static_cast<std::size_t>(
        std::max_element(d2.begin(), d2.end()) - d2.begin());
  }
  run.centers[1] = points[second];

  Eigen::VectorXd sums[2];
  for (int it = 0; it < max_iter; ++it) {
    // Assignment step; ties go to the lower-index center.
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double a = squared_distance(points[i], run.centers[0]);
      double b = squared_distance(points[i], run.centers[1]);
      run.assignments[i] = b < a ? 1 : 0;
      wcss += std::min(a, b);
    }
    run.trace.push_back(wcss);

    // Update step.
    sums[0] = Eigen::VectorXd::Zero(points[0].size());
    sums[1] = Eigen::VectorXd::Zero(points[0].size());
    std::size_t counts[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      sums[run.assignments[i]] += points[i];
      counts[run.assignments[i]]++;
    }
    for (int c = 0; c < 2; ++c) {
      if (counts[c] == 0) {
        // Re-seed an emptied cluster with the point farthest from its center.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          double d = squared_distance(points[i], run.centers[run.assignments[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        sums[c] = points[far];
        counts[c] = 1;
        run.assignments[far] = c;
      }
    }

    double shift = 0.0;
    for (int c = 0; c < 2; ++c) {
      Eigen::VectorXd updated = sums[c] / static_cast<double>(counts[c]);
      shift = std::max(shift, (updated - run.centers[c]).norm());
      run.centers[c] = std::move(updated);
    }
    if (shift < kCenterShiftTol) break;
  }

  // Final assignment against the converged centers.
  run.wcss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double a = squared_distance(points[i], run.centers[0]);
    double b = squared_distance(points[i], run.centers[1]);
    run.assignments[i] = b < a ? 1 : 0;
    run.wcss += std::min(a, b);
  }
  return run;
}

}  // namespace

PcaProjector fit_pca(const Eigen::MatrixXd& data, int n_components) {
  const auto n = data.rows();
  const auto dim = data.cols();
  const bool automatic = n_components == kAutoComponents;
  if (!automatic && n_components < 1) {
    throw DomainError("n_components must be >= 1 or kAutoComponents");
  }
  const Eigen::Index min_needed = automatic ? 2 : std::max(2, n_components);
  if (n < min_needed) {
    throw RankError("PCA needs at least " + std::to_string(min_needed) +
                    " updates, got " + std::to_string(n));
  }
  if (!automatic && n_components > std::min(n, dim)) {
    throw RankError("cannot extract " + std::to_string(n_components) +
                    " components from " + std::to_string(n) + "x" +
                    std::to_string(dim) + " data");
  }

  PcaProjector p;
  p.mean = data.colwise().mean();
  Eigen::MatrixXd centered = data.rowwise() - p.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  Eigen::VectorXd ratios = sv.array().square();
  const double total = ratios.sum();
  if (total > 0.0) {
    ratios /= total;
  } else {
    ratios.setZero();
  }

  const int k = automatic ? select_components(ratios) : n_components;
  p.components = svd.matrixV().leftCols(k).transpose();
  sign_normalize_rows(p.components);
  p.explained_variance_ratio = ratios.head(k);
  p.scree = ratios.head(std::min<Eigen::Index>(kScreeLength, ratios.size()));
  return p;
}

PcaProjector fit_pca(std::span<const model::WeightUpdate> updates, int n_components) {
  if (updates.empty()) throw RankError("PCA needs at least 2 updates, got 0");
  const auto dim = updates[0].delta.size();
  Eigen::MatrixXd data(static_cast<Eigen::Index>(updates.size()), dim);
  for (std::size_t i = 0; i < updates.size(); ++i) {
    if (updates[i].delta.size() != dim) {
      throw ShapeError("weight updates disagree on length");
    }
    data.row(static_cast<Eigen::Index>(i)) = updates[i].delta;
  }
  return fit_pca(data, n_components);
}

Eigen::VectorXd project(const PcaProjector& projector,
                        const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (delta.size() != projector.dim()) {
    throw ShapeError("projection expected length " + std::to_string(projector.dim()) +
                     ", got " + std::to_string(delta.size()));
  }
  return projector.components * (delta - projector.mean);
}

ReducedUpdate project(const PcaProjector& projector, const model::WeightUpdate& update) {
  return ReducedUpdate{update.node_id, update.round, project(projector, update.delta)};
}

ClusterSummary kmeans2(std::span<const Eigen::VectorXd> points, const DetectorConfig& cfg) {
  if (points.size() < 2) throw DomainError("kmeans2 needs at least 2 points");
  if (cfg.kmeans_restarts < 1 || cfg.kmeans_max_iter < 1) {
    throw ConfigError("kmeans restarts and max_iter must be >= 1");
  }
  const auto dim = points[0].size();
  for (const auto& pt : points) {
    if (pt.size() != dim) throw ShapeError("kmeans2 points disagree on dimension");
  }

  ClusterSummary out;
  bool all_identical = true;
  for (std::size_t i = 1; i < points.size() && all_identical; ++i) {
    all_identical = points[i] == points[0];
  }
  if (all_identical) {
    out.center_low = points[0];
    out.center_high = points[0];
    out.assignments.assign(points.size(), 0);
    out.degenerate = true;
    out.distance = 0.0;
    out.wcss = 0.0;
    return out;
  }

  auto g = rng::engine(cfg.seed);
  KmeansRun best;
  for (int r = 0; r < cfg.kmeans_restarts; ++r) {
    KmeansRun run = lloyd_once(points, g, cfg.kmeans_max_iter);
    if (run.wcss < best.wcss) best = std::move(run);
  }

  const bool swap_centers = lexicographic_less(best.centers[1], best.centers[0]);
  out.center_low = best.centers[swap_centers ? 1 : 0];
  out.center_high = best.centers[swap_centers ? 0 : 1];
  out.assignments = std::move(best.assignments);
  if (swap_centers) {
    for (auto& a : out.assignments) a = 1 - a;
  }
  out.distance = cluster_distance(out.center_low, out.center_high);
  out.wcss = best.wcss;
  out.wcss_trace = std::move(best.trace);
  return out;
}

double cluster_distance(const Eigen::VectorXd& c1, const Eigen::VectorXd& c2) {
  if (c1.size() != c2.size()) throw ShapeError("cluster centers disagree on dimension");
  return (c2 - c1).norm();
}

bool is_drifted(double c_dist, const NormalStatistics& stats, double multiplier) {
  if (!(stats.sigma_norm >= 0.0)) throw DomainError("sigma_norm must be >= 0");
  if (!(multiplier > 0.0)) throw DomainError("threshold multiplier must be > 0");
  const double lo = stats.mu_norm - multiplier * stats.sigma_norm;
  const double hi = stats.mu_norm + multiplier * stats.sigma_norm;
  return c_dist < lo || hi < c_dist;
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pending: return "pending";
    case Verdict::normal: return "normal";
    case Verdict::drifted: return "drifted";
  }
  return "unknown";
}

NodeDetector::NodeDetector(int node_id, DetectorConfig cfg)
    : node_id_(node_id), cfg_(cfg) {
  if (cfg_.detection_interval < 1) throw ConfigError("detection_interval must be >= 1");
  if (!(cfg_.threshold_multiplier > 0.0)) {
    throw ConfigError("threshold_multiplier must be > 0");
  }
  if (cfg_.kmeans_restarts < 1 || cfg_.kmeans_max_iter < 1) {
    throw ConfigError("kmeans restarts and max_iter must be >= 1");
  }
  if (cfg_.n_components != kAutoComponents && cfg_.n_components < 1) {
    throw ConfigError("n_components must be >= 1 or kAutoComponents");
  }
}

const PcaProjector& NodeDetector::projector() const {
  if (!projector_) throw ConfigError("projector not fitted");
  return *projector_;
}

double NodeDetector::fit_normal(std::span<const model::WeightUpdate> normal_updates) {
  projector_ = fit_pca(normal_updates, cfg_.n_components);
  normal_.clear();
  normal_.reserve(normal_updates.size());
  std::vector<Eigen::VectorXd> coords;
  coords.reserve(normal_updates.size());
  for (const auto& u : normal_updates) {
    normal_.push_back(project(*projector_, u));
    coords.push_back(normal_.back().coords);
  }
  normal_clusters_ = kmeans2(coords, cfg_);
  normal_distance_ = normal_clusters_->distance;
  return normal_distance_;
}

void NodeDetector::set_normal_statistics(NormalStatistics stats) {
  if (!(stats.sigma_norm >= 0.0)) throw DomainError("sigma_norm must be >= 0");
  stats_ = stats;
}

Verdict NodeDetector::observe(const model::WeightUpdate& update) {
  if (status_ == Verdict::drifted) return Verdict::drifted;
  if (!projector_) throw ConfigError("projector not fitted");

  active_.push_back(project(*projector_, update));
  if (active_.size() % static_cast<std::size_t>(cfg_.detection_interval) != 0) {
    return Verdict::pending;
  }

  if (!stats_) throw ConfigError("normal statistics not set before detection");

  std::vector<Eigen::VectorXd> combined;
  combined.reserve(normal_.size() + active_.size());
  for (const auto& r : normal_) combined.push_back(r.coords);
  for (const auto& r : active_) combined.push_back(r.coords);

  ClusterSummary summary = kmeans2(combined, cfg_);
  const bool drifted =
      is_drifted(summary.distance, *stats_, cfg_.threshold_multiplier);
  const Verdict verdict = drifted ? Verdict::drifted : Verdict::normal;
  detections_.push_back(DetectionRecord{update.round, summary.distance, verdict});
  last_clusters_ = std::move(summary);
  status_ = verdict;
  return verdict;
}

}  // namespace feddrift::driftdetect
