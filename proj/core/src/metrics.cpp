#include "feddrift/metrics.hpp"

#include <string>

#include "feddrift/errors.hpp"
#include "feddrift/model.hpp"

namespace feddrift::metrics {

CommSizes artifact_sizes() {
  return CommSizes{model::kParamCount * 4.0, 8.0, 16.0};
}

bool realistic(const CommSizes& sizes) {
  return sizes.l_alert <= sizes.l_update && sizes.l_dist <= sizes.l_update;
}

namespace {

void check_sizes(const CommSizes& sizes) {
  if (!(sizes.l_update > 0.0) || !(sizes.l_dist >= 0.0) || !(sizes.l_alert >= 0.0)) {
    throw DomainError("message sizes must be positive (distance/alert may be zero)");
  }
}

}  // namespace

double alpha(int n_iter, const CommSizes& sizes) {
  check_sizes(sizes);
  if (n_iter < 1) throw DomainError("alpha needs n_iter >= 1");
  const double denom = n_iter * sizes.l_update;
  return (denom + sizes.l_dist) / denom;
}

double beta(int n_nodes, int n_drifted, const CommSizes& sizes) {
  check_sizes(sizes);
  if (n_nodes < 1) throw DomainError("beta needs n_nodes >= 1");
  if (n_drifted < 0 || n_drifted > n_nodes) {
    throw DomainError("beta needs 0 <= n_drifted <= n_nodes, got " +
                      std::to_string(n_drifted) + "/" + std::to_string(n_nodes));
  }
  const double n = n_nodes;
  const double d = n_drifted;
  return 1.0 - ((n - d) * sizes.l_update + d * sizes.l_alert) / (n * sizes.l_update);
}

}  // namespace feddrift::metrics
