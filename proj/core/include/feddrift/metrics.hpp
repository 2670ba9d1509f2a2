#pragma once

namespace feddrift::metrics {

/// Message sizes in bytes for the three artifacts exchanged with the
/// aggregator.
struct CommSizes {
  double l_update = 0.0;  // one model update
  double l_dist = 0.0;    // one cluster-distance record
  double l_alert = 0.0;   // one drift alert
};

/// Sizes of this artifact's own serialization: a 1570-entry update at 4
/// bytes per value, an 8-byte distance, and a 16-byte alert (node id +
/// round).
CommSizes artifact_sizes();

/// True when alert and distance messages are no larger than an update.
/// Callers should warn on unrealistic sizes, not reject them.
bool realistic(const CommSizes& sizes);

/// Overhead ratio of the training phase:
/// ((n_iter * l_update) + l_dist) / (n_iter * l_update).
double alpha(int n_iter, const CommSizes& sizes);

/// Savings ratio of the detection phase with n_drifted alerting nodes:
/// 1 - ((n - d) * l_update + d * l_alert) / (n * l_update).
double beta(int n_nodes, int n_drifted, const CommSizes& sizes);

}  // namespace feddrift::metrics
