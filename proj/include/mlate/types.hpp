#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace mlate {

// Unit-to-cluster incidence in compact form: assignment[i] gives the 0-based
// cluster of unit i after sorted-unique relabeling of the raw ids.  Row sums
// of the implied N x m incidence matrix are 1 by construction and its column
// sums are cluster_sizes.
struct ClusterMap {
  Eigen::VectorXi assignment;      // N, values in 0..m-1
  Eigen::VectorXi cluster_sizes;   // m, all >= 1
  std::vector<long long> labels;   // m, original ids in ascending order
  std::vector<std::vector<int>> members;  // unit indices per cluster

  int num_units() const { return static_cast<int>(assignment.size()); }
  int num_clusters() const { return static_cast<int>(cluster_sizes.size()); }

  // Dense N x m incidence matrix; only sensible for small problems and tests.
  Eigen::MatrixXd dense() const;

  // A * v: spread one value per cluster to its units.
  Eigen::VectorXd expand(const Eigen::VectorXd& per_cluster) const;
  // A' * u: sum a per-unit vector within clusters.
  Eigen::VectorXd cluster_sums(const Eigen::VectorXd& per_unit) const;
};

// Relabels arbitrary integer cluster ids to 0..m-1 in ascending id order.
ClusterMap build_cluster_map(const std::vector<long long>& ids);

struct Dataset {
  Eigen::VectorXd outcome;     // N
  Eigen::VectorXd exposure;    // N; 0/1 on the binary paths, real-valued in
                               // the Gaussian study
  Eigen::MatrixXd covariates;  // N x p
  std::vector<std::string> covariate_names;  // p
  ClusterMap clusters;
  std::optional<Eigen::MatrixXd> centroids;  // m x 2 planar coordinates

  int num_units() const { return static_cast<int>(outcome.size()); }
  bool exposure_is_binary() const;

  // Throws std::invalid_argument when dimensions disagree, the cluster map
  // does not cover every unit, or centroids do not match the cluster count.
  void validate() const;
};

}  // namespace mlate
