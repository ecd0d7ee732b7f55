#include "mlate/types.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "fmt/core.h"

namespace mlate {

Eigen::MatrixXd ClusterMap::dense() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(num_units(), num_clusters());
  for (int i = 0; i < num_units(); ++i) a(i, assignment[i]) = 1.0;
  return a;
}

Eigen::VectorXd ClusterMap::expand(const Eigen::VectorXd& per_cluster) const {
  if (per_cluster.size() != num_clusters())
    throw std::invalid_argument("expand: length does not match cluster count");
  Eigen::VectorXd out(num_units());
  for (int i = 0; i < num_units(); ++i) out[i] = per_cluster[assignment[i]];
  return out;
}

Eigen::VectorXd ClusterMap::cluster_sums(const Eigen::VectorXd& per_unit) const {
  if (per_unit.size() != num_units())
    throw std::invalid_argument("cluster_sums: length does not match unit count");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(num_clusters());
  for (int i = 0; i < num_units(); ++i) out[assignment[i]] += per_unit[i];
  return out;
}

ClusterMap build_cluster_map(const std::vector<long long>& ids) {
  if (ids.empty()) throw std::invalid_argument("build_cluster_map: empty id list");

  std::map<long long, int> label_to_index;
  for (long long id : ids) label_to_index.emplace(id, 0);
  int next = 0;
  for (auto& kv : label_to_index) kv.second = next++;

  ClusterMap map;
  const int n = static_cast<int>(ids.size());
  const int m = next;
  map.assignment.resize(n);
  map.cluster_sizes = Eigen::VectorXi::Zero(m);
  map.labels.reserve(m);
  for (const auto& kv : label_to_index) map.labels.push_back(kv.first);
  map.members.resize(m);
  for (int i = 0; i < n; ++i) {
    const int j = label_to_index.at(ids[i]);
    map.assignment[i] = j;
    map.cluster_sizes[j] += 1;
    map.members[j].push_back(i);
  }
  return map;
}

bool Dataset::exposure_is_binary() const {
  return (exposure.array() == 0.0 || exposure.array() == 1.0).all();
}

void Dataset::validate() const {
  const int n = num_units();
  if (n == 0) throw std::invalid_argument("Dataset: empty outcome");
  if (exposure.size() != n)
    throw std::invalid_argument(fmt::format(
        "Dataset: exposure length {} does not match outcome length {}",
        exposure.size(), n));
  if (covariates.rows() != 0 && covariates.rows() != n)
    throw std::invalid_argument("Dataset: covariate rows do not match outcome length");
  if (static_cast<int>(covariate_names.size()) != covariates.cols())
    throw std::invalid_argument("Dataset: covariate name count does not match columns");
  if (clusters.num_units() != n)
    throw std::invalid_argument("Dataset: cluster map does not cover every unit");
  if ((clusters.cluster_sizes.array() < 1).any())
    throw std::invalid_argument("Dataset: empty cluster after relabeling");
  if (centroids) {
    if (centroids->rows() != clusters.num_clusters() || centroids->cols() != 2)
      throw std::invalid_argument("Dataset: centroids must be m x 2");
  }
  if (!outcome.allFinite() || !exposure.allFinite() || !covariates.allFinite())
    throw std::invalid_argument("Dataset: non-finite values");
}

}  // namespace mlate
