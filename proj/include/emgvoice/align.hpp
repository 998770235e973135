#pragma once

#include "emgvoice/features.hpp"

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include <string>
#include <utility>
#include <vector>

namespace emgvoice {

// cost(i, j): local cost of pairing silent frame i with vocalized frame j.
using CostMatrix = Eigen::MatrixXd;

struct AlignmentPath {
  std::vector<std::pair<int, int>> path;  // (i, j), starts at (0,0), ends at (n-1,m-1)
  std::vector<int> mapping;               // i -> j of the first path pair with that i
  double total_cost = 0.0;
};

struct AlignConfig {
  double lambda = 10.0;
  int cca_dims = 15;
  int realign_period = 5;
  int warmup_epochs = 4;

  void validate() const;
};

// Paired linear maps to a shared space; rows of the inputs are frames.
struct CcaProjection {
  Eigen::MatrixXd proj_s;  // D_s x k
  Eigen::MatrixXd proj_v;  // D_v x k
  Eigen::VectorXd mean_s;
  Eigen::VectorXd mean_v;
  Eigen::VectorXd correlations;  // descending, in [0, 1]

  int dims() const { return static_cast<int>(correlations.size()); }
  Eigen::MatrixXd project_s(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
  Eigen::MatrixXd project_v(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
};

enum class CostType { emg, cca, full };
const char* to_string(CostType t);
CostType parse_cost_type(const std::string& s);

// Pairwise Euclidean distances between rows.
CostMatrix pairwise_distances(const Eigen::Ref<const Eigen::MatrixXd>& a,
                              const Eigen::Ref<const Eigen::MatrixXd>& b);

CostMatrix emg_cost(const FeatureSequence& silent, const FeatureSequence& vocalized);

// Centres both sides, ridge-regularizes the covariances by
// 1e-6 * trace / D, whitens, and takes the SVD of the whitened
// cross-covariance. Projections are rescaled so the fitting data has unit
// variance per output dimension; correlations are those of the projected
// fitting data.
CcaProjection fit_cca(const Eigen::Ref<const Eigen::MatrixXd>& silent,
                      const Eigen::Ref<const Eigen::MatrixXd>& vocalized, int dims);

CostMatrix cca_cost(const FeatureSequence& silent, const FeatureSequence& vocalized,
                    const CcaProjection& proj);

CostMatrix full_cost(const FeatureSequence& silent, const FeatureSequence& vocalized,
                     const FeatureSequence& predicted_audio, const FeatureSequence& vocalized_audio,
                     const CcaProjection& proj, double lambda);

// d[i,j] = cost[i,j] + min(d[i-1,j], d[i,j-1], d[i-1,j-1]); ties prefer the
// diagonal, then (i-1, j), then (i, j-1).
AlignmentPath dtw(const CostMatrix& cost);

std::vector<int> first_pair_mapping(const std::vector<std::pair<int, int>>& path, int n);

// Row i of the result is row mapping[i] of `vocalized_audio`.
FeatureSequence transfer_targets(const FeatureSequence& vocalized_audio, const std::vector<int>& mapping);

// Stacks aligned (silent[i], vocalized[mapping[i]]) frame pairs.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> aligned_pairs(const FeatureSequence& silent,
                                                          const FeatureSequence& vocalized,
                                                          const std::vector<int>& mapping);

struct AlignmentRecord {
  std::string utterance_id;
  CostType cost = CostType::emg;
  double lambda = 0.0;
  AlignmentPath alignment;
};

nlohmann::json to_json(const AlignmentRecord& rec);
AlignmentRecord alignment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CcaProjection& proj);
CcaProjection cca_from_json(const nlohmann::json& j);

}  // namespace emgvoice
