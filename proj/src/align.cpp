#include "emgvoice/align.hpp"

#include "emgvoice/error.hpp"
#include "emgvoice/json_eigen.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace emgvoice {

using nlohmann::json;

void AlignConfig::validate() const {
  if (!(lambda >= 0)) throw config_error("lambda must be non-negative");
  if (cca_dims < 1) throw config_error("CCA dimension count must be at least 1");
  if (realign_period < 1) throw config_error("realignment period must be at least 1");
  if (warmup_epochs < 0) throw config_error("warmup epochs must be non-negative");
}

const char* to_string(CostType t) {
  switch (t) {
    case CostType::emg: return "emg";
    case CostType::cca: return "cca";
    case CostType::full: return "full";
  }
  return "?";
}

CostType parse_cost_type(const std::string& s) {
  if (s == "emg") return CostType::emg;
  if (s == "cca") return CostType::cca;
  if (s == "full") return CostType::full;
  throw config_error("unknown alignment cost '" + s + "'");
}

Eigen::MatrixXd CcaProjection::project_s(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  if (x.cols() != proj_s.rows()) throw data_error("CCA silent-side dimension mismatch");
  return (x.rowwise() - mean_s.transpose()) * proj_s;
}

Eigen::MatrixXd CcaProjection::project_v(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  if (x.cols() != proj_v.rows()) throw data_error("CCA vocalized-side dimension mismatch");
  return (x.rowwise() - mean_v.transpose()) * proj_v;
}

CostMatrix pairwise_distances(const Eigen::Ref<const Eigen::MatrixXd>& a,
                              const Eigen::Ref<const Eigen::MatrixXd>& b) {
  if (a.cols() != b.cols())
    throw data_error("feature dimension mismatch: " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()));
  // Row-major copies keep each frame contiguous in the inner loop.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat ra = a, rb = b;
  CostMatrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < ra.rows(); ++i)
    for (Eigen::Index j = 0; j < rb.rows(); ++j) d(i, j) = (ra.row(i) - rb.row(j)).norm();
  return d;
}

CostMatrix emg_cost(const FeatureSequence& silent, const FeatureSequence& vocalized) {
  if (silent.kind != FeatureKind::emg || vocalized.kind != FeatureKind::emg)
    throw data_error("emg_cost expects EMG feature sequences");
  return pairwise_distances(silent.data, vocalized.data);
}

namespace {

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& cov, const char* side) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd& vals = eig.eigenvalues();
  const double scale = std::max(vals.cwiseAbs().maxCoeff(), 1e-300);
  if (vals.minCoeff() <= 1e-14 * scale)
    throw numeric_error(std::string("CCA ") + side + " covariance is rank deficient beyond regularization");
  return eig.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

CcaProjection fit_cca(const Eigen::Ref<const Eigen::MatrixXd>& silent,
                      const Eigen::Ref<const Eigen::MatrixXd>& vocalized, int dims) {
  const Eigen::Index n = silent.rows();
  if (vocalized.rows() != n) throw data_error("CCA inputs need the same number of paired rows");
  const Eigen::Index ds = silent.cols(), dv = vocalized.cols();
  if (dims < 1 || dims > std::min(ds, dv))
    throw config_error("CCA dims must lie in [1, min(D_s, D_v)]");
  if (n <= std::max(ds, dv)) throw data_error("CCA needs more paired frames than feature dimensions");

  CcaProjection out;
  out.mean_s = silent.colwise().mean().transpose();
  out.mean_v = vocalized.colwise().mean().transpose();
  const Eigen::MatrixXd xs = silent.rowwise() - out.mean_s.transpose();
  const Eigen::MatrixXd xv = vocalized.rowwise() - out.mean_v.transpose();
  const double denom = static_cast<double>(n - 1);
  const Eigen::MatrixXd css = xs.transpose() * xs / denom;
  const Eigen::MatrixXd cvv = xv.transpose() * xv / denom;
  const Eigen::MatrixXd csv = xs.transpose() * xv / denom;

  auto ridge = [](const Eigen::MatrixXd& c) {
    return c + (1e-6 * c.trace() / static_cast<double>(c.rows())) *
                   Eigen::MatrixXd::Identity(c.rows(), c.cols());
  };
  const Eigen::MatrixXd ws = inverse_sqrt(ridge(css), "silent");
  const Eigen::MatrixXd wv = inverse_sqrt(ridge(cvv), "vocalized");

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ws * csv * wv, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::MatrixXd ps = ws * svd.matrixU().leftCols(dims);
  Eigen::MatrixXd pv = wv * svd.matrixV().leftCols(dims);

  Eigen::VectorXd corr(dims);
  for (int k = 0; k < dims; ++k) {
    const double vs = ps.col(k).dot(css * ps.col(k));
    const double vv = pv.col(k).dot(cvv * pv.col(k));
    if (!(vs > 0 && vv > 0)) throw numeric_error("CCA produced a degenerate projection");
    ps.col(k) /= std::sqrt(vs);
    pv.col(k) /= std::sqrt(vv);
    corr(k) = std::clamp(ps.col(k).dot(csv * pv.col(k)), 0.0, 1.0);
  }

  std::vector<int> order(static_cast<std::size_t>(dims));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return corr(a) > corr(b); });
  out.proj_s.resize(ds, dims);
  out.proj_v.resize(dv, dims);
  out.correlations.resize(dims);
  for (int k = 0; k < dims; ++k) {
    out.proj_s.col(k) = ps.col(order[static_cast<std::size_t>(k)]);
    out.proj_v.col(k) = pv.col(order[static_cast<std::size_t>(k)]);
    out.correlations(k) = corr(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

CostMatrix cca_cost(const FeatureSequence& silent, const FeatureSequence& vocalized,
                    const CcaProjection& proj) {
  return pairwise_distances(proj.project_s(silent.data), proj.project_v(vocalized.data));
}

CostMatrix full_cost(const FeatureSequence& silent, const FeatureSequence& vocalized,
                     const FeatureSequence& predicted_audio, const FeatureSequence& vocalized_audio,
                     const CcaProjection& proj, double lambda) {
  if (!(lambda >= 0)) throw config_error("lambda must be non-negative");
  if (predicted_audio.frames() != silent.frames())
    throw data_error("predicted audio has " + std::to_string(predicted_audio.frames()) +
                     " frames, silent EMG has " + std::to_string(silent.frames()));
  if (vocalized_audio.frames() != vocalized.frames())
    throw data_error("vocalized audio has " + std::to_string(vocalized_audio.frames()) +
                     " frames, vocalized EMG has " + std::to_string(vocalized.frames()));
  CostMatrix cost = cca_cost(silent, vocalized, proj);
  if (lambda > 0) cost += lambda * pairwise_distances(predicted_audio.data, vocalized_audio.data);
  return cost;
}

AlignmentPath dtw(const CostMatrix& cost) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  if (n == 0 || m == 0) throw data_error("DTW on an empty cost matrix");
  if (!cost.allFinite()) throw numeric_error("DTW cost matrix contains non-finite values");

  enum Step : unsigned char { kStart, kDiag, kUp, kLeft };
  Eigen::MatrixXd d(n, m);
  Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic> back(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == 0 && j == 0) {
        d(i, j) = cost(i, j);
        back(i, j) = kStart;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      Step step = kStart;
      if (i > 0 && j > 0) {
        best = d(i - 1, j - 1);
        step = kDiag;
      }
      if (i > 0 && d(i - 1, j) < best) {
        best = d(i - 1, j);
        step = kUp;
      }
      if (j > 0 && d(i, j - 1) < best) {
        best = d(i, j - 1);
        step = kLeft;
      }
      d(i, j) = cost(i, j) + best;
      back(i, j) = step;
    }
  }

  AlignmentPath out;
  out.total_cost = d(n - 1, m - 1);
  Eigen::Index i = n - 1, j = m - 1;
  out.path.emplace_back(static_cast<int>(i), static_cast<int>(j));
  while (back(i, j) != kStart) {
    switch (back(i, j)) {
      case kDiag: --i; --j; break;
      case kUp: --i; break;
      case kLeft: --j; break;
      default: break;
    }
    out.path.emplace_back(static_cast<int>(i), static_cast<int>(j));
  }
  std::reverse(out.path.begin(), out.path.end());
  out.mapping = first_pair_mapping(out.path, static_cast<int>(n));
  return out;
}

std::vector<int> first_pair_mapping(const std::vector<std::pair<int, int>>& path, int n) {
  std::vector<int> mapping(static_cast<std::size_t>(n), -1);
  for (const auto& [i, j] : path) {
    if (i < 0 || i >= n) throw data_error("alignment path index out of range");
    if (mapping[static_cast<std::size_t>(i)] < 0) mapping[static_cast<std::size_t>(i)] = j;
  }
  for (int i = 0; i < n; ++i)
    if (mapping[static_cast<std::size_t>(i)] < 0)
      throw data_error("alignment path skips silent frame " + std::to_string(i));
  return mapping;
}

FeatureSequence transfer_targets(const FeatureSequence& vocalized_audio, const std::vector<int>& mapping) {
  FeatureSequence out;
  out.kind = vocalized_audio.kind;
  out.normalized = vocalized_audio.normalized;
  out.data.resize(static_cast<Eigen::Index>(mapping.size()), vocalized_audio.dim());
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    const int j = mapping[i];
    if (j < 0 || j >= vocalized_audio.frames())
      throw data_error("alignment maps frame " + std::to_string(i) + " to " + std::to_string(j) +
                       ", outside [0, " + std::to_string(vocalized_audio.frames()) + ")");
    out.data.row(static_cast<Eigen::Index>(i)) = vocalized_audio.data.row(j);
  }
  return out;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> aligned_pairs(const FeatureSequence& silent,
                                                          const FeatureSequence& vocalized,
                                                          const std::vector<int>& mapping) {
  if (static_cast<Eigen::Index>(mapping.size()) != silent.frames())
    throw data_error("mapping length differs from silent frame count");
  FeatureSequence warped = transfer_targets(vocalized, mapping);
  return {silent.data, std::move(warped.data)};
}

json to_json(const AlignmentRecord& rec) {
  json path = json::array();
  for (const auto& [i, j] : rec.alignment.path) path.push_back({i, j});
  return {{"version", 1},
          {"utterance_id", rec.utterance_id},
          {"cost_type", to_string(rec.cost)},
          {"lambda", rec.lambda},
          {"total_cost", rec.alignment.total_cost},
          {"mapping", rec.alignment.mapping},
          {"path", path}};
}

AlignmentRecord alignment_from_json(const json& j) {
  if (j.value("version", 0) != 1) throw data_error("unsupported alignment file version");
  AlignmentRecord rec;
  rec.utterance_id = j.at("utterance_id").get<std::string>();
  rec.cost = parse_cost_type(j.at("cost_type").get<std::string>());
  rec.lambda = j.at("lambda").get<double>();
  rec.alignment.total_cost = j.at("total_cost").get<double>();
  rec.alignment.mapping = j.at("mapping").get<std::vector<int>>();
  for (const auto& p : j.at("path")) rec.alignment.path.emplace_back(p[0].get<int>(), p[1].get<int>());
  return rec;
}

json to_json(const CcaProjection& proj) {
  return {{"proj_s", matrix_to_json(proj.proj_s)},
          {"proj_v", matrix_to_json(proj.proj_v)},
          {"mean_s", vector_to_json(proj.mean_s)},
          {"mean_v", vector_to_json(proj.mean_v)},
          {"correlations", vector_to_json(proj.correlations)}};
}

CcaProjection cca_from_json(const json& j) {
  CcaProjection p;
  p.proj_s = matrix_from_json(j.at("proj_s"));
  p.proj_v = matrix_from_json(j.at("proj_v"));
  p.mean_s = vector_from_json(j.at("mean_s"));
  p.mean_v = vector_from_json(j.at("mean_v"));
  p.correlations = vector_from_json(j.at("correlations"));
  return p;
}

}  // namespace emgvoice
