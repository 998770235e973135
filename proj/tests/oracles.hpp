#pragma once

// Independent reference computations used to freeze expected values. None of
// these share code paths with the library implementations they check.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <complex>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

// Minimum over every monotonic path from (0,0) to (n-1,m-1) with steps
// (1,0), (0,1), (1,1), enumerated explicitly.
inline double exhaustive_dtw(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  double best = std::numeric_limits<double>::infinity();
  std::function<void(int, int, double)> walk = [&](int i, int j, double acc) {
    acc += cost(i, j);
    if (acc >= best) return;
    if (i == n - 1 && j == m - 1) {
      best = acc;
      return;
    }
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, acc);
    if (i + 1 < n) walk(i + 1, j, acc);
    if (j + 1 < m) walk(i, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

// Sum of costs along a path, for checking reported totals.
inline double path_cost(const Eigen::MatrixXd& cost, const std::vector<std::pair<int, int>>& path) {
  double s = 0;
  for (const auto& [i, j] : path) s += cost(i, j);
  return s;
}

// Canonical correlations as square roots of the eigenvalues of
// Cxx^-1 Cxy Cyy^-1 Cyx, solved with a general (non-symmetric) eigensolver.
inline Eigen::VectorXd cca_correlations(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const Eigen::MatrixXd cxx = xc.transpose() * xc, cyy = yc.transpose() * yc;
  const Eigen::MatrixXd cxy = xc.transpose() * yc;
  const Eigen::MatrixXd m = cxx.ldlt().solve(cxy) * cyy.ldlt().solve(cxy.transpose());
  Eigen::EigenSolver<Eigen::MatrixXd> es(m);
  std::vector<double> vals;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    vals.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i).real())));
  std::sort(vals.rbegin(), vals.rend());
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

// Canonical correlations as singular values of Wx Cxy Wy, where W are the
// symmetric inverse square roots of the covariances (whitening). The
// singular values come from the eigenvalues of the symmetric product.
inline Eigen::VectorXd cca_correlations_whitened(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  auto inv_sqrt = [](const Eigen::MatrixXd& c) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    return Eigen::MatrixXd(es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                           es.eigenvectors().transpose());
  };
  const double n = static_cast<double>(x.rows() - 1);
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const Eigen::MatrixXd t = inv_sqrt(xc.transpose() * xc / n) * (xc.transpose() * yc / n) * inv_sqrt(yc.transpose() * yc / n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.cols() <= y.cols() ? Eigen::MatrixXd(t * t.transpose())
                                                                          : Eigen::MatrixXd(t.transpose() * t));
  Eigen::VectorXd v = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().reverse();
  return v;
}

// Word-level edit distance by plain recursion (no memo); fine for the short
// fixtures it checks.
inline int recursive_edit_distance(const std::vector<std::string>& a, std::size_t i,
                                   const std::vector<std::string>& b, std::size_t j) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  const int sub = recursive_edit_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  const int del = recursive_edit_distance(a, i + 1, b, j) + 1;
  const int ins = recursive_edit_distance(a, i, b, j + 1) + 1;
  return std::min({sub, del, ins});
}

// Gain of an FIR kernel at `freq` (Hz), by direct summation.
inline double fir_gain(const Eigen::VectorXd& taps, double freq, double rate) {
  std::complex<double> acc = 0;
  for (Eigen::Index n = 0; n < taps.size(); ++n)
    acc += taps(n) * std::polar(1.0, -2.0 * 3.14159265358979323846 * freq * static_cast<double>(n) / rate);
  return std::abs(acc);
}

// Closed-form magnitude of a digital Butterworth high-pass designed with the
// bilinear transform and frequency prewarping.
inline double butterworth_hp_gain(int order, double cutoff, double freq, double rate) {
  const double pi = 3.14159265358979323846;
  const double ratio = std::tan(pi * cutoff / rate) / std::tan(pi * freq / rate);
  return 1.0 / std::sqrt(1.0 + std::pow(ratio, 2 * order));
}

// Central finite-difference gradient of f at x, one coordinate at a time.
inline Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                         Eigen::VectorXd x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x(i);
    x(i) = orig + h;
    const double fp = f(x);
    x(i) = orig - h;
    const double fm = f(x);
    x(i) = orig;
    g(i) = (fp - fm) / (2 * h);
  }
  return g;
}

}  // namespace oracle
