#include <doctest.h>

#include "emgvoice/align.hpp"
#include "emgvoice/error.hpp"
#include "oracles.hpp"

#include <nlohmann/json.hpp>

#include <random>

using namespace emgvoice;

namespace {

FeatureSequence emg_seq(const Eigen::MatrixXd& m) { return {m, FeatureKind::emg, true}; }
FeatureSequence mfcc_seq(const Eigen::MatrixXd& m) { return {m, FeatureKind::mfcc, true}; }

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

void check_path_invariants(const AlignmentPath& a, int n, int m) {
  REQUIRE(!a.path.empty());
  CHECK(a.path.front() == std::pair<int, int>{0, 0});
  CHECK(a.path.back() == std::pair<int, int>{n - 1, m - 1});
  for (std::size_t k = 1; k < a.path.size(); ++k) {
    const int di = a.path[k].first - a.path[k - 1].first;
    const int dj = a.path[k].second - a.path[k - 1].second;
    CHECK(((di == 1 && dj == 0) || (di == 0 && dj == 1) || (di == 1 && dj == 1)));
  }
  REQUIRE(a.mapping.size() == static_cast<std::size_t>(n));
  for (int i = 1; i < n; ++i) CHECK(a.mapping[static_cast<std::size_t>(i)] >= a.mapping[static_cast<std::size_t>(i - 1)]);
  for (const auto& [i, j] : a.path) CHECK(a.mapping[static_cast<std::size_t>(i)] <= j);
}

}  // namespace

TEST_CASE("emg_cost") {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd x = gaussian(4, 6, rng);
  const CostMatrix self = emg_cost(emg_seq(x), emg_seq(x));
  CHECK(self.diagonal().isZero());

  Eigen::MatrixXd s(2, 1), v(1, 1);
  s << 0, 1;
  v << 0;
  const CostMatrix c = emg_cost(emg_seq(s), emg_seq(v));
  CHECK(c.rows() == 2);
  CHECK(c.cols() == 1);
  CHECK(c(0, 0) == 0.0);
  CHECK(c(1, 0) == 1.0);

  const Eigen::MatrixXd a = gaussian(5, 112, rng), b = gaussian(7, 112, rng);
  const CostMatrix r = emg_cost(emg_seq(a), emg_seq(b));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) {
      double acc = 0;
      for (int d = 0; d < 112; ++d) acc += (a(i, d) - b(j, d)) * (a(i, d) - b(j, d));
      CHECK(r(i, j) == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));
    }

  CHECK_THROWS_AS(emg_cost(emg_seq(gaussian(2, 3, rng)), emg_seq(gaussian(2, 4, rng))), Error);
}

TEST_CASE("dtw examples") {
  SUBCASE("identical sequences") {
    Eigen::MatrixXd s(3, 1);
    s << 0, 1, 2;
    const auto a = dtw(emg_cost(emg_seq(s), emg_seq(s)));
    CHECK(a.path == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});
    CHECK(a.mapping == std::vector<int>{0, 1, 2});
    CHECK(a.total_cost == 0.0);
  }
  SUBCASE("s1=[0,0,1] vs s2=[0,1]") {
    Eigen::MatrixXd s1(3, 1), s2(2, 1);
    s1 << 0, 0, 1;
    s2 << 0, 1;
    const CostMatrix c = pairwise_distances(s1, s2);
    const auto a = dtw(c);
    CHECK(oracle::exhaustive_dtw(c) == 0.0);
    CHECK(a.total_cost == 0.0);
    CHECK(a.path == std::vector<std::pair<int, int>>{{0, 0}, {1, 0}, {2, 1}});
    CHECK(a.mapping == std::vector<int>{0, 0, 1});
  }
  SUBCASE("first-pair rule on a constructed path") {
    CHECK(first_pair_mapping({{0, 0}, {0, 1}, {1, 2}}, 2) == std::vector<int>{0, 2});
  }
  SUBCASE("single cell") {
    CostMatrix c(1, 1);
    c << 2.5;
    const auto a = dtw(c);
    CHECK(a.total_cost == 2.5);
    CHECK(a.mapping == std::vector<int>{0});
  }
  CHECK_THROWS_AS(dtw(CostMatrix(0, 3)), Error);
}

TEST_CASE("dtw matches exhaustive enumeration and is transpose-symmetric") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> size(1, 7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = size(rng), m = size(rng);
    CostMatrix c(n, m);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
    const auto a = dtw(c);
    CHECK(a.total_cost == doctest::Approx(oracle::exhaustive_dtw(c)).epsilon(1e-12));
    CHECK(oracle::path_cost(c, a.path) == doctest::Approx(a.total_cost).epsilon(1e-12));
    CHECK(dtw(c.transpose()).total_cost == doctest::Approx(a.total_cost).epsilon(1e-12));
    check_path_invariants(a, n, m);
  }
}

TEST_CASE("fit_cca") {
  std::mt19937_64 rng(7);
  SUBCASE("perfect linear relation") {
    const Eigen::MatrixXd v1 = gaussian(500, 1, rng);
    const Eigen::MatrixXd v2 = (2.0 * v1).array() + 1.0;
    const auto p = fit_cca(v1, v2, 1);
    CHECK(std::abs(p.correlations(0) - 1.0) <= 1e-9);
  }
  SUBCASE("independent sides have small correlations") {
    const auto p = fit_cca(gaussian(10000, 4, rng), gaussian(10000, 4, rng), 4);
    CHECK(p.correlations(0) < 0.1);
  }
  SUBCASE("correlated data agrees with the generalized-eigenproblem oracle") {
    const Eigen::MatrixXd z = gaussian(3000, 3, rng);
    const Eigen::MatrixXd x = z * gaussian(3, 6, rng) + 0.7 * gaussian(3000, 6, rng);
    const Eigen::MatrixXd y = z * gaussian(3, 6, rng) + 0.7 * gaussian(3000, 6, rng);
    const auto p = fit_cca(x, y, 6);
    const Eigen::VectorXd expected = oracle::cca_correlations(x, y);
    CHECK((p.correlations - expected).cwiseAbs().maxCoeff() < 1e-6);
    for (int k = 1; k < p.dims(); ++k) CHECK(p.correlations(k) <= p.correlations(k - 1));

    // Projected fitting data: unit variance and the reported correlation.
    const Eigen::MatrixXd ps = p.project_s(x), pv = p.project_v(y);
    for (int k = 0; k < p.dims(); ++k) {
      const double vs = ps.col(k).squaredNorm() / (ps.rows() - 1);
      const double vv = pv.col(k).squaredNorm() / (pv.rows() - 1);
      CHECK(std::abs(vs - 1.0) < 1e-6);
      CHECK(std::abs(vv - 1.0) < 1e-6);
      CHECK(ps.col(k).dot(pv.col(k)) / (ps.rows() - 1) == doctest::Approx(p.correlations(k)).epsilon(1e-9));
    }

    // Affine invariance of the correlations.
    const Eigen::MatrixXd a = gaussian(6, 6, rng) + 3.0 * Eigen::MatrixXd::Identity(6, 6);
    const Eigen::MatrixXd xt = (x * a).rowwise() + Eigen::RowVectorXd::Constant(6, 4.0);
    const auto pt = fit_cca(xt, y, 6);
    CHECK((pt.correlations - p.correlations).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK_THROWS_AS(fit_cca(gaussian(5, 8, rng), gaussian(5, 8, rng), 2), Error);
  CHECK_THROWS_AS(fit_cca(Eigen::MatrixXd::Zero(50, 2), gaussian(50, 2, rng), 1), Error);
}

TEST_CASE("cca_cost and full_cost") {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd x = gaussian(400, 112, rng), y = x + 0.5 * gaussian(400, 112, rng);
  const auto proj = fit_cca(x, y, 15);
  CHECK(proj.proj_s.cols() == 15);
  CHECK(proj.project_s(x.topRows(3)).cols() == 15);

  const Eigen::MatrixXd es = gaussian(6, 112, rng), ev = gaussian(8, 112, rng);
  const CostMatrix cca = cca_cost(emg_seq(es), emg_seq(ev), proj);
  CHECK(cca.isApprox(pairwise_distances(proj.project_s(es), proj.project_v(ev))));

  CcaProjection same = proj;
  same.proj_v = same.proj_s;
  same.mean_v = same.mean_s;
  CHECK(cca_cost(emg_seq(es), emg_seq(es), same).diagonal().cwiseAbs().maxCoeff() < 1e-12);

  const Eigen::MatrixXd as = gaussian(6, 26, rng), av = gaussian(8, 26, rng);
  CHECK(full_cost(emg_seq(es), emg_seq(ev), mfcc_seq(as), mfcc_seq(av), proj, 0.0) == cca);
  CHECK(full_cost(emg_seq(es), emg_seq(ev), mfcc_seq(Eigen::MatrixXd::Zero(6, 26)),
                  mfcc_seq(Eigen::MatrixXd::Zero(8, 26)), proj, 10.0) == cca);

  const CostMatrix full = full_cost(emg_seq(es), emg_seq(ev), mfcc_seq(as), mfcc_seq(av), proj, 10.0);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(full(i, j) == doctest::Approx(cca(i, j) + 10.0 * (as.row(i) - av.row(j)).norm()).epsilon(1e-12));

  CostMatrix prev = cca;
  for (double lambda : {0.5, 1.0, 4.0, 10.0, 30.0}) {
    const CostMatrix c = full_cost(emg_seq(es), emg_seq(ev), mfcc_seq(as), mfcc_seq(av), proj, lambda);
    CHECK((c.array() >= prev.array()).all());
    prev = c;
  }
  CHECK_THROWS_AS(full_cost(emg_seq(es), emg_seq(ev), mfcc_seq(gaussian(5, 26, rng)), mfcc_seq(av), proj, 1.0),
                  Error);
}

TEST_CASE("transfer_targets") {
  Eigen::MatrixXd av(2, 26);
  av.row(0).setConstant(1.0);
  av.row(1).setConstant(2.0);
  const auto t = transfer_targets(mfcc_seq(av), {0, 0, 1});
  CHECK(t.frames() == 3);
  CHECK(t.data.row(0) == av.row(0));
  CHECK(t.data.row(1) == av.row(0));
  CHECK(t.data.row(2) == av.row(1));
  CHECK(transfer_targets(mfcc_seq(av), {0, 1}).data == av);
  CHECK_THROWS_AS(transfer_targets(mfcc_seq(av), {0, 2}), Error);
}

TEST_CASE("alignment records serialize") {
  CostMatrix c(3, 4);
  c << 1, 2, 3, 4, 2, 1, 2, 3, 3, 2, 1, 0.5;
  AlignmentRecord rec{"utt", CostType::full, 10.0, dtw(c)};
  const auto back = alignment_from_json(nlohmann::json::parse(to_json(rec).dump()));
  CHECK(back.utterance_id == "utt");
  CHECK(back.cost == CostType::full);
  CHECK(back.alignment.mapping == rec.alignment.mapping);
  CHECK(back.alignment.path == rec.alignment.path);
  CHECK(back.alignment.total_cost == rec.alignment.total_cost);
}
