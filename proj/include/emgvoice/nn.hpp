#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace emgvoice::nn {

// A named rows x cols slice of a flat parameter vector, stored column-major.
struct Block {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
};

class Layout {
public:
  Block add(const std::string& name, Eigen::Index rows, Eigen::Index cols = 1);
  Eigen::Index size() const { return size_; }
  const std::vector<Block>& blocks() const { return blocks_; }

private:
  std::vector<Block> blocks_;
  Eigen::Index size_ = 0;
};

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;

inline ConstMatMap view(const Eigen::VectorXd& p, const Block& b) {
  return ConstMatMap(p.data() + b.offset, b.rows, b.cols);
}
inline MatMap view(Eigen::VectorXd& p, const Block& b) { return MatMap(p.data() + b.offset, b.rows, b.cols); }

void fill_uniform(Eigen::VectorXd& p, const Block& b, double bound, std::mt19937_64& rng);
void fill_normal(Eigen::VectorXd& p, const Block& b, double stddev, std::mt19937_64& rng);

// Gate order i, f, g, o. w: 4H x in, u: 4H x H, b: 4H.
struct LstmBlocks {
  Block w, u, b;
  int input = 0;
  int hidden = 0;
};

LstmBlocks add_lstm(Layout& layout, const std::string& prefix, int input, int hidden);
void init_lstm(Eigen::VectorXd& p, const LstmBlocks& l, std::mt19937_64& rng);

// Time runs along columns throughout: x is in x T, h is H x T.
struct LstmCache {
  Eigen::MatrixXd x;      // inputs in processing order
  Eigen::MatrixXd gates;  // 4H x T activations
  Eigen::MatrixXd c;      // H x T
  Eigen::MatrixXd h;      // H x T, processing order
  bool reverse = false;
};

Eigen::MatrixXd lstm_forward(const Eigen::VectorXd& p, const LstmBlocks& l, const Eigen::MatrixXd& x, bool reverse,
                             LstmCache* cache);

// Accumulates parameter gradients into `grad`; returns dL/dx.
Eigen::MatrixXd lstm_backward(const Eigen::VectorXd& p, const LstmBlocks& l, const LstmCache& cache,
                              const Eigen::MatrixXd& dh, Eigen::VectorXd& grad);

struct BiLstmBlocks {
  LstmBlocks fwd, bwd;
};

struct BiLstmCache {
  LstmCache fwd, bwd;
};

BiLstmBlocks add_bilstm(Layout& layout, const std::string& prefix, int input, int hidden);
void init_bilstm(Eigen::VectorXd& p, const BiLstmBlocks& l, std::mt19937_64& rng);

// Output stacks forward states over backward states: 2H x T.
Eigen::MatrixXd bilstm_forward(const Eigen::VectorXd& p, const BiLstmBlocks& l, const Eigen::MatrixXd& x,
                               BiLstmCache* cache);
Eigen::MatrixXd bilstm_backward(const Eigen::VectorXd& p, const BiLstmBlocks& l, const BiLstmCache& cache,
                                const Eigen::MatrixXd& dh, Eigen::VectorXd& grad);

struct AdamConfig {
  double rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
public:
  Adam() = default;
  Adam(Eigen::Index n, AdamConfig cfg);

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

  double rate() const { return cfg_.rate; }
  void set_rate(double r) { cfg_.rate = r; }
  std::int64_t steps() const { return t_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }

private:
  AdamConfig cfg_;
  Eigen::VectorXd m_, v_;
  std::int64_t t_ = 0;
};

// Scales grad in place when its norm exceeds max_norm; returns the norm before clipping.
double clip_global_norm(Eigen::VectorXd& grad, double max_norm);

// Halves (by `factor`) the rate once `patience` consecutive epochs pass
// without a strict improvement of the monitored loss.
class PlateauSchedule {
public:
  PlateauSchedule(double rate, double factor = 0.5, int patience = 5);

  // Returns true when this call reduced the rate.
  bool observe(double loss);

  double rate() const { return rate_; }
  double best() const { return best_; }
  int stale_epochs() const { return stale_; }

private:
  double rate_;
  double factor_;
  int patience_;
  double best_;
  int stale_ = 0;
};

// Deterministic 64-bit seed derivation (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = hardware
// concurrency). fn must only write to state owned by index i.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace emgvoice::nn
