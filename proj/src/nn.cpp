#include "emgvoice/nn.hpp"

#include "emgvoice/error.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace emgvoice::nn {

Block Layout::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  Block b{name, size_, rows, cols};
  size_ += rows * cols;
  blocks_.push_back(b);
  return b;
}

void fill_uniform(Eigen::VectorXd& p, const Block& b, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < b.size(); ++i) p(b.offset + i) = u(rng);
}

void fill_normal(Eigen::VectorXd& p, const Block& b, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, stddev);
  for (Eigen::Index i = 0; i < b.size(); ++i) p(b.offset + i) = g(rng);
}

LstmBlocks add_lstm(Layout& layout, const std::string& prefix, int input, int hidden) {
  LstmBlocks l;
  l.input = input;
  l.hidden = hidden;
  l.w = layout.add(prefix + ".w", 4 * hidden, input);
  l.u = layout.add(prefix + ".u", 4 * hidden, hidden);
  l.b = layout.add(prefix + ".b", 4 * hidden);
  return l;
}

void init_lstm(Eigen::VectorXd& p, const LstmBlocks& l, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(l.hidden));
  fill_uniform(p, l.w, k, rng);
  fill_uniform(p, l.u, k, rng);
  fill_uniform(p, l.b, k, rng);
}

namespace {

Eigen::MatrixXd reversed_columns(const Eigen::MatrixXd& m) { return m.rowwise().reverse(); }

}  // namespace

Eigen::MatrixXd lstm_forward(const Eigen::VectorXd& p, const LstmBlocks& l, const Eigen::MatrixXd& x, bool reverse,
                             LstmCache* cache) {
  if (x.rows() != l.input)
    throw data_error("recurrent layer expects " + std::to_string(l.input) + " inputs, got " +
                     std::to_string(x.rows()));
  const int h_dim = l.hidden;
  const Eigen::Index steps = x.cols();
  const auto w = view(p, l.w);
  const auto u = view(p, l.u);
  const auto b = view(p, l.b);

  Eigen::MatrixXd xs = reverse ? reversed_columns(x) : x;
  Eigen::MatrixXd z = w * xs;
  z.colwise() += b.col(0);

  Eigen::MatrixXd gates(4 * h_dim, steps), c(h_dim, steps), h(h_dim, steps);
  Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(h_dim), c_prev = Eigen::VectorXd::Zero(h_dim);
  Eigen::VectorXd a(4 * h_dim);
  for (Eigen::Index t = 0; t < steps; ++t) {
    a.noalias() = z.col(t) + u * h_prev;
    for (int k = 0; k < h_dim; ++k) {
      const double i = sigmoid(a(k));
      const double f = sigmoid(a(h_dim + k));
      const double g = std::tanh(a(2 * h_dim + k));
      const double o = sigmoid(a(3 * h_dim + k));
      const double ct = f * c_prev(k) + i * g;
      gates(k, t) = i;
      gates(h_dim + k, t) = f;
      gates(2 * h_dim + k, t) = g;
      gates(3 * h_dim + k, t) = o;
      c(k, t) = ct;
      h(k, t) = o * std::tanh(ct);
    }
    h_prev = h.col(t);
    c_prev = c.col(t);
  }

  Eigen::MatrixXd out = reverse ? reversed_columns(h) : h;
  if (cache) {
    cache->x = std::move(xs);
    cache->gates = std::move(gates);
    cache->c = std::move(c);
    cache->h = std::move(h);
    cache->reverse = reverse;
  }
  return out;
}

Eigen::MatrixXd lstm_backward(const Eigen::VectorXd& p, const LstmBlocks& l, const LstmCache& cache,
                              const Eigen::MatrixXd& dh_in, Eigen::VectorXd& grad) {
  const int h_dim = l.hidden;
  const Eigen::Index steps = cache.h.cols();
  const auto w = view(p, l.w);
  const auto u = view(p, l.u);
  const Eigen::MatrixXd dh = cache.reverse ? reversed_columns(dh_in) : dh_in;

  Eigen::MatrixXd dz(4 * h_dim, steps);
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(h_dim), dc_next = Eigen::VectorXd::Zero(h_dim);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    for (int k = 0; k < h_dim; ++k) {
      const double i = cache.gates(k, t);
      const double f = cache.gates(h_dim + k, t);
      const double g = cache.gates(2 * h_dim + k, t);
      const double o = cache.gates(3 * h_dim + k, t);
      const double tc = std::tanh(cache.c(k, t));
      const double c_prev = t > 0 ? cache.c(k, t - 1) : 0.0;
      const double dht = dh(k, t) + dh_next(k);
      const double dc = dht * o * (1.0 - tc * tc) + dc_next(k);
      dz(k, t) = dc * g * i * (1.0 - i);
      dz(h_dim + k, t) = dc * c_prev * f * (1.0 - f);
      dz(2 * h_dim + k, t) = dc * i * (1.0 - g * g);
      dz(3 * h_dim + k, t) = dht * tc * o * (1.0 - o);
      dc_next(k) = dc * f;
    }
    dh_next.noalias() = u.transpose() * dz.col(t);
  }

  // Each block receives exactly one addition per call, so summing
  // per-sequence gradients in order is independent of how they were batched.
  view(grad, l.w) += (dz * cache.x.transpose()).eval();
  view(grad, l.b) += dz.rowwise().sum();
  if (steps > 1) view(grad, l.u) += (dz.rightCols(steps - 1) * cache.h.leftCols(steps - 1).transpose()).eval();
  Eigen::MatrixXd dx = w.transpose() * dz;
  return cache.reverse ? reversed_columns(dx) : dx;
}

BiLstmBlocks add_bilstm(Layout& layout, const std::string& prefix, int input, int hidden) {
  BiLstmBlocks l;
  l.fwd = add_lstm(layout, prefix + ".fwd", input, hidden);
  l.bwd = add_lstm(layout, prefix + ".bwd", input, hidden);
  return l;
}

void init_bilstm(Eigen::VectorXd& p, const BiLstmBlocks& l, std::mt19937_64& rng) {
  init_lstm(p, l.fwd, rng);
  init_lstm(p, l.bwd, rng);
}

Eigen::MatrixXd bilstm_forward(const Eigen::VectorXd& p, const BiLstmBlocks& l, const Eigen::MatrixXd& x,
                               BiLstmCache* cache) {
  const int h_dim = l.fwd.hidden;
  Eigen::MatrixXd out(2 * h_dim, x.cols());
  out.topRows(h_dim) = lstm_forward(p, l.fwd, x, false, cache ? &cache->fwd : nullptr);
  out.bottomRows(h_dim) = lstm_forward(p, l.bwd, x, true, cache ? &cache->bwd : nullptr);
  return out;
}

Eigen::MatrixXd bilstm_backward(const Eigen::VectorXd& p, const BiLstmBlocks& l, const BiLstmCache& cache,
                                const Eigen::MatrixXd& dh, Eigen::VectorXd& grad) {
  const int h_dim = l.fwd.hidden;
  Eigen::MatrixXd dx = lstm_backward(p, l.fwd, cache.fwd, dh.topRows(h_dim), grad);
  dx += lstm_backward(p, l.bwd, cache.bwd, dh.bottomRows(h_dim), grad);
  return dx;
}

Adam::Adam(Eigen::Index n, AdamConfig cfg)
    : cfg_(cfg), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {
  if (!(cfg.rate > 0)) throw config_error("learning rate must be positive");
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != m_.size() || params.size() != m_.size()) throw data_error("optimizer size mismatch");
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  params.array() -= cfg_.rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

double clip_global_norm(Eigen::VectorXd& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm) grad *= max_norm / norm;
  return norm;
}

PlateauSchedule::PlateauSchedule(double rate, double factor, int patience)
    : rate_(rate), factor_(factor), patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (!(rate > 0)) throw config_error("learning rate must be positive");
  if (!(factor > 0 && factor < 1)) throw config_error("decay factor must lie in (0, 1)");
  if (patience < 1) throw config_error("plateau patience must be at least 1");
}

bool PlateauSchedule::observe(double loss) {
  if (loss < best_) {
    best_ = loss;
    stale_ = 0;
    return false;
  }
  if (++stale_ < patience_) return false;
  rate_ *= factor_;
  stale_ = 0;
  return true;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::size_t threads = workers > 0 ? static_cast<std::size_t>(workers) : std::thread::hardware_concurrency();
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < threads; ++k)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace emgvoice::nn
