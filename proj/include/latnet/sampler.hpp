#ifndef LATNET_SAMPLER_HPP
#define LATNET_SAMPLER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <thread>
#include <utility>
#include <vector>

#include "latnet/errors.hpp"
#include "latnet/matrix.hpp"
#include "latnet/rng.hpp"

namespace latnet {

/// Differentiable log-density interface consumed by the sampler. The
/// callable returns the log density and fills the gradient; -inf rejects.
struct TargetFn {
  std::size_t dim = 0;
  std::function<double(const std::vector<double>&, std::vector<double>&)> value_and_grad;
};

struct NutsConfig {
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::size_t warmup_iters = 1000;
  std::size_t sample_iters = 1000;
  std::size_t chains = 4;
  double init_scale = 2.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw InvalidCount("NutsConfig: target_accept must lie in (0,1)");
    if (max_tree_depth < 1 || max_tree_depth > 14)
      throw InvalidCount("NutsConfig: max_tree_depth must lie in [1,14]");
    if (warmup_iters < 150)
      throw InvalidCount("NutsConfig: adaptation needs at least 150 warmup iterations");
    if (sample_iters == 0) throw InvalidCount("NutsConfig: sample_iters must be >= 1");
    if (chains == 0) throw InvalidCount("NutsConfig: chains must be >= 1");
    if (!(init_scale > 0.0)) throw InvalidCount("NutsConfig: init_scale must be positive");
  }
};

struct MassMatrix {
  std::vector<double> diagonal;  // mass per coordinate; kinetic = r^2 / (2m)
};

struct PhasePoint {
  std::vector<double> z, r, grad;
  double logp = 0.0;
};

struct ChainTrace {
  int chain_id = 0;
  std::uint64_t seed = 0;
  DenseMatrix draws;  // sample_iters x dim
  std::vector<double> log_posterior, step_size, accept_stat;
  std::vector<int> tree_depth;
  std::vector<char> divergent;
  std::vector<double> initial_state;
  double adapted_step = 0.0;
  std::vector<double> mass_diagonal;
  std::size_t warmup_divergences = 0;
  std::size_t divergences = 0;
  double mean_accept = 0.0;
};

inline double kinetic_energy(const std::vector<double>& r, const MassMatrix& mass) {
  double k = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) k += r[i] * r[i] / mass.diagonal[i];
  return 0.5 * k;
}

inline PhasePoint leapfrog(const TargetFn& target, const PhasePoint& from, double step,
                           const MassMatrix& mass) {
  const std::size_t dim = target.dim;
  const double half = 0.5 * step;
  PhasePoint next;
  next.r.resize(dim);
  next.z.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) next.r[i] = from.r[i] + half * from.grad[i];
  for (std::size_t i = 0; i < dim; ++i) next.z[i] = from.z[i] + step * next.r[i] / mass.diagonal[i];
  next.logp = target.value_and_grad(next.z, next.grad);
  for (std::size_t i = 0; i < dim; ++i) next.r[i] += half * next.grad[i];
  return next;
}

struct StepStats {
  int depth = 0;
  bool divergent = false;
  double accept = 0.0;
  std::size_t n_leapfrog = 0;
  double logp = 0.0;
};

namespace detail {

constexpr double kDivergenceEnergy = 1000.0;

inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline bool is_turning(const PhasePoint& bwd, const PhasePoint& fwd, const MassMatrix& mass) {
  double dot_bwd = 0.0, dot_fwd = 0.0;
  for (std::size_t i = 0; i < bwd.z.size(); ++i) {
    const double delta = fwd.z[i] - bwd.z[i];
    dot_bwd += delta * bwd.r[i] / mass.diagonal[i];
    dot_fwd += delta * fwd.r[i] / mass.diagonal[i];
  }
  return dot_bwd <= 0.0 || dot_fwd <= 0.0;
}

struct Subtree {
  PhasePoint bwd, fwd;  // endpoints in trajectory-time order
  std::vector<double> z_prop, grad_prop;
  double logp_prop = 0.0;
  double log_sum_w = -std::numeric_limits<double>::infinity();
  double sum_accept = 0.0;
  std::size_t n_leapfrog = 0;
  bool divergent = false;
  bool turning = false;
};

inline Subtree build_tree(const TargetFn& target, int depth, int direction,
                          const PhasePoint& from, double h0, double step,
                          const MassMatrix& mass, Rng& rng) {
  if (depth == 0) {
    Subtree leaf;
    PhasePoint next = leapfrog(target, from, direction * step, mass);
    const double h = -next.logp + kinetic_energy(next.r, mass);
    const double dh = h - h0;
    leaf.n_leapfrog = 1;
    if (std::isfinite(dh)) {
      leaf.sum_accept = std::min(1.0, std::exp(-dh));
      leaf.divergent = std::abs(dh) > kDivergenceEnergy;
      if (!leaf.divergent) leaf.log_sum_w = -dh;
    } else {
      leaf.divergent = true;
    }
    leaf.z_prop = next.z;
    leaf.grad_prop = next.grad;
    leaf.logp_prop = next.logp;
    leaf.bwd = next;
    leaf.fwd = std::move(next);
    return leaf;
  }

  Subtree inner = build_tree(target, depth - 1, direction, from, h0, step, mass, rng);
  if (inner.divergent || inner.turning) return inner;
  const PhasePoint& edge = direction > 0 ? inner.fwd : inner.bwd;
  Subtree outer = build_tree(target, depth - 1, direction, edge, h0, step, mass, rng);
  inner.n_leapfrog += outer.n_leapfrog;
  inner.sum_accept += outer.sum_accept;
  if (outer.divergent || outer.turning) {
    inner.divergent = outer.divergent;
    inner.turning = outer.turning;
    return inner;
  }
  // unbiased multinomial draw between the two halves
  const double total = log_add_exp(inner.log_sum_w, outer.log_sum_w);
  if (std::log(rng.uniform()) < outer.log_sum_w - total) {
    inner.z_prop = std::move(outer.z_prop);
    inner.grad_prop = std::move(outer.grad_prop);
    inner.logp_prop = outer.logp_prop;
  }
  inner.log_sum_w = total;
  if (direction > 0)
    inner.fwd = std::move(outer.fwd);
  else
    inner.bwd = std::move(outer.bwd);
  inner.turning = is_turning(inner.bwd, inner.fwd, mass);
  return inner;
}

}  // namespace detail

/// One NUTS transition: doubling trajectory with multinomial selection,
/// stopping on a U-turn, divergence, or the depth cap. Mutates the state to
/// the accepted draw and returns sampler statistics.
inline StepStats nuts_step(const TargetFn& target, PhasePoint& state, double step,
                           const MassMatrix& mass, Rng& rng, int max_depth) {
  const std::size_t dim = target.dim;
  state.r.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) state.r[i] = std::sqrt(mass.diagonal[i]) * rng.normal();
  const double h0 = -state.logp + kinetic_energy(state.r, mass);

  PhasePoint bwd = state, fwd = state;
  std::vector<double> z_sel = state.z, grad_sel = state.grad;
  double logp_sel = state.logp;
  double log_sum_w = 0.0;
  StepStats stats;
  double sum_accept = 0.0;
  std::size_t n_leapfrog = 0;

  for (int depth = 0; depth < max_depth; ++depth) {
    const int direction = rng.uniform() < 0.5 ? -1 : 1;
    detail::Subtree sub = detail::build_tree(target, depth, direction,
                                             direction > 0 ? fwd : bwd, h0, step, mass, rng);
    sum_accept += sub.sum_accept;
    n_leapfrog += sub.n_leapfrog;
    if (sub.divergent) stats.divergent = true;
    if (sub.divergent || sub.turning) break;
    // biased progressive selection favours the fresh half of the trajectory
    if (std::log(rng.uniform()) < sub.log_sum_w - log_sum_w) {
      z_sel = std::move(sub.z_prop);
      grad_sel = std::move(sub.grad_prop);
      logp_sel = sub.logp_prop;
    }
    log_sum_w = detail::log_add_exp(log_sum_w, sub.log_sum_w);
    if (direction > 0)
      fwd = std::move(sub.fwd);
    else
      bwd = std::move(sub.bwd);
    stats.depth = depth + 1;
    if (detail::is_turning(bwd, fwd, mass)) break;
  }

  state.z = std::move(z_sel);
  state.grad = std::move(grad_sel);
  state.logp = logp_sel;
  stats.accept = n_leapfrog > 0 ? sum_accept / static_cast<double>(n_leapfrog) : 0.0;
  stats.n_leapfrog = n_leapfrog;
  stats.logp = state.logp;
  return stats;
}

/// Nesterov dual averaging of log step size toward a target acceptance.
class DualAverage {
 public:
  DualAverage(double initial_step, double target)
      : mu_(std::log(10.0 * initial_step)), log_eps_(std::log(initial_step)), target_(target) {}

  void update(double accept) {
    ++iteration_;
    const double m = static_cast<double>(iteration_);
    const double eta_h = 1.0 / (m + kT0);
    h_bar_ = (1.0 - eta_h) * h_bar_ + eta_h * (target_ - accept);
    log_eps_ = mu_ - std::sqrt(m) / kGamma * h_bar_;
    const double eta = std::pow(m, -kKappa);
    log_eps_bar_ = eta * log_eps_ + (1.0 - eta) * log_eps_bar_;
  }

  double current() const { return std::exp(log_eps_); }
  double averaged() const { return std::exp(log_eps_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double mu_, log_eps_, log_eps_bar_ = 0.0, h_bar_ = 0.0, target_;
  std::size_t iteration_ = 0;
};

inline constexpr double kMinStepSize = 1e-10;
inline constexpr double kMaxStepSize = 1e7;

/// Doubles or halves an initial step until the one-step acceptance ratio
/// crosses one half.
inline double find_initial_step(const TargetFn& target, const PhasePoint& state,
                                const MassMatrix& mass, Rng& rng, double initial = 1.0) {
  PhasePoint probe = state;
  probe.r.resize(target.dim);
  for (std::size_t i = 0; i < target.dim; ++i)
    probe.r[i] = std::sqrt(mass.diagonal[i]) * rng.normal();
  const double h0 = -probe.logp + kinetic_energy(probe.r, mass);
  auto ratio_at = [&](double eps) {
    const PhasePoint next = leapfrog(target, probe, eps, mass);
    const double a = std::exp(h0 - (-next.logp + kinetic_energy(next.r, mass)));
    return std::isnan(a) ? 0.0 : a;
  };
  double eps = initial;
  double a = ratio_at(eps);
  const bool increase = a > 0.5;
  while (increase ? a > 0.5 : a < 0.5) {
    eps *= increase ? 2.0 : 0.5;
    if (eps < kMinStepSize)
      throw AdaptationFailed("find_initial_step: step size collapsed below 1e-10");
    if (eps > kMaxStepSize) break;
    a = ratio_at(eps);
  }
  return eps;
}

struct AdaptSchedule {
  std::size_t init_end = 75;
  std::size_t slow_end = 0;
  std::vector<std::size_t> window_ends;  // mass updates after these many warmup iterations
};

inline AdaptSchedule adapt_schedule(std::size_t warmup_iters) {
  if (warmup_iters < 150)
    throw InvalidCount("adapt_schedule: at least 150 warmup iterations required");
  AdaptSchedule out;
  out.slow_end = warmup_iters - 50;
  std::size_t pos = out.init_end;
  std::size_t width = 25;
  while (pos + width <= out.slow_end) {
    std::size_t end = pos + width;
    if (pos + 3 * width > out.slow_end) end = out.slow_end;
    out.window_ends.push_back(end);
    pos = end;
    width *= 2;
  }
  return out;
}

namespace detail {

class RunningVariance {
 public:
  void reset(std::size_t dim) {
    count_ = 0;
    mean_.assign(dim, 0.0);
    m2_.assign(dim, 0.0);
  }
  void add(const std::vector<double>& z) {
    ++count_;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double delta = z[i] - mean_[i];
      mean_[i] += delta / static_cast<double>(count_);
      m2_[i] += delta * (z[i] - mean_[i]);
    }
  }
  std::size_t count() const { return count_; }
  std::vector<double> variance() const {
    std::vector<double> out(mean_.size(), 0.0);
    if (count_ > 1)
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = m2_[i] / static_cast<double>(count_ - 1);
    return out;
  }

 private:
  std::size_t count_ = 0;
  std::vector<double> mean_, m2_;
};

}  // namespace detail

inline ChainTrace run_chain(const TargetFn& target, const NutsConfig& cfg, int chain_id,
                            const std::vector<double>* init) {
  const std::size_t dim = target.dim;
  ChainTrace trace;
  trace.chain_id = chain_id;
  trace.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(chain_id));
  Rng rng(trace.seed);

  PhasePoint state;
  if (init != nullptr) {
    if (init->size() != dim) throw DimensionMismatch("run_chain: init length mismatch");
    state.z = *init;
    state.logp = target.value_and_grad(state.z, state.grad);
    if (!std::isfinite(state.logp) || !std::all_of(state.grad.begin(), state.grad.end(),
                                                   [](double g) { return std::isfinite(g); }))
      throw InitializationFailed("run_chain: explicit init has non-finite posterior");
  } else {
    bool found = false;
    state.z.resize(dim);
    for (int attempt = 0; attempt < 100 && !found; ++attempt) {
      for (std::size_t i = 0; i < dim; ++i)
        state.z[i] = (2.0 * rng.uniform() - 1.0) * cfg.init_scale;
      state.logp = target.value_and_grad(state.z, state.grad);
      found = std::isfinite(state.logp) &&
              std::all_of(state.grad.begin(), state.grad.end(),
                          [](double g) { return std::isfinite(g); });
    }
    if (!found)
      throw InitializationFailed("run_chain: no finite starting point in 100 attempts");
  }
  trace.initial_state = state.z;

  MassMatrix mass{std::vector<double>(dim, 1.0)};
  const AdaptSchedule schedule = adapt_schedule(cfg.warmup_iters);
  DualAverage averager(find_initial_step(target, state, mass, rng), cfg.target_accept);
  detail::RunningVariance accumulator;
  accumulator.reset(dim);
  std::size_t next_window = 0;

  for (std::size_t iter = 0; iter < cfg.warmup_iters; ++iter) {
    const double step = averager.current();
    if (step < kMinStepSize)
      throw AdaptationFailed("run_chain: step size collapsed during warmup");
    const StepStats stats = nuts_step(target, state, step, mass, rng, cfg.max_tree_depth);
    if (stats.divergent) ++trace.warmup_divergences;
    averager.update(stats.accept);
    const std::size_t done = iter + 1;
    if (done > schedule.init_end && done <= schedule.slow_end) accumulator.add(state.z);
    if (next_window < schedule.window_ends.size() && done == schedule.window_ends[next_window]) {
      const std::vector<double> variance = accumulator.variance();
      const double n = static_cast<double>(accumulator.count());
      for (std::size_t i = 0; i < dim; ++i) {
        const double regularized = (n / (n + 5.0)) * variance[i] + 5.0 / (n + 5.0);
        mass.diagonal[i] = 1.0 / regularized;
      }
      accumulator.reset(dim);
      ++next_window;
    }
  }

  const double final_step = averager.averaged();
  if (!(final_step >= kMinStepSize))
    throw AdaptationFailed("run_chain: adapted step size collapsed below 1e-10");
  trace.adapted_step = final_step;
  trace.mass_diagonal = mass.diagonal;

  trace.draws = DenseMatrix(cfg.sample_iters, dim);
  trace.log_posterior.reserve(cfg.sample_iters);
  trace.step_size.reserve(cfg.sample_iters);
  trace.accept_stat.reserve(cfg.sample_iters);
  trace.tree_depth.reserve(cfg.sample_iters);
  trace.divergent.reserve(cfg.sample_iters);
  double accept_total = 0.0;
  for (std::size_t iter = 0; iter < cfg.sample_iters; ++iter) {
    const StepStats stats = nuts_step(target, state, final_step, mass, rng, cfg.max_tree_depth);
    for (std::size_t i = 0; i < dim; ++i) trace.draws(iter, i) = state.z[i];
    trace.log_posterior.push_back(stats.logp);
    trace.step_size.push_back(final_step);
    trace.accept_stat.push_back(stats.accept);
    trace.tree_depth.push_back(stats.depth);
    trace.divergent.push_back(stats.divergent ? 1 : 0);
    if (stats.divergent) ++trace.divergences;
    accept_total += stats.accept;
  }
  trace.mean_accept = accept_total / static_cast<double>(cfg.sample_iters);
  return trace;
}

/// Runs all chains of a configuration; chains are independent and their
/// output does not depend on the scheduling.
inline std::vector<ChainTrace> run_chains(const TargetFn& target, const NutsConfig& cfg,
                                          const std::vector<double>* init = nullptr) {
  cfg.validate();
  if (target.dim == 0 || !target.value_and_grad)
    throw EmptyInput("run_chains: target is not set up");
  std::vector<ChainTrace> traces(cfg.chains);
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, cfg.chains));
  if (workers == 1) {
    for (std::size_t c = 0; c < cfg.chains; ++c)
      traces[c] = run_chain(target, cfg, static_cast<int>(c), init);
    return traces;
  }
  std::vector<std::exception_ptr> failures(cfg.chains);
  std::size_t launched = 0;
  while (launched < cfg.chains) {
    const std::size_t batch = std::min(workers, cfg.chains - launched);
    std::vector<std::thread> pool;
    pool.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t c = launched + b;
      pool.emplace_back([&, c]() {
        try {
          traces[c] = run_chain(target, cfg, static_cast<int>(c), init);
        } catch (...) {
          failures[c] = std::current_exception();
        }
      });
    }
    for (auto& worker : pool) worker.join();
    launched += batch;
  }
  for (const auto& failure : failures)
    if (failure) std::rethrow_exception(failure);
  return traces;
}

}  // namespace latnet

#endif  // LATNET_SAMPLER_HPP
