#include "mlab/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "mlab/errors.hpp"
#include "mlab/rng.hpp"
#include "mlab/vecops.hpp"

namespace mlab::oracle {

namespace {

bool completes(const MdpSpec& spec, int action, int next_len) {
  if (spec.eos_token && action == *spec.eos_token) return true;
  return next_len == spec.max_horizon;
}

// Adds the score of (state, action) under the given distribution into acc.
void add_score(std::span<double> acc, std::size_t row, int vocab,
               std::span<const double> p, int action, double sign) {
  for (int b = 0; b < vocab; ++b) acc[row + b] -= sign * p[b];
  acc[row + action] += sign;
}

struct GradDfs {
  const MdpSpec& spec;
  const PolicyParams& params;
  const EngineConfig& sampling;
  const EngineConfig& scoring;
  std::vector<double> total;
  std::vector<double> score_sum;
  std::vector<int> seq;
  State state;

  explicit GradDfs(const MdpSpec& s, const PolicyParams& p,
                   const EngineConfig& samp, const EngineConfig& scor)
      : spec(s), params(p), sampling(samp), scoring(scor),
        total(p.theta.size(), 0.0), score_sum(p.theta.size(), 0.0) {}

  void run() {
    for (int prompt = 0; prompt < static_cast<int>(spec.prompt_distribution.size());
         ++prompt) {
      const double pp = spec.prompt_distribution[prompt];
      if (pp <= 0.0) continue;
      state = State{prompt, {}};
      seq.clear();
      descend(pp);
    }
  }

  void descend(double prob) {
    const auto p_samp = token_distribution(params, sampling, state);
    const auto p_scor = token_distribution(params, scoring, state);
    const std::size_t row =
        static_cast<std::size_t>(feature_index(params, state)) * params.vocab_size;
    for (int a = 0; a < spec.vocab_size; ++a) {
      seq.push_back(a);
      add_score(score_sum, row, params.vocab_size, p_scor, a, 1.0);
      const double branch_prob = prob * p_samp[a];
      if (completes(spec, a, static_cast<int>(seq.size()))) {
        const double w = branch_prob * reward(spec, seq);
        if (w != 0.0) axpy(w, score_sum, total);
      } else {
        state.prefix.push_back(a);
        descend(branch_prob);
        state.prefix.pop_back();
      }
      add_score(score_sum, row, params.vocab_size, p_scor, a, -1.0);
      seq.pop_back();
    }
  }
};

}  // namespace

std::vector<double> exact_policy_gradient(const MdpSpec& spec,
                                          const PolicyParams& params,
                                          const EngineConfig& sampling_engine,
                                          const EngineConfig& scoring_engine) {
  spec.validate();
  params.validate();
  GradDfs dfs(spec, params, sampling_engine, scoring_engine);
  dfs.run();
  return std::move(dfs.total);
}

namespace {

struct EstimatorDfs {
  const MdpSpec& spec;
  const PolicyParams& params;
  const EnginePair& engines;
  EstimatorKind kind;
  double clip_c;
  bool token_level;
  std::vector<double> total;
  std::vector<double> score_sum;           // sum_t score_t
  std::vector<double> weighted_score_sum;  // sum_t f(rho_t) score_t
  std::vector<int> seq;
  State state;

  EstimatorDfs(const MdpSpec& s, const PolicyParams& p, const EnginePair& e,
               EstimatorKind k, double c)
      : spec(s), params(p), engines(e), kind(k), clip_c(c),
        token_level(k == EstimatorKind::is_token || k == EstimatorKind::tis_token ||
                    k == EstimatorKind::mis_token),
        total(p.theta.size(), 0.0), score_sum(p.theta.size(), 0.0),
        weighted_score_sum(p.theta.size(), 0.0) {}

  double token_factor(double rho) const {
    switch (kind) {
      case EstimatorKind::tis_seq:
      case EstimatorKind::tis_token:
        return std::min(rho, clip_c);
      case EstimatorKind::mis_seq:
      case EstimatorKind::mis_token:
        return rho <= clip_c ? rho : 0.0;
      default:
        return rho;
    }
  }

  void run() {
    for (int prompt = 0; prompt < static_cast<int>(spec.prompt_distribution.size());
         ++prompt) {
      const double pp = spec.prompt_distribution[prompt];
      if (pp <= 0.0) continue;
      state = State{prompt, {}};
      seq.clear();
      descend(pp, 1.0);
    }
  }

  void descend(double prob_mu, double rho_seq) {
    const auto mu = token_distribution(params, engines.rollout, state);
    const auto pi = token_distribution(params, engines.train, state);
    const std::size_t row =
        static_cast<std::size_t>(feature_index(params, state)) * params.vocab_size;
    for (int a = 0; a < spec.vocab_size; ++a) {
      if (mu[a] <= 0.0) continue;  // zero-probability branch contributes nothing
      seq.push_back(a);
      const double rho_t = pi[a] / mu[a];
      add_score(score_sum, row, params.vocab_size, pi, a, 1.0);
      const double f_t = token_level ? token_factor(rho_t) : 0.0;
      if (token_level && f_t != 0.0) {
        add_score(weighted_score_sum, row, params.vocab_size, pi, a, f_t);
      }
      const double branch_mu = prob_mu * mu[a];
      const double branch_rho = rho_seq * rho_t;
      if (completes(spec, a, static_cast<int>(seq.size()))) {
        const double r = reward(spec, seq);
        if (r != 0.0) {
          if (token_level) {
            axpy(branch_mu * r, weighted_score_sum, total);
          } else {
            axpy(branch_mu * r * token_factor(branch_rho), score_sum, total);
          }
        }
      } else {
        state.prefix.push_back(a);
        descend(branch_mu, branch_rho);
        state.prefix.pop_back();
      }
      if (token_level && f_t != 0.0) {
        add_score(weighted_score_sum, row, params.vocab_size, pi, a, -f_t);
      }
      add_score(score_sum, row, params.vocab_size, pi, a, -1.0);
      seq.pop_back();
    }
  }
};

}  // namespace

std::vector<double> exact_estimator_expectation(const MdpSpec& spec,
                                                const PolicyParams& params,
                                                const EnginePair& engines,
                                                EstimatorKind kind, double clip_c) {
  switch (kind) {
    case EstimatorKind::is_seq:
    case EstimatorKind::is_token:
      clip_c = std::numeric_limits<double>::infinity();
      break;
    case EstimatorKind::tis_seq:
    case EstimatorKind::tis_token:
    case EstimatorKind::mis_seq:
    case EstimatorKind::mis_token:
      if (!(clip_c > 0.0)) throw ConfigError("exact_estimator_expectation: C must be > 0");
      break;
    default:
      throw ContractError("exact_estimator_expectation: IS-family kinds only");
  }
  spec.validate();
  params.validate();
  EstimatorDfs dfs(spec, params, engines, kind, clip_c);
  dfs.run();
  return std::move(dfs.total);
}

namespace {

// Expected terminal reward under mu when continuing from the given state.
double expected_reward_mu(const MdpSpec& spec, const PolicyParams& params,
                          const EngineConfig& mu_engine, State& state,
                          std::vector<int>& seq) {
  const auto mu = token_distribution(params, mu_engine, state);
  double acc = 0.0;
  for (int a = 0; a < spec.vocab_size; ++a) {
    if (mu[a] <= 0.0) continue;
    seq.push_back(a);
    if (completes(spec, a, static_cast<int>(seq.size()))) {
      acc += mu[a] * reward(spec, seq);
    } else {
      state.prefix.push_back(a);
      acc += mu[a] * expected_reward_mu(spec, params, mu_engine, state, seq);
      state.prefix.pop_back();
    }
    seq.pop_back();
  }
  return acc;
}

void occupancy_rhs_dfs(const MdpSpec& spec, const PolicyParams& params,
                       const EnginePair& engines, State& state, std::vector<int>& seq,
                       double d_mu, std::vector<double>& rhs) {
  const auto mu = token_distribution(params, engines.rollout, state);
  const auto pi = token_distribution(params, engines.train, state);
  const std::size_t row =
      static_cast<std::size_t>(feature_index(params, state)) * params.vocab_size;
  for (int a = 0; a < spec.vocab_size; ++a) {
    if (mu[a] <= 0.0) continue;
    seq.push_back(a);
    const bool done = completes(spec, a, static_cast<int>(seq.size()));
    double q;
    if (done) {
      q = reward(spec, seq);
    } else {
      state.prefix.push_back(a);
      q = expected_reward_mu(spec, params, engines.rollout, state, seq);
      state.prefix.pop_back();
    }
    const double w = d_mu * mu[a] * q;
    if (w != 0.0) add_score(rhs, row, params.vocab_size, pi, a, w);
    if (!done) {
      state.prefix.push_back(a);
      occupancy_rhs_dfs(spec, params, engines, state, seq, d_mu * mu[a], rhs);
      state.prefix.pop_back();
    }
    seq.pop_back();
  }
}

}  // namespace

double verify_lemma1(const MdpSpec& spec, const PolicyParams& params,
                     const EnginePair& engines) {
  const auto lhs = exact_policy_gradient(spec, params, engines.rollout, engines.train);
  std::vector<double> rhs(params.theta.size(), 0.0);
  for (int prompt = 0; prompt < static_cast<int>(spec.prompt_distribution.size());
       ++prompt) {
    const double pp = spec.prompt_distribution[prompt];
    if (pp <= 0.0) continue;
    State state{prompt, {}};
    std::vector<int> seq;
    occupancy_rhs_dfs(spec, params, engines, state, seq, pp, rhs);
  }
  return l2_norm(sub(lhs, rhs));
}

OccupancyTable verify_lemma2(const MdpSpec& spec, const PolicyParams& params,
                             const EnginePair& engines) {
  spec.validate();
  params.validate();
  const auto states = enumerate_states(spec);
  OccupancyTable table;
  table.delta_max = realized_tv(params, engines, states).delta_max;

  struct Node {
    State state;
    double p_pi;
    double p_mu;
  };
  std::vector<Node> layer;
  for (int prompt = 0; prompt < static_cast<int>(spec.prompt_distribution.size());
       ++prompt) {
    const double pp = spec.prompt_distribution[prompt];
    if (pp > 0.0) layer.push_back({State{prompt, {}}, pp, pp});
  }
  for (int t = 0; t < spec.max_horizon; ++t) {
    double delta = 0.0;
    for (const auto& node : layer) delta += std::fabs(node.p_pi - node.p_mu);
    table.delta.push_back(delta);
    table.bound.push_back(2.0 * t * table.delta_max);
    if (delta > table.bound.back() + 1e-12) table.all_within_bound = false;
    if (t + 1 == spec.max_horizon) break;
    std::vector<Node> next;
    for (const auto& node : layer) {
      const auto pi = token_distribution(params, engines.train, node.state);
      const auto mu = token_distribution(params, engines.rollout, node.state);
      for (int a = 0; a < spec.vocab_size; ++a) {
        if (spec.eos_token && a == *spec.eos_token) continue;  // terminated mass leaves
        Node child;
        child.state = node.state;
        child.state.prefix.push_back(a);
        child.p_pi = node.p_pi * pi[a];
        child.p_mu = node.p_mu * mu[a];
        next.push_back(std::move(child));
      }
    }
    layer = std::move(next);
  }
  return table;
}

TheoremReport verify_theorem1(const MdpSpec& spec, const PolicyParams& params,
                              const EnginePair& engines) {
  TheoremReport report;
  report.vocab = spec.vocab_size;
  report.horizon = spec.max_horizon;
  const auto states = enumerate_states(spec);
  report.score_bound = score_bound(params, engines.train, states);
  report.delta_max = realized_tv(params, engines, states).delta_max;
  const auto ideal = exact_policy_gradient(spec, params, engines.train, engines.train);
  const auto actual = exact_policy_gradient(spec, params, engines.rollout, engines.train);
  report.lhs = l2_norm(sub(actual, ideal));
  report.rhs = 2.0 * report.score_bound * report.delta_max *
               static_cast<double>(spec.max_horizon) * spec.max_horizon;
  report.satisfied = report.lhs <= report.rhs + 1e-12;
  return report;
}

// ---------------------------------------------------------------------------

namespace {

McEstimate mc_estimate(std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : samples) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

double ols_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return num / den;
}

}  // namespace

IdentityReport check_expectation_identities(const NoiseModel& model, long samples,
                                            std::uint64_t seed) {
  if (samples < 10'000) {
    throw ConfigError("check_expectation_identities: samples must be >= 10^4");
  }
  const auto& g = model.true_gradient;
  const auto& b = model.bias;
  if (g.empty() || b.size() != g.size()) {
    throw ConfigError("NoiseModel: gradient/bias dimension mismatch");
  }
  if (model.noise_variance < 0.0) throw ConfigError("NoiseModel: Var must be >= 0");
  const std::size_t dim = g.size();
  const double coord_sd = std::sqrt(model.noise_variance / static_cast<double>(dim));

  IdentityReport report;
  const double g_sq = dot(g, g);
  const double g_dot_b = dot(g, b);
  report.inner_expected = g_sq + g_dot_b;
  report.sqnorm_expected = g_sq + 2.0 * g_dot_b + dot(b, b) + model.noise_variance;

  Rng rng(mix_seed(seed, 0xA11CEULL));
  std::vector<double> inner(samples), sqnorm(samples), g_hat(dim);
  for (long i = 0; i < samples; ++i) {
    for (std::size_t k = 0; k < dim; ++k) g_hat[k] = g[k] + b[k] + coord_sd * rng.normal();
    inner[i] = dot(g, g_hat);
    sqnorm[i] = dot(g_hat, g_hat);
  }
  report.inner = mc_estimate(inner);
  report.sqnorm = mc_estimate(sqnorm);
  const bool inner_ok =
      std::fabs(report.inner.mean - report.inner_expected) <=
      std::max(3.0 * report.inner.std_error, 1e-12);
  const bool sqnorm_ok =
      std::fabs(report.sqnorm.mean - report.sqnorm_expected) <=
      std::max(3.0 * report.sqnorm.std_error, 1e-12);
  report.ok = inner_ok && sqnorm_ok;
  return report;
}

ScalingReport noise_scaling_quadratic(int dim, double noise_variance, long pairs,
                                      std::uint64_t seed,
                                      std::span<const double> etas) {
  if (dim < 1) throw ConfigError("noise_scaling_quadratic: dim must be >= 1");
  if (!(noise_variance > 0.0)) {
    throw ConfigError("noise_scaling_quadratic: Var must be > 0");
  }
  if (pairs < 100) throw ConfigError("noise_scaling_quadratic: pairs must be >= 100");

  static constexpr double kDefaultEtas[] = {1e-4,       3.1622776601683794e-4,
                                            1e-3,       3.1622776601683794e-3,
                                            1e-2,       3.1622776601683794e-2,
                                            1e-1};
  if (etas.empty()) etas = kDefaultEtas;

  // J(theta) = -1/2 ||theta||^2, theta_0 = (1, ..., 1); gradient ascent
  std::vector<double> theta(dim, 1.0);
  std::vector<double> grad(dim);
  for (int k = 0; k < dim; ++k) grad[k] = -theta[k];
  const auto j_of = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return -0.5 * s;
  };
  const double j0 = j_of(theta);
  const double coord_sd = std::sqrt(noise_variance / static_cast<double>(dim));

  ScalingReport report;
  std::vector<double> xs, ys_noise, ys_prog;
  std::vector<double> plus(dim), minus(dim), det(dim), xi(dim);
  for (double eta : etas) {
    Rng rng(mix_seed(seed, std::bit_cast<std::uint64_t>(eta)));
    for (int k = 0; k < dim; ++k) det[k] = theta[k] + eta * grad[k];
    const double dj_det = j_of(det) - j0;
    double penalty_sum = 0.0;
    for (long i = 0; i < pairs; ++i) {
      for (int k = 0; k < dim; ++k) xi[k] = coord_sd * rng.normal();
      for (int k = 0; k < dim; ++k) {
        plus[k] = theta[k] + eta * (grad[k] + xi[k]);
        minus[k] = theta[k] + eta * (grad[k] - xi[k]);
      }
      // antithetic pair: odd-in-xi terms cancel, leaving the eta^2 noise term
      penalty_sum += 0.5 * (j_of(plus) + j_of(minus)) - j_of(det);
    }
    const double penalty = std::fabs(penalty_sum / static_cast<double>(pairs));
    report.etas.push_back(eta);
    report.noise_penalty.push_back(penalty);
    report.progress.push_back(dj_det);
    xs.push_back(std::log(eta));
    ys_noise.push_back(std::log(penalty));
    ys_prog.push_back(std::log(dj_det));
  }
  report.noise_slope = ols_slope(xs, ys_noise);
  report.progress_slope = ols_slope(xs, ys_prog);
  report.ok = std::fabs(report.noise_slope - 2.0) <= 0.1 &&
              std::fabs(report.progress_slope - 1.0) <= 0.1;
  return report;
}

AppendixAResult verify_appendix_a(const NoiseModel& model, long samples,
                                  std::uint64_t seed) {
  AppendixAResult result;
  result.identities = check_expectation_identities(model, samples, seed);
  result.ok = result.identities.ok;
  if (model.noise_variance > 0.0) {
    result.scaling = noise_scaling_quadratic(8, model.noise_variance,
                                             std::max(samples / 5, 100l), seed);
    result.ok = result.ok && result.scaling->ok;
  }
  return result;
}

// ---------------------------------------------------------------------------

GradCheckReport gradcheck_score_function(int trials, std::uint64_t seed, double h,
                                         double tolerance) {
  if (trials < 1) throw ConfigError("gradcheck: trials must be >= 1");
  GradCheckReport report;
  report.trials = trials;
  Rng rng(mix_seed(seed, 0x6D5FULL));
  const EngineConfig exact{EngineKind::train, MismatchMode::none,
                           fpemu::Precision::exact, 0.0, 0};
  for (int trial = 0; trial < trials; ++trial) {
    const int vocab = 2 + static_cast<int>(rng.uniform() * 4);
    const int feature_dim = 4 + static_cast<int>(rng.uniform() * 8);
    PolicyParams params;
    params.feature_dim = feature_dim;
    params.vocab_size = vocab;
    params.theta.resize(static_cast<std::size_t>(feature_dim) * vocab);
    for (double& w : params.theta) w = rng.normal();

    State state;
    const int prefix_len = static_cast<int>(rng.uniform() * 4);
    for (int i = 0; i < prefix_len; ++i) {
      state.prefix.push_back(static_cast<int>(rng.uniform() * vocab));
    }
    const int action = static_cast<int>(rng.uniform() * vocab);

    const auto analytic = score_function(params, exact, state, action);
    std::vector<double> fd(params.theta.size());
    PolicyParams probe = params;
    for (std::size_t c = 0; c < params.theta.size(); ++c) {
      probe.theta[c] = params.theta[c] + h;
      const double up = std::log(token_distribution(probe, exact, state)[action]);
      probe.theta[c] = params.theta[c] - h;
      const double down = std::log(token_distribution(probe, exact, state)[action]);
      probe.theta[c] = params.theta[c];
      fd[c] = (up - down) / (2.0 * h);
    }
    const double rel =
        l2_norm(sub(analytic, fd)) / std::max(l2_norm(fd), 1e-12);
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  report.ok = report.max_rel_error <= tolerance;
  return report;
}

MdpSpec grid_mdp(int vocab, int horizon, std::uint64_t seed) {
  MdpSpec spec;
  spec.vocab_size = vocab;
  spec.max_horizon = horizon;
  spec.prompt_distribution = {1.0};
  // draw rewards on the complete-sequence set
  MdpSpec skeleton = spec;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(vocab) * 131 + horizon));
  for (const auto& outcome : enumerate_trajectories(skeleton)) {
    if (rng.uniform() < 0.5) spec.reward_set[outcome.sequence] = 1;
  }
  return spec;
}

PolicyParams grid_params(int vocab, int horizon, std::uint64_t seed) {
  const int feature_dim = horizon * (vocab + 1);
  return init_policy(feature_dim, vocab, mix_seed(seed, 0xF00DULL), 0.5, 0.0);
}

std::vector<GridPointResult> run_verification_grid(const GridConfig& config) {
  std::vector<GridPointResult> results;
  for (int vocab : config.vocabs) {
    for (int horizon : config.horizons) {
      for (double tv_scale : config.tv_scales) {
        for (std::uint64_t seed : config.param_seeds) {
          GridPointResult point;
          point.vocab = vocab;
          point.horizon = horizon;
          point.tv_scale = tv_scale;
          point.param_seed = seed;
          const auto spec = grid_mdp(vocab, horizon, seed);
          const auto params = grid_params(vocab, horizon, seed);
          const auto engines = make_engines(MismatchMode::controlled_tv,
                                            config.precision, tv_scale,
                                            mix_seed(seed, 77));
          point.theorem = verify_theorem1(spec, params, engines);
          point.lemma1_residual = verify_lemma1(spec, params, engines);
          const auto occupancy = verify_lemma2(spec, params, engines);
          point.lemma2_ok = occupancy.all_within_bound;
          point.lemma2_delta0 = occupancy.delta.empty() ? 0.0 : occupancy.delta.front();
          const auto ideal =
              exact_policy_gradient(spec, params, engines.train, engines.train);
          const auto seq_is = exact_estimator_expectation(spec, params, engines,
                                                          EstimatorKind::is_seq);
          point.seq_is_gap = l2_norm(sub(seq_is, ideal));
          results.push_back(std::move(point));
        }
      }
    }
  }
  return results;
}

}  // namespace mlab::oracle
