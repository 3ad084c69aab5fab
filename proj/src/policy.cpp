#include "mlab/policy.hpp"

#include <algorithm>
#include <cmath>

#include "mlab/errors.hpp"
#include "mlab/vecops.hpp"

namespace mlab {

EnginePair make_engines(MismatchMode mode, fpemu::Precision precision,
                        double tv_scale, std::uint64_t perturbation_seed) {
  EngineConfig train{EngineKind::train, mode, precision, tv_scale, perturbation_seed};
  EngineConfig rollout{EngineKind::rollout, mode, precision, tv_scale, perturbation_seed};
  return {train, rollout};
}

void PolicyParams::validate() const {
  if (feature_dim < 1 || vocab_size < 2) {
    throw ConfigError("PolicyParams: feature_dim >= 1 and vocab_size >= 2 required");
  }
  if (theta.size() != static_cast<std::size_t>(feature_dim) * vocab_size) {
    throw ConfigError("PolicyParams: theta size does not match shape");
  }
  for (double w : theta) {
    if (!std::isfinite(w)) throw NumericError("PolicyParams: non-finite weight");
  }
}

PolicyParams init_policy(int feature_dim, int vocab_size, std::uint64_t seed,
                         double init_scale, double eos_logit_init) {
  PolicyParams p;
  p.feature_dim = feature_dim;
  p.vocab_size = vocab_size;
  p.theta.resize(static_cast<std::size_t>(feature_dim) * vocab_size);
  Rng rng(mix_seed(seed, 0x9017u));
  for (double& w : p.theta) w = init_scale * rng.normal();
  for (int f = 0; f < feature_dim; ++f) p.at(f, kEosToken) += eos_logit_init;
  return p;
}

int feature_index(const PolicyParams& params, const State& state) {
  // (prompt, position, prev) one-hot with wrap-around truncation. The
  // position slot has stride vocab_size + 1, so a table of k*(vocab_size+1)
  // entries aliases positions mod k without ever bleeding into the
  // prev-token dimension; 509 is prime so prompts land on distinct classes.
  const long long slot = 509LL * state.prompt + state.position();
  const long long raw = slot * (params.vocab_size + 1) + (state.prev_token() + 1);
  return static_cast<int>(raw % params.feature_dim);
}

double perturbation_unit(std::uint64_t seed, const State& state, int action) {
  std::uint64_t h = splitmix64(seed ^ 0xA5A5A5A5DEADBEEFULL);
  h = mix_seed(h, static_cast<std::uint64_t>(state.prompt) + 1);
  for (int tok : state.prefix) h = mix_seed(h, static_cast<std::uint64_t>(tok) + 2);
  h = mix_seed(h, static_cast<std::uint64_t>(action) + 0x51ULL);
  // map to [-1, 1)
  return 2.0 * (static_cast<double>(h >> 11) * 0x1.0p-53) - 1.0;
}

namespace {

fpemu::ReduceOrder order_for(const EngineConfig& e) {
  if (e.mismatch_mode == MismatchMode::reduction_order && e.kind == EngineKind::train) {
    return fpemu::ReduceOrder::pairwise_tree;
  }
  return fpemu::ReduceOrder::sequential;
}

}  // namespace

std::vector<double> distribution_from_logits(std::vector<double> logits,
                                             const EngineConfig& engine) {
  const fpemu::Rounder r{engine.precision};
  const auto order = order_for(engine);
  for (double l : logits) {
    if (!std::isfinite(l)) throw NumericError("token_distribution: non-finite logit");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  for (std::size_t a = 0; a < logits.size(); ++a) e[a] = r(std::exp(logits[a] - m));
  const double norm = fpemu::reduce_sum(e, order, r);
  std::vector<double> q(logits.size());
  for (std::size_t a = 0; a < logits.size(); ++a) q[a] = r(e[a] / norm);
  // exact final renormalization keeps the emitted vector a distribution;
  // the engine divergence already lives in the rounded q entries
  double total = 0.0;
  for (double v : q) total += v;
  for (double& v : q) v /= total;
  return q;
}

std::vector<double> logits_from_features(const PolicyParams& params,
                                         const EngineConfig& engine,
                                         std::span<const double> features) {
  const fpemu::Rounder r{engine.precision};
  const auto order = order_for(engine);
  std::vector<double> logits(params.vocab_size);
  std::vector<double> column(params.feature_dim);
  for (int a = 0; a < params.vocab_size; ++a) {
    for (int f = 0; f < params.feature_dim; ++f) column[f] = params.at(f, a);
    logits[a] = fpemu::dot(features, column, order, r);
  }
  return logits;
}

std::vector<double> token_distribution(const PolicyParams& params,
                                       const EngineConfig& engine,
                                       const State& state) {
  const fpemu::Rounder r{engine.precision};
  const int idx = feature_index(params, state);
  std::vector<double> logits(params.vocab_size);
  // one-hot feature: the per-action dot product reduces to a single rounded
  // load, identical under either reduction order
  for (int a = 0; a < params.vocab_size; ++a) logits[a] = r(params.at(idx, a));
  if (engine.mismatch_mode == MismatchMode::controlled_tv &&
      engine.kind == EngineKind::rollout && engine.tv_scale != 0.0) {
    for (int a = 0; a < params.vocab_size; ++a) {
      logits[a] = r(logits[a] +
                    engine.tv_scale * perturbation_unit(engine.perturbation_seed, state, a));
    }
  }
  return distribution_from_logits(std::move(logits), engine);
}

TvReport realized_tv(const PolicyParams& params, const EnginePair& engines,
                     std::span<const State> states) {
  TvReport report;
  report.per_state.reserve(states.size());
  for (const State& s : states) {
    const auto p = token_distribution(params, engines.train, s);
    const auto q = token_distribution(params, engines.rollout, s);
    const double tv = tv_distance(p, q);
    report.per_state.push_back(tv);
    report.delta_max = std::max(report.delta_max, tv);
  }
  return report;
}

std::vector<double> score_function(const PolicyParams& params,
                                   const EngineConfig& engine,
                                   const State& state, int action) {
  const auto p = token_distribution(params, engine, state);
  std::vector<double> grad(params.theta.size(), 0.0);
  const int idx = feature_index(params, state);
  const std::size_t row = static_cast<std::size_t>(idx) * params.vocab_size;
  for (int a = 0; a < params.vocab_size; ++a) grad[row + a] = -p[a];
  grad[row + action] += 1.0;
  return grad;
}

double score_bound(const PolicyParams& params, const EngineConfig& engine,
                   std::span<const State> states) {
  double bound = 0.0;
  for (const State& s : states) {
    const auto p = token_distribution(params, engine, s);
    for (int a = 0; a < params.vocab_size; ++a) {
      double sq = 0.0;
      for (int b = 0; b < params.vocab_size; ++b) {
        const double g = (a == b ? 1.0 : 0.0) - p[b];
        sq += g * g;
      }
      bound = std::max(bound, std::sqrt(sq));
    }
  }
  return bound;
}

Trajectory sample_trajectory(const PolicyParams& params, const EnginePair& engines,
                             const EnvRef& env, int prompt, Rng& rng) {
  if (engines.rollout.kind != EngineKind::rollout) {
    throw ContractError("sample_trajectory: engines.rollout must have rollout kind");
  }
  Trajectory traj;
  traj.prompt = prompt;
  State state{prompt, {}};
  state.prefix.reserve(env.horizon);
  for (int pos = 0; pos < env.horizon; ++pos) {
    const auto mu = token_distribution(params, engines.rollout, state);
    const double u = rng.uniform();
    int action = env.vocab_size - 1;
    double cum = 0.0;
    for (int a = 0; a < env.vocab_size; ++a) {
      cum += mu[a];
      if (u < cum) {
        action = a;
        break;
      }
    }
    const auto pi = token_distribution(params, engines.train, state);
    traj.tokens.push_back(action);
    traj.logprob_rollout.push_back(std::log(mu[action]));
    traj.logprob_train.push_back(std::log(pi[action]));
    double h = 0.0;
    for (double p : pi) {
      if (p > 0.0) h -= p * std::log(p);
    }
    traj.entropy_sum_train += h;
    if (env.eos_token && action == *env.eos_token) break;
    state.prefix.push_back(action);
  }
  if (env.eos_token && (traj.tokens.empty() || traj.tokens.back() != *env.eos_token)) {
    traj.eos_forced = true;  // episode cut at the cap
  }
  traj.reward = env.reward_fn(traj.tokens);
  return traj;
}

}  // namespace mlab
