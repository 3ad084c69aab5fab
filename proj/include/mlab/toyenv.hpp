#pragma once

// Two environment families. MdpSpec is an exactly enumerable token MDP used
// by the theory-verification oracle; SyntheticTask is a length-growing
// generation task used by the training harness. Rewards are binary
// everywhere. EOS is an ordinary vocabulary token (id 0) whose emission
// ends the episode; at the horizon the episode ends unconditionally.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlab/state.hpp"

namespace mlab {

inline constexpr int kEosToken = 0;

struct MdpSpec {
  int vocab_size = 2;    // includes the EOS token
  int max_horizon = 1;   // T
  // terminal sequence -> reward; sequences absent from the map score 0
  std::map<std::vector<int>, int> reward_set;
  std::vector<double> prompt_distribution = {1.0};
  // token whose emission terminates the episode early; nullopt disables
  // early termination (fixed-horizon MDP)
  std::optional<int> eos_token = kEosToken;
  long long enumeration_budget = 1'000'000;

  // throws ConfigError / BudgetError on violated invariants
  void validate() const;
};

enum class PredicateKind {
  // reward 1 iff the sequence terminated by itself (no cap cut-off) and
  // content length >= round(length_bias * cap)
  min_length,
  // reward 1 iff content length >= round(length_bias * cap) and the count
  // of token 1 among content tokens is even
  min_length_parity,
  // reward 1 iff content length lands in the band
  // [round(length_bias * cap), round(length_bias * cap) + round(cap / 6)];
  // the policy has to learn to stop, not just to keep going
  length_band,
  // reward 1 iff the count of token 1 is >= max(1, round(length_bias * 8))
  ones_at_least,
  // reward 1 always (degenerate, for plumbing tests)
  always_one,
};

std::string to_string(PredicateKind k);
PredicateKind predicate_from_string(const std::string& s);

struct SyntheticTask {
  int vocab_size = 6;  // includes EOS
  int max_response_length = 48;
  PredicateKind target_predicate = PredicateKind::min_length_parity;
  double length_bias = 0.5;

  void validate() const;
};

struct TrajectoryOutcome {
  std::vector<int> sequence;
  int reward = 0;
};

// Every complete sequence of the MDP: a sequence is complete when it ends
// with the EOS token or reaches max_horizon. Throws BudgetError when
// vocab_size^max_horizon exceeds the enumeration budget.
std::vector<TrajectoryOutcome> enumerate_trajectories(const MdpSpec& spec);

// Every reachable prefix state with position < max_horizon, for each prompt
// with positive probability. These are the states the occupancy recursion
// and the measured bounds (B, Delta_max) range over.
std::vector<State> enumerate_states(const MdpSpec& spec);

int reward(const MdpSpec& spec, std::span<const int> sequence);
int reward(const SyntheticTask& task, std::span<const int> sequence);

// Uniform view over either environment family so sampling code does not
// care which one it is driving.
struct EnvRef {
  int vocab_size = 0;
  int horizon = 0;
  std::optional<int> eos_token;
  std::function<int(std::span<const int>)> reward_fn;
};

EnvRef env_ref(const MdpSpec& spec);
EnvRef env_ref(const SyntheticTask& task);

}  // namespace mlab
