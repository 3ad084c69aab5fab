#include "mlab/toyenv.hpp"

#include <cmath>
#include <stdexcept>

#include "mlab/errors.hpp"

namespace mlab {

void MdpSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("MdpSpec: vocab_size must be >= 2");
  if (max_horizon < 1) throw ConfigError("MdpSpec: max_horizon must be >= 1");
  double combos = std::pow(static_cast<double>(vocab_size), max_horizon);
  if (combos > static_cast<double>(enumeration_budget)) {
    throw BudgetError("MdpSpec: vocab_size^max_horizon exceeds enumeration budget");
  }
  for (const auto& [seq, r] : reward_set) {
    if (r != 0 && r != 1) throw ConfigError("MdpSpec: rewards must be 0 or 1");
    if (seq.empty() || static_cast<int>(seq.size()) > max_horizon) {
      throw ConfigError("MdpSpec: reward_set key has invalid length");
    }
  }
  if (eos_token && (*eos_token < 0 || *eos_token >= vocab_size)) {
    throw ConfigError("MdpSpec: eos_token out of vocabulary");
  }
  double mass = 0.0;
  for (double p : prompt_distribution) {
    if (p < 0.0) throw ConfigError("MdpSpec: negative prompt probability");
    mass += p;
  }
  if (prompt_distribution.empty() || std::fabs(mass - 1.0) > 1e-12) {
    throw ConfigError("MdpSpec: prompt_distribution must sum to 1");
  }
}

void SyntheticTask::validate() const {
  if (vocab_size < 2) throw ConfigError("SyntheticTask: vocab_size must be >= 2");
  if (max_response_length < 1) {
    throw ConfigError("SyntheticTask: max_response_length must be >= 1");
  }
  if (length_bias <= 0.0 || length_bias > 1.0) {
    throw ConfigError("SyntheticTask: length_bias must be in (0, 1]");
  }
}

std::string to_string(PredicateKind k) {
  switch (k) {
    case PredicateKind::min_length: return "min_length";
    case PredicateKind::min_length_parity: return "min_length_parity";
    case PredicateKind::length_band: return "length_band";
    case PredicateKind::ones_at_least: return "ones_at_least";
    case PredicateKind::always_one: return "always_one";
  }
  return "min_length_parity";
}

PredicateKind predicate_from_string(const std::string& s) {
  if (s == "min_length") return PredicateKind::min_length;
  if (s == "min_length_parity") return PredicateKind::min_length_parity;
  if (s == "length_band") return PredicateKind::length_band;
  if (s == "ones_at_least") return PredicateKind::ones_at_least;
  if (s == "always_one") return PredicateKind::always_one;
  throw ConfigError("unknown predicate: " + s);
}

namespace {

bool is_complete(const MdpSpec& spec, std::span<const int> seq) {
  if (seq.empty()) return false;
  if (spec.eos_token && seq.back() == *spec.eos_token) return true;
  return static_cast<int>(seq.size()) == spec.max_horizon;
}

void enumerate_rec(const MdpSpec& spec, std::vector<int>& seq,
                   std::vector<TrajectoryOutcome>& out) {
  for (int a = 0; a < spec.vocab_size; ++a) {
    seq.push_back(a);
    if (is_complete(spec, seq)) {
      out.push_back({seq, reward(spec, seq)});
    } else {
      enumerate_rec(spec, seq, out);
    }
    seq.pop_back();
  }
}

}  // namespace

std::vector<TrajectoryOutcome> enumerate_trajectories(const MdpSpec& spec) {
  spec.validate();
  std::vector<TrajectoryOutcome> out;
  std::vector<int> seq;
  enumerate_rec(spec, seq, out);
  return out;
}

std::vector<State> enumerate_states(const MdpSpec& spec) {
  spec.validate();
  std::vector<State> states;
  for (int prompt = 0; prompt < static_cast<int>(spec.prompt_distribution.size()); ++prompt) {
    if (spec.prompt_distribution[prompt] <= 0.0) continue;
    // BFS over alive prefixes: no EOS emitted yet, position < horizon
    std::vector<std::vector<int>> frontier = {{}};
    for (int t = 0; t < spec.max_horizon; ++t) {
      std::vector<std::vector<int>> next;
      for (auto& prefix : frontier) {
        states.push_back({prompt, prefix});
        if (t + 1 == spec.max_horizon) continue;
        for (int a = 0; a < spec.vocab_size; ++a) {
          if (spec.eos_token && a == *spec.eos_token) continue;
          auto ext = prefix;
          ext.push_back(a);
          next.push_back(std::move(ext));
        }
      }
      frontier = std::move(next);
    }
  }
  return states;
}

int reward(const MdpSpec& spec, std::span<const int> sequence) {
  auto it = spec.reward_set.find(std::vector<int>(sequence.begin(), sequence.end()));
  return it == spec.reward_set.end() ? 0 : it->second;
}

namespace {

// content tokens: the sequence minus a trailing EOS, if any
std::span<const int> content(std::span<const int> seq) {
  if (!seq.empty() && seq.back() == kEosToken) return seq.first(seq.size() - 1);
  return seq;
}

}  // namespace

int reward(const SyntheticTask& task, std::span<const int> sequence) {
  const auto body = content(sequence);
  long ones = 0;
  for (int t : body) ones += (t == 1);
  // a sequence that filled the cap without emitting EOS was cut off;
  // truncated generations never score
  const bool terminated =
      static_cast<int>(sequence.size()) < task.max_response_length ||
      (!sequence.empty() && sequence.back() == kEosToken);
  switch (task.target_predicate) {
    case PredicateKind::min_length: {
      if (!terminated) return 0;
      const long min_len =
          std::lround(task.length_bias * task.max_response_length);
      return static_cast<long>(body.size()) >= min_len ? 1 : 0;
    }
    case PredicateKind::min_length_parity: {
      if (!terminated) return 0;
      const long min_len =
          std::lround(task.length_bias * task.max_response_length);
      return (static_cast<long>(body.size()) >= min_len && ones % 2 == 0) ? 1 : 0;
    }
    case PredicateKind::length_band: {
      if (!terminated) return 0;
      const long lo = std::lround(task.length_bias * task.max_response_length);
      const long hi = lo + std::lround(task.max_response_length / 6.0);
      const long len = static_cast<long>(body.size());
      return (len >= lo && len <= hi) ? 1 : 0;
    }
    case PredicateKind::ones_at_least: {
      const long need = std::max(1l, std::lround(task.length_bias * 8.0));
      return ones >= need ? 1 : 0;
    }
    case PredicateKind::always_one:
      return 1;
  }
  return 0;
}

EnvRef env_ref(const MdpSpec& spec) {
  return EnvRef{spec.vocab_size, spec.max_horizon, spec.eos_token,
                [&spec](std::span<const int> seq) { return reward(spec, seq); }};
}

EnvRef env_ref(const SyntheticTask& task) {
  return EnvRef{task.vocab_size, task.max_response_length, kEosToken,
                [&task](std::span<const int> seq) { return reward(task, seq); }};
}

}  // namespace mlab
