#pragma once

#include <vector>

namespace mlab {

// A prefix state: the prompt identifier plus everything generated so far.
// This is the state the policy conditions on and the occupancy recursions
// enumerate; no aliasing between distinct prefixes.
struct State {
  int prompt = 0;
  std::vector<int> prefix;

  int position() const { return static_cast<int>(prefix.size()); }
  int prev_token() const { return prefix.empty() ? -1 : prefix.back(); }

  bool operator==(const State&) const = default;
};

}  // namespace mlab
