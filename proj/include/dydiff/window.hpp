#pragma once

#include <vector>

#include "dydiff/dataset.hpp"

namespace dydiff {

// Fixed-length training window: L+1 states and L actions, sliced from an
// episode or zero-padded when the episode is shorter than L.
struct Window {
  Matrix states;   // (L+1) x S
  Matrix actions;  // L x A
  // One flag per interleaved position (s_0, a_0, s_1, ..., a_{L-1}, s_L):
  // position 2i is state i, position 2i+1 is action i. Padded positions
  // always form a suffix.
  std::vector<bool> pad_mask;
  std::size_t episode = 0;
  std::size_t start = 0;

  std::size_t horizon() const { return actions.rows(); }
  bool padded() const { return !pad_mask.empty() && pad_mask.back(); }
};

// Episodes with H >= L yield windows at every start 0..H-L; shorter episodes
// yield one window holding the whole episode followed by zeros.
std::vector<Window> slice_windows(const Dataset& ds, std::size_t L);

// Number of windows slice_windows produces for an episode of length H.
std::size_t window_count(std::size_t H, std::size_t L);

}  // namespace dydiff
