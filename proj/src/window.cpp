#include "dydiff/window.hpp"

#include <algorithm>

#include "dydiff/error.hpp"

namespace dydiff {

std::size_t window_count(std::size_t H, std::size_t L) { return H >= L ? H - L + 1 : 1; }

std::vector<Window> slice_windows(const Dataset& ds, std::size_t L) {
  if (L == 0) throw ConfigError("slice_windows: L must be >= 1");
  std::vector<Window> out;
  const std::size_t S = ds.state_dim;
  const std::size_t A = ds.action_dim;
  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    const Episode& ep = ds.episodes[e];
    const std::size_t H = ep.length();
    const std::size_t starts = window_count(H, L);
    for (std::size_t i = 0; i < starts; ++i) {
      Window w;
      w.episode = e;
      w.start = i;
      w.states = Matrix(L + 1, S);
      w.actions = Matrix(L, A);
      w.pad_mask.assign(2 * L + 1, false);
      const std::size_t n_states = std::min(L + 1, H + 1 - i);
      const std::size_t n_actions = std::min(L, H - i);
      for (std::size_t t = 0; t < n_states; ++t)
        std::copy_n(ep.states.row(i + t).begin(), S, w.states.row(t).begin());
      for (std::size_t t = 0; t < n_actions; ++t)
        std::copy_n(ep.actions.row(i + t).begin(), A, w.actions.row(t).begin());
      // Real positions are 0..2*n_actions; everything after is padding.
      for (std::size_t p = 2 * n_actions + 1; p < w.pad_mask.size(); ++p) w.pad_mask[p] = true;
      out.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace dydiff
