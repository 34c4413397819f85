#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "zlik/sim.hpp"

namespace zlik {

// An episode with its relative history flattened to floats, row-major
// (steps, kHistoryDim). Row i is to_relative_history(...)[i].
struct PreparedEpisode {
  const EpisodeRecord* episode = nullptr;
  std::vector<float> history;

  int steps() const { return static_cast<int>(history.size() / kHistoryDim); }
  const float* row(int i) const { return history.data() + static_cast<std::size_t>(i) * kHistoryDim; }
};

std::vector<PreparedEpisode> prepare_episodes(const std::vector<const EpisodeRecord*>& episodes);

struct WindowRef {
  int episode = 0;  // index into the prepared-episode list
  int start = 0;    // alignment: first history row; kino: anchor state index
};

// Alignment windows of `length` history rows sliding with `stride`.
std::vector<WindowRef> history_windows(const std::vector<PreparedEpisode>& eps, int length,
                                       int stride);

// Kinodynamics windows: anchor t needs H history rows ending at t and P
// future states, so t ranges over [H, n - 1 - P] in steps of `stride`.
std::vector<WindowRef> kino_windows(const std::vector<PreparedEpisode>& eps, int H, int P,
                                    int stride);

// Per-channel mean and standard deviation of the history rows (std floored
// at 1e-6).
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};
ChannelStats history_stats(const std::vector<PreparedEpisode>& eps);

}  // namespace zlik
