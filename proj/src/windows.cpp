#include "zlik/windows.hpp"

#include <algorithm>
#include <cmath>

namespace zlik {

std::vector<PreparedEpisode> prepare_episodes(const std::vector<const EpisodeRecord*>& episodes) {
  std::vector<PreparedEpisode> out;
  out.reserve(episodes.size());
  for (const auto* ep : episodes) {
    PreparedEpisode p;
    p.episode = ep;
    const auto hist = to_relative_history(ep->trajectory);
    p.history.reserve(hist.size() * kHistoryDim);
    for (const auto& h : hist) {
      for (double c : h.channels()) p.history.push_back(static_cast<float>(c));
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<WindowRef> history_windows(const std::vector<PreparedEpisode>& eps, int length,
                                       int stride) {
  std::vector<WindowRef> out;
  stride = std::max(stride, 1);
  for (int e = 0; e < static_cast<int>(eps.size()); ++e) {
    for (int s = 0; s + length <= eps[e].steps(); s += stride) out.push_back({e, s});
  }
  return out;
}

std::vector<WindowRef> kino_windows(const std::vector<PreparedEpisode>& eps, int H, int P,
                                    int stride) {
  std::vector<WindowRef> out;
  stride = std::max(stride, 1);
  for (int e = 0; e < static_cast<int>(eps.size()); ++e) {
    const int n = static_cast<int>(eps[e].episode->trajectory.states.size());
    for (int t = H; t <= n - 1 - P; t += stride) out.push_back({e, t});
  }
  return out;
}

ChannelStats history_stats(const std::vector<PreparedEpisode>& eps) {
  std::vector<double> sum(kHistoryDim, 0.0), sq(kHistoryDim, 0.0);
  double n = 0.0;
  for (const auto& p : eps) {
    for (int i = 0; i < p.steps(); ++i) {
      const float* r = p.row(i);
      for (std::size_t c = 0; c < kHistoryDim; ++c) {
        sum[c] += r[c];
        sq[c] += static_cast<double>(r[c]) * r[c];
      }
    }
    n += p.steps();
  }
  ChannelStats s{std::vector<double>(kHistoryDim, 0.0), std::vector<double>(kHistoryDim, 1.0)};
  if (n == 0.0) return s;
  for (std::size_t c = 0; c < kHistoryDim; ++c) {
    s.mean[c] = sum[c] / n;
    s.std[c] = std::max(std::sqrt(std::max(sq[c] / n - s.mean[c] * s.mean[c], 0.0)), 1e-6);
  }
  return s;
}

}  // namespace zlik
