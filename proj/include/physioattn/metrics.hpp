#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace physioattn {

/// Area under the ROC curve as the probability that a random positive outscores
/// a random negative, ties counted as one half (midrank form, O(n log n)).
template <class L, class S>
double auroc(std::span<const L> labels, std::span<const S> scores) {
  if (labels.size() != scores.size()) throw std::invalid_argument("auroc: labels and scores differ in length");
  const std::size_t n = labels.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j + 1);  // mean of 1-based ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] != L(0) && labels[idx[k]] != L(1)) throw std::invalid_argument("auroc: labels must be 0 or 1");
      if (labels[idx[k]] == L(1)) {
        rank_sum += mid;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: both classes must be present");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1) / 2) / (np * static_cast<double>(n_neg));
}

template <class L, class S>
double auroc(const std::vector<L>& labels, const std::vector<S>& scores) {
  return auroc(std::span<const L>(labels), std::span<const S>(scores));
}

/// Mean absolute percentage error, in percent.
template <class A, class B>
double mape(const std::vector<A>& truth, const std::vector<B>& pred) {
  if (truth.size() != pred.size()) throw std::invalid_argument("mape: lengths differ");
  if (truth.empty()) throw std::invalid_argument("mape: empty input");
  double s = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double t = static_cast<double>(truth[i]);
    if (t == 0.0) throw std::invalid_argument("mape: true value at index " + std::to_string(i) + " is zero");
    s += std::abs(static_cast<double>(pred[i]) - t) / std::abs(t);
  }
  return 100.0 * s / static_cast<double>(truth.size());
}

struct LrSchedule {
  double lr0 = 0.001;
  double decay = 0.1;
  int every = 20;
};

/// Step decay: lr0 * decay^floor(epoch / every).
inline double lr_at(int epoch, const LrSchedule& s = {}) {
  if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be non-negative");
  if (s.every <= 0) throw std::invalid_argument("lr_at: decay interval must be positive");
  return s.lr0 * std::pow(s.decay, epoch / s.every);
}

enum class Direction { at_least, at_most };

struct TimedMetric {
  double seconds;
  double metric;
};

/// Time of the first entry meeting the threshold, or nullopt.
inline std::optional<double> convergence_time(const std::vector<TimedMetric>& history, double threshold, Direction dir) {
  for (const auto& h : history) {
    const bool hit = dir == Direction::at_least ? h.metric >= threshold : h.metric <= threshold;
    if (hit) return h.seconds;
  }
  return std::nullopt;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean_of: empty input");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1); 0 for a single value.
inline double sample_std(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("sample_std: empty input");
  if (v.size() == 1) return 0.0;
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace physioattn
