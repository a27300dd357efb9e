#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "sipldl/errors.hpp"
#include "sipldl/rng.hpp"
#include "sipldl/timeseries.hpp"

namespace sipldl {

struct AugmentParams {
  double weak_jitter = 0.05;    ///< stddev of additive noise, weak view
  double weak_scale = 0.1;      ///< stddev of the multiplicative factor around 1
  double strong_jitter = 0.1;   ///< stddev of additive noise, strong view
  std::size_t max_segments = 5; ///< permutation splits into 1..max_segments pieces
};

namespace augment_detail {

// Stream tags keep the weak and strong draws for one sample independent.
inline constexpr std::uint64_t kWeakStream = 0x5745414bULL;
inline constexpr std::uint64_t kStrongStream = 0x5354524fULL;

inline void jitter(std::span<double> row, double sigma, Rng& rng) {
  if (sigma == 0.0) return;
  for (double& v : row) v += normal(rng, 0.0, sigma);
}

}  // namespace augment_detail

/// Jitter, then scale each sample by a factor drawn from Normal(1, weak_scale).
/// Randomness for sample i is derived from (seed, ids[i]).
inline TimeSeriesBatch weak_augment(const TimeSeriesBatch& x, const AugmentParams& p, std::uint64_t seed) {
  require(p.weak_jitter >= 0.0 && p.weak_scale >= 0.0, ErrorKind::Parameter,
          "augmentation noise levels must be non-negative");
  TimeSeriesBatch out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng = make_rng(seed, {augment_detail::kWeakStream, x.ids[i]});
    auto row = out.values.row(i);
    augment_detail::jitter(row, p.weak_jitter, rng);
    const double factor = p.weak_scale == 0.0 ? 1.0 : normal(rng, 1.0, p.weak_scale);
    for (double& v : row) v *= factor;
  }
  return out;
}

/// Permute contiguous time segments (same cut points and order across the
/// channels of a sample), then jitter.
inline TimeSeriesBatch strong_augment(const TimeSeriesBatch& x, const AugmentParams& p, std::uint64_t seed) {
  require(p.strong_jitter >= 0.0, ErrorKind::Parameter, "augmentation noise levels must be non-negative");
  require(p.max_segments >= 1, ErrorKind::Parameter, "max_segments must be at least 1");
  require(x.size() == 0 || x.length >= p.max_segments, ErrorKind::Parameter,
          "series length " + std::to_string(x.length) + " is shorter than max_segments " +
              std::to_string(p.max_segments));
  TimeSeriesBatch out = x;
  const std::size_t len = x.length;
  std::vector<double> scratch(len);
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng = make_rng(seed, {augment_detail::kStrongStream, x.ids[i]});
    auto row = out.values.row(i);
    if (p.max_segments > 1) {
      std::uniform_int_distribution<std::size_t> pick_k(1, p.max_segments);
      const std::size_t k = pick_k(rng);
      if (k > 1) {
        // k-1 distinct cut points in [1, len).
        std::vector<std::size_t> candidates(len - 1);
        std::iota(candidates.begin(), candidates.end(), std::size_t{1});
        std::shuffle(candidates.begin(), candidates.end(), rng);
        std::vector<std::size_t> cuts(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k - 1));
        std::sort(cuts.begin(), cuts.end());
        cuts.insert(cuts.begin(), 0);
        cuts.push_back(len);
        std::vector<std::size_t> order = iota_indices(k);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t c = 0; c < x.channels; ++c) {
          auto series = row.subspan(c * len, len);
          std::size_t pos = 0;
          for (std::size_t seg : order)
            for (std::size_t t = cuts[seg]; t < cuts[seg + 1]; ++t) scratch[pos++] = series[t];
          std::copy(scratch.begin(), scratch.end(), series.begin());
        }
      }
    }
    augment_detail::jitter(row, p.strong_jitter, rng);
  }
  return out;
}

}  // namespace sipldl
