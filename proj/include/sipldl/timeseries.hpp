#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sipldl/errors.hpp"
#include "sipldl/tensor.hpp"

namespace sipldl {

/// A batch of multichannel series. Each row of `values` is channel-major:
/// `channels` consecutive blocks of `length` samples.
///
/// `ids` are stable sample identities (row index in the originating dataset);
/// per-sample randomness is keyed on them so reordering a batch never changes
/// what a given sample receives.
struct TimeSeriesBatch {
  std::size_t channels = 1;
  std::size_t length = 0;
  std::size_t num_classes = 0;
  Tensor2D values;
  std::vector<int> labels;
  std::vector<bool> label_mask;
  std::vector<std::uint64_t> ids;

  std::size_t size() const noexcept { return labels.size(); }

  void validate() const {
    const std::size_t n = labels.size();
    require(values.rows() == n && (n == 0 || values.cols() == channels * length), ErrorKind::Dimension,
            "series values " + values.shape_string() + " do not match " + std::to_string(n) + " samples of " +
                std::to_string(channels) + "x" + std::to_string(length));
    require(label_mask.size() == n && ids.size() == n, ErrorKind::Dimension,
            "label_mask/ids length does not match sample count");
    for (std::size_t i = 0; i < n; ++i)
      require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < num_classes, ErrorKind::Range,
              "label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) + " outside [0," +
                  std::to_string(num_classes) + ")");
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  /// Rows `rows` of this batch, in the given order.
  TimeSeriesBatch subset(std::span<const std::size_t> rows) const {
    TimeSeriesBatch out;
    out.channels = channels;
    out.length = length;
    out.num_classes = num_classes;
    out.values = Tensor2D(rows.size(), channels * length);
    out.labels.reserve(rows.size());
    out.label_mask.reserve(rows.size());
    out.ids.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t r = rows[i];
      require(r < size(), ErrorKind::Dimension, "subset row " + std::to_string(r) + " out of range");
      auto src = values.row(r);
      std::copy(src.begin(), src.end(), out.values.row(i).begin());
      out.labels.push_back(labels[r]);
      out.label_mask.push_back(label_mask[r]);
      out.ids.push_back(ids[r]);
    }
    return out;
  }

  static TimeSeriesBatch empty(std::size_t channels, std::size_t length, std::size_t num_classes) {
    TimeSeriesBatch b;
    b.channels = channels;
    b.length = length;
    b.num_classes = num_classes;
    b.values = Tensor2D(0, channels * length);
    return b;
  }
};

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace sipldl
