#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sipldl/errors.hpp"

namespace sipldl {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  /// Classes whose F1 is reported as 0 because it is undefined (absent from
  /// the training split, or no true and no predicted samples in evaluation).
  std::vector<bool> per_class_undefined;
  std::vector<std::vector<std::size_t>> confusion;  ///< [true][predicted]
};

/// Metrics on [0, 1]. `present_in_train` marks classes the classifier saw.
inline ClassificationMetrics compute_metrics(std::span<const int> truth, std::span<const int> predicted,
                                             std::size_t num_classes, const std::vector<bool>& present_in_train = {}) {
  require(truth.size() == predicted.size(), ErrorKind::Dimension, "truth and prediction lengths differ");
  ClassificationMetrics m;
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && static_cast<std::size_t>(truth[i]) < num_classes && predicted[i] >= 0 &&
                static_cast<std::size_t>(predicted[i]) < num_classes,
            ErrorKind::Range, "class index out of range in metrics");
    ++m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    if (truth[i] == predicted[i]) ++correct;
  }
  m.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  m.per_class_f1.assign(num_classes, 0.0);
  m.per_class_undefined.assign(num_classes, false);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t tp = m.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      if (k == c) continue;
      fp += m.confusion[k][c];
      fn += m.confusion[c][k];
    }
    const bool absent = !present_in_train.empty() && !present_in_train[c];
    const std::size_t denom = 2 * tp + fp + fn;
    if (absent || denom == 0) {
      m.per_class_undefined[c] = true;
    } else {
      m.per_class_f1[c] = 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    f1_sum += m.per_class_f1[c];
  }
  m.macro_f1 = num_classes == 0 ? 0.0 : f1_sum / static_cast<double>(num_classes);
  return m;
}

}  // namespace sipldl
