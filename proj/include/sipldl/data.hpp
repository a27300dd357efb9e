#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sipldl/errors.hpp"
#include "sipldl/rng.hpp"
#include "sipldl/timeseries.hpp"

namespace sipldl {

/// Recipe for a synthetic imbalanced dataset. Class c is a sinusoid at
/// `base_frequency + c * frequency_step` cycles per series under a
/// class-dependent amplitude envelope, plus Gaussian noise.
struct SynthSpec {
  std::vector<std::size_t> class_counts;  ///< descending, N_1 >= ... >= N_C >= 1
  std::size_t length = 64;
  std::size_t channels = 1;
  double base_frequency = 2.0;
  double frequency_step = 1.0;
  double envelope_depth = 0.5;
  double noise = 0.5;
  double phase_jitter = 0.0;      ///< per-sample phase shift, uniform in +-phase_jitter*pi
  double amplitude_jitter = 0.0;  ///< per-sample gain stddev around 1
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return class_counts.size(); }

  std::size_t total() const {
    std::size_t n = 0;
    for (std::size_t c : class_counts) n += c;
    return n;
  }

  double imbalance_ratio() const {
    return static_cast<double>(class_counts.front()) / static_cast<double>(class_counts.back());
  }

  void validate() const {
    require(!class_counts.empty(), ErrorKind::Parameter, "synthetic spec needs at least one class");
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
      require(class_counts[c] >= 1, ErrorKind::Parameter, "class " + std::to_string(c) + " has no samples");
      require(c == 0 || class_counts[c] <= class_counts[c - 1], ErrorKind::Parameter,
              "class counts must be sorted in descending order");
    }
    require(length >= 1 && channels >= 1, ErrorKind::Parameter, "length and channels must be positive");
    require(noise >= 0.0 && phase_jitter >= 0.0 && amplitude_jitter >= 0.0, ErrorKind::Parameter,
            "noise levels must be non-negative");
    require(envelope_depth >= 0.0 && envelope_depth < 1.0, ErrorKind::Parameter,
            "envelope_depth must lie in [0, 1)");
  }
};

/// Descending class counts summing to `total` with N_1 / N_C close to `ratio`
/// (geometric profile).
inline std::vector<std::size_t> geometric_class_counts(std::size_t total, std::size_t classes, double ratio) {
  require(classes >= 1 && ratio >= 1.0, ErrorKind::Parameter, "need classes >= 1 and ratio >= 1");
  std::vector<double> w(classes);
  double s = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double frac = classes == 1 ? 0.0 : static_cast<double>(c) / static_cast<double>(classes - 1);
    w[c] = std::pow(ratio, -frac);
    s += w[c];
  }
  std::vector<std::size_t> counts(classes);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    counts[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(total) * w[c] / s)));
    assigned += counts[c];
  }
  // Put the rounding remainder on the majority class.
  if (assigned > total && counts[0] > assigned - total) counts[0] -= assigned - total;
  else if (assigned < total) counts[0] += total - assigned;
  return counts;
}

inline double class_template(const SynthSpec& spec, std::size_t cls, std::size_t channel, double t_frac,
                             double phase) {
  using std::numbers::pi;
  const double freq = spec.base_frequency + static_cast<double>(cls) * spec.frequency_step;
  const double envelope =
      1.0 + spec.envelope_depth * std::sin(pi * static_cast<double>(cls + 1) * t_frac);
  return envelope * std::sin(2.0 * pi * freq * t_frac + phase + static_cast<double>(channel) * pi / 4.0);
}

/// Samples are emitted class by class; ids equal row indices.
inline TimeSeriesBatch generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.total();
  TimeSeriesBatch out;
  out.channels = spec.channels;
  out.length = spec.length;
  out.num_classes = spec.num_classes();
  out.values = Tensor2D(n, spec.channels * spec.length);
  out.labels.reserve(n);
  std::size_t row = 0;
  for (std::size_t cls = 0; cls < spec.num_classes(); ++cls) {
    for (std::size_t j = 0; j < spec.class_counts[cls]; ++j, ++row) {
      Rng rng = make_rng(spec.seed, {0x53594eULL, row});
      const double phase = spec.phase_jitter == 0.0
                               ? 0.0
                               : uniform(rng, -spec.phase_jitter, spec.phase_jitter) * std::numbers::pi;
      const double gain = spec.amplitude_jitter == 0.0 ? 1.0 : normal(rng, 1.0, spec.amplitude_jitter);
      for (std::size_t ch = 0; ch < spec.channels; ++ch)
        for (std::size_t t = 0; t < spec.length; ++t) {
          const double tf = static_cast<double>(t) / static_cast<double>(spec.length);
          double v = gain * class_template(spec, cls, ch, tf, phase);
          if (spec.noise > 0.0) v += normal(rng, 0.0, spec.noise);
          out.values(row, ch * spec.length + t) = v;
        }
      out.labels.push_back(static_cast<int>(cls));
    }
  }
  out.label_mask.assign(n, true);
  out.ids = [&] {
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    return ids;
  }();
  return out;
}

/// Marks a class-balanced labeled subset: every class receives
/// min(floor(fraction * N / C), min_c N_c) labels; everything else is hidden.
inline TimeSeriesBatch split_labels(const TimeSeriesBatch& batch, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::Parameter,
          "label fraction must lie in (0, 1], got " + std::to_string(fraction));
  const auto counts = batch.class_counts();
  require(!counts.empty(), ErrorKind::InfeasibleSplit, "no classes in batch");
  const std::size_t smallest = *std::min_element(counts.begin(), counts.end());
  require(fraction * static_cast<double>(smallest) >= 1.0, ErrorKind::InfeasibleSplit,
          "minority class has " + std::to_string(smallest) + " samples; fraction " + std::to_string(fraction) +
              " cannot label any of them");
  std::size_t per_class = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(batch.size()) / static_cast<double>(counts.size())));
  per_class = std::min(per_class, smallest);
  require(per_class >= 1, ErrorKind::InfeasibleSplit, "balanced split would label zero samples per class");

  TimeSeriesBatch out = batch;
  out.label_mask.assign(batch.size(), false);
  for (std::size_t cls = 0; cls < counts.size(); ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (static_cast<std::size_t>(batch.labels[i]) == cls) members.push_back(i);
    Rng rng = make_rng(seed, {0x4c41424cULL, cls});
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < per_class; ++k) out.label_mask[members[k]] = true;
  }
  return out;
}

struct TrainTestSplit {
  TimeSeriesBatch train;
  TimeSeriesBatch test;
};

/// Per-class seeded split; each class with >= 2 samples contributes
/// round(test_fraction * N_c) (at least 1) samples to the test side.
inline TrainTestSplit stratified_split(const TimeSeriesBatch& batch, double test_fraction, std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorKind::Parameter, "test fraction must lie in (0, 1)");
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t cls = 0; cls < batch.num_classes; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (static_cast<std::size_t>(batch.labels[i]) == cls) members.push_back(i);
    Rng rng = make_rng(seed, {0x53504c54ULL, cls});
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t n_test = 0;
    if (members.size() >= 2) {
      n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
      n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
    }
    for (std::size_t k = 0; k < members.size(); ++k) (k < n_test ? test_rows : train_rows).push_back(members[k]);
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  return {batch.subset(train_rows), batch.subset(test_rows)};
}

/// Expected shape of a delimited file.
struct DelimitedSchema {
  std::size_t channels = 1;
  std::size_t length = 0;
  std::size_t num_classes = 0;
};

/// One sample per line: integer label, then channels*length values, comma
/// separated. Values are written with 17 significant digits so reading them
/// back is exact.
inline void write_delimited(const std::string& path, const TimeSeriesBatch& batch) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path + " for writing");
  char buf[32];
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out << batch.labels[i];
    for (double v : batch.values.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path);
}

inline TimeSeriesBatch load_delimited(const std::string& path, const DelimitedSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  const std::size_t width = schema.channels * schema.length;
  TimeSeriesBatch out = TimeSeriesBatch::empty(schema.channels, schema.length, schema.num_classes);
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    require(fields.size() == width + 1, ErrorKind::Parse,
            where + ": expected " + std::to_string(width + 1) + " fields (label + " + std::to_string(width) +
                " values), found " + std::to_string(fields.size()));
    int label = 0;
    {
      auto f = fields[0];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
      require(ec == std::errc() && p == f.data() + f.size(), ErrorKind::Parse,
              where + ": label field '" + std::string(f) + "' is not an integer");
    }
    require(label >= 0 && static_cast<std::size_t>(label) < schema.num_classes, ErrorKind::Range,
            where + ": label " + std::to_string(label) + " outside [0," + std::to_string(schema.num_classes) + ")");
    for (std::size_t k = 1; k < fields.size(); ++k) {
      auto f = fields[k];
      double v = 0.0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      require(ec == std::errc() && p == f.data() + f.size() && std::isfinite(v), ErrorKind::Parse,
              where + ": field " + std::to_string(k + 1) + " '" + std::string(f) + "' is not a finite number");
      values.push_back(v);
    }
    out.labels.push_back(label);
    out.label_mask.push_back(true);
    out.ids.push_back(out.ids.size());
  }
  out.values = Tensor2D(out.labels.size(), width, std::move(values));
  return out;
}

}  // namespace sipldl
