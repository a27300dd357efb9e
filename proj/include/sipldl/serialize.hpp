#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "sipldl/bounds.hpp"
#include "sipldl/data.hpp"
#include "sipldl/errors.hpp"
#include "sipldl/harness.hpp"
#include "sipldl/metrics.hpp"

namespace sipldl {

using Json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kRecordSchemaVersion = 1;

namespace json_detail {

template <class T>
inline constexpr bool is_vector_v = false;
template <class T>
inline constexpr bool is_vector_v<std::vector<T>> = true;

template <class T>
T get_as(const Json& j, const std::string& path) {
  auto bad = [&](const char* want) -> T {
    fail(ErrorKind::Schema, path + ": expected " + want + ", found " + std::string(j.type_name()));
  };
  if constexpr (std::is_same_v<T, bool>) {
    return j.is_boolean() ? j.get<bool>() : bad("boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return j.is_string() ? j.get<std::string>() : bad("string");
  } else if constexpr (std::is_floating_point_v<T>) {
    return j.is_number() ? j.get<T>() : bad("number");
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    return j.is_number_unsigned() ? j.get<T>() : bad("non-negative integer");
  } else if constexpr (std::is_integral_v<T>) {
    return j.is_number_integer() ? j.get<T>() : bad("integer");
  } else if constexpr (is_vector_v<T>) {
    if (!j.is_array()) return bad("array");
    T out;
    for (std::size_t i = 0; i < j.size(); ++i)
      out.push_back(get_as<typename T::value_type>(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
  } else {
    static_assert(sizeof(T) == 0, "unsupported field type");
  }
}

/// Reads fields of one JSON object, tracking the key path for error messages
/// and rejecting keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    require(obj_.is_object(), ErrorKind::Schema,
            (path_.empty() ? std::string("document") : path_) + ": expected object, found " + obj_.type_name());
  }

  template <class T>
  void optional(const char* key, T& out) {
    seen_.insert(key);
    if (obj_.contains(key)) out = get_as<T>(obj_.at(key), field(key));
  }

  template <class T>
  T required(const char* key) {
    seen_.insert(key);
    require(obj_.contains(key), ErrorKind::Schema, field(key) + ": required field missing");
    return get_as<T>(obj_.at(key), field(key));
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : obj_.items())
      require(seen_.count(k) > 0, ErrorKind::Schema, field(k.c_str()) + ": unknown field");
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace json_detail

// ---- configuration -------------------------------------------------------

inline Json to_json(const AugmentParams& a) {
  return {{"weak_jitter", a.weak_jitter},
          {"weak_scale", a.weak_scale},
          {"strong_jitter", a.strong_jitter},
          {"max_segments", a.max_segments}};
}

inline Json to_json(const EncoderConfig& e) {
  return {{"in_channels", e.in_channels}, {"length", e.length},         {"conv_channels", e.conv_channels},
          {"kernel_widths", e.kernel_widths}, {"pool_width", e.pool_width}, {"embed_dim", e.embed_dim}};
}

inline Json to_json(const TrainConfig& c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"variant", std::string(to_string(c.variant))},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"tau", c.tau},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"label_fraction", c.label_fraction},
          {"seed", c.seed},
          {"seeds", c.seeds},
          {"optimizer",
           {{"lr", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"eps", c.adam.eps},
            {"weight_decay", c.adam.weight_decay}}},
          {"graph",
           {{"normalize", c.normalize_similarity}, {"self_loop", c.self_loop}, {"mid_weighted", c.mid_weighted}}},
          {"fixed_views", c.fixed_views},
          {"augment", to_json(c.augment)},
          {"encoder", to_json(c.encoder)},
          {"probe",
           {{"epochs", c.probe.epochs},
            {"batch_size", c.probe.batch_size},
            {"lr", c.probe.lr},
            {"weight_decay", c.probe.weight_decay}}}};
}

/// Fields absent from `j` keep the values already in `base`; unknown fields
/// and wrong types raise Schema errors naming the offending path.
inline TrainConfig train_config_from_json(const Json& j, TrainConfig base = {}) {
  json_detail::ObjectReader r(j, "");
  int version = kConfigSchemaVersion;
  r.optional("schema_version", version);
  require(version == kConfigSchemaVersion, ErrorKind::Schema,
          "schema_version: unsupported version " + std::to_string(version));
  std::string variant(to_string(base.variant));
  r.optional("variant", variant);
  try {
    base.variant = parse_variant(variant);
  } catch (const Error& e) {
    fail(ErrorKind::Schema, std::string("variant: ") + e.what());
  }
  r.optional("epochs", base.epochs);
  r.optional("batch_size", base.batch_size);
  r.optional("tau", base.tau);
  r.optional("lambda1", base.lambda1);
  r.optional("lambda2", base.lambda2);
  r.optional("label_fraction", base.label_fraction);
  r.optional("seed", base.seed);
  r.optional("seeds", base.seeds);
  r.optional("fixed_views", base.fixed_views);
  if (const Json* o = r.child("optimizer")) {
    json_detail::ObjectReader s(*o, "optimizer");
    s.optional("lr", base.adam.lr);
    s.optional("beta1", base.adam.beta1);
    s.optional("beta2", base.adam.beta2);
    s.optional("eps", base.adam.eps);
    s.optional("weight_decay", base.adam.weight_decay);
    s.finish();
  }
  if (const Json* o = r.child("graph")) {
    json_detail::ObjectReader s(*o, "graph");
    s.optional("normalize", base.normalize_similarity);
    s.optional("self_loop", base.self_loop);
    s.optional("mid_weighted", base.mid_weighted);
    s.finish();
  }
  if (const Json* o = r.child("augment")) {
    json_detail::ObjectReader s(*o, "augment");
    s.optional("weak_jitter", base.augment.weak_jitter);
    s.optional("weak_scale", base.augment.weak_scale);
    s.optional("strong_jitter", base.augment.strong_jitter);
    s.optional("max_segments", base.augment.max_segments);
    s.finish();
  }
  if (const Json* o = r.child("encoder")) {
    json_detail::ObjectReader s(*o, "encoder");
    s.optional("in_channels", base.encoder.in_channels);
    s.optional("length", base.encoder.length);
    s.optional("conv_channels", base.encoder.conv_channels);
    s.optional("kernel_widths", base.encoder.kernel_widths);
    s.optional("pool_width", base.encoder.pool_width);
    s.optional("embed_dim", base.encoder.embed_dim);
    s.finish();
  }
  if (const Json* o = r.child("probe")) {
    json_detail::ObjectReader s(*o, "probe");
    s.optional("epochs", base.probe.epochs);
    s.optional("batch_size", base.probe.batch_size);
    s.optional("lr", base.probe.lr);
    s.optional("weight_decay", base.probe.weight_decay);
    s.finish();
  }
  r.finish();
  return base;
}

struct SynthDocument {
  SynthSpec spec;
  double test_fraction = 0.2;
  double imbalance_ratio = 0.0;  ///< derived; when present and class_counts absent, counts are geometric
  std::size_t total = 0;
};

inline Json to_json(const SynthSpec& s, double test_fraction) {
  return {{"schema_version", kConfigSchemaVersion},
          {"class_counts", s.class_counts},
          {"length", s.length},
          {"channels", s.channels},
          {"base_frequency", s.base_frequency},
          {"frequency_step", s.frequency_step},
          {"envelope_depth", s.envelope_depth},
          {"noise", s.noise},
          {"phase_jitter", s.phase_jitter},
          {"amplitude_jitter", s.amplitude_jitter},
          {"seed", s.seed},
          {"test_fraction", test_fraction},
          {"imbalance_ratio", s.imbalance_ratio()}};
}

/// Accepts either explicit `class_counts` or `total` + `classes` +
/// `imbalance_ratio` (geometric counts).
inline SynthDocument synth_from_json(const Json& j) {
  json_detail::ObjectReader r(j, "");
  int version = kConfigSchemaVersion;
  r.optional("schema_version", version);
  require(version == kConfigSchemaVersion, ErrorKind::Schema,
          "schema_version: unsupported version " + std::to_string(version));
  SynthDocument d;
  SynthSpec& s = d.spec;
  std::size_t classes = 0;
  r.optional("class_counts", s.class_counts);
  r.optional("total", d.total);
  r.optional("classes", classes);
  r.optional("imbalance_ratio", d.imbalance_ratio);
  r.optional("length", s.length);
  r.optional("channels", s.channels);
  r.optional("base_frequency", s.base_frequency);
  r.optional("frequency_step", s.frequency_step);
  r.optional("envelope_depth", s.envelope_depth);
  r.optional("noise", s.noise);
  r.optional("phase_jitter", s.phase_jitter);
  r.optional("amplitude_jitter", s.amplitude_jitter);
  r.optional("seed", s.seed);
  r.optional("test_fraction", d.test_fraction);
  r.finish();
  if (s.class_counts.empty()) {
    require(d.total > 0 && classes > 0 && d.imbalance_ratio >= 1.0, ErrorKind::Schema,
            "class_counts: required unless total, classes and imbalance_ratio >= 1 are given");
    s.class_counts = geometric_class_counts(d.total, classes, d.imbalance_ratio);
  }
  try {
    s.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Schema, e.what());
  }
  require(d.test_fraction > 0.0 && d.test_fraction < 1.0, ErrorKind::Schema,
          "test_fraction: must lie in (0, 1)");
  return d;
}

// ---- results -------------------------------------------------------------

inline Json to_json(const ClassificationMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"macro_f1", m.macro_f1},
          {"per_class_f1", m.per_class_f1},
          {"per_class_undefined", m.per_class_undefined},
          {"confusion", m.confusion}};
}

inline ClassificationMetrics metrics_from_json(const Json& j, const std::string& path) {
  json_detail::ObjectReader r(j, path);
  ClassificationMetrics m;
  m.accuracy = r.required<double>("accuracy");
  m.macro_f1 = r.required<double>("macro_f1");
  m.per_class_f1 = r.required<std::vector<double>>("per_class_f1");
  const auto undefined = r.required<std::vector<bool>>("per_class_undefined");
  m.per_class_undefined.assign(undefined.begin(), undefined.end());
  r.optional("confusion", m.confusion);
  r.finish();
  require(m.per_class_undefined.size() == m.per_class_f1.size(), ErrorKind::Schema,
          r.field("per_class_undefined") + ": length differs from per_class_f1");
  return m;
}

inline Json to_json(const RunRecord& rec) {
  Json history = Json::array();
  for (const auto& e : rec.history)
    history.push_back({{"epoch", e.epoch},
                       {"loss", e.loss},
                       {"components", e.components},
                       {"class_mean_loss", e.class_mean_loss},
                       {"class_anchors", e.class_anchors}});
  Json j{{"schema_version", kRecordSchemaVersion},
         {"metric_scale", "fraction in [0, 1]"},
         {"variant", rec.variant},
         {"seed", rec.seed},
         {"config", to_json(rec.config)},
         {"train_class_counts", rec.train_class_counts},
         {"labeled_class_counts", rec.labeled_class_counts},
         {"history", history}};
  j["final_metrics"] = rec.final_metrics ? to_json(*rec.final_metrics) : Json(nullptr);
  return j;
}

inline RunRecord run_record_from_json(const Json& j) {
  json_detail::ObjectReader r(j, "");
  const int version = r.required<int>("schema_version");
  require(version == kRecordSchemaVersion, ErrorKind::Schema,
          "schema_version: unsupported version " + std::to_string(version));
  r.required<std::string>("metric_scale");
  RunRecord rec;
  rec.variant = r.required<std::string>("variant");
  rec.seed = r.required<std::uint64_t>("seed");
  if (const Json* c = r.child("config")) rec.config = train_config_from_json(*c);
  rec.train_class_counts = r.required<std::vector<std::size_t>>("train_class_counts");
  r.optional("labeled_class_counts", rec.labeled_class_counts);
  const Json* hist = r.child("history");
  require(hist && hist->is_array(), ErrorKind::Schema, "history: required array missing");
  for (std::size_t i = 0; i < hist->size(); ++i) {
    json_detail::ObjectReader e((*hist)[i], "history[" + std::to_string(i) + "]");
    EpochRecord er;
    er.epoch = e.required<std::size_t>("epoch");
    er.loss = e.required<double>("loss");
    if (const Json* comp = e.child("components")) {
      json_detail::ObjectReader cr(*comp, e.field("components"));
      for (const auto& [k, v] : comp->items()) er.components[k] = cr.required<double>(k.c_str());
    }
    er.class_mean_loss = e.required<std::vector<double>>("class_mean_loss");
    e.optional("class_anchors", er.class_anchors);
    e.finish();
    rec.history.push_back(std::move(er));
  }
  if (const Json* m = r.child("final_metrics"); m && !m->is_null())
    rec.final_metrics = metrics_from_json(*m, "final_metrics");
  r.finish();
  return rec;
}

/// `epoch,class,mean_loss` rows for every epoch and class.
inline std::string class_loss_csv(const RunRecord& rec) {
  std::ostringstream os;
  os << "epoch,class,mean_loss\n";
  char buf[64];
  for (const auto& e : rec.history)
    for (std::size_t c = 0; c < e.class_mean_loss.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", e.class_mean_loss[c]);
      os << e.epoch << ',' << c << ',' << buf << '\n';
    }
  return os.str();
}

inline Json to_json(const BoundReport& b) {
  Json anchors = Json::array();
  for (const auto& a : b.anchors)
    anchors.push_back({{"index", a.index},
                       {"mean_positive", a.mean_positive},
                       {"mean_negative", a.mean_negative},
                       {"first_term", a.first_term},
                       {"confrontation", a.confrontation},
                       {"bound", a.bound},
                       {"actual", a.actual}});
  return {{"class", b.cls},
          {"kind", b.kind == BoundKind::Supervised ? "supervised" : "unsupervised"},
          {"temperature", b.temperature},
          {"bound_total", b.bound_total},
          {"actual_total", b.actual_total},
          {"slack", b.slack},
          {"equality",
           {{"q1", b.equality.q1},
            {"q1_max_dev", b.equality.q1_max_dev},
            {"q2", b.equality.q2},
            {"q2_max_dev", b.equality.q2_max_dev}}},
          {"anchors", anchors}};
}

inline Json to_json(const FuzzConfig& f) {
  return {{"seeds", f.seeds}, {"n_min", f.n_min}, {"n_max", f.n_max}, {"h_min", f.h_min}, {"h_max", f.h_max},
          {"c_min", f.c_min}, {"c_max", f.c_max}, {"taus", f.taus},   {"base_seed", f.base_seed}};
}

inline Json to_json(const FuzzSummary& s) {
  auto finite_or_null = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return {{"configurations", s.configurations},
          {"class_evaluations", s.class_evaluations},
          {"violations", s.violations},
          {"equality_inconsistencies", s.equality_inconsistencies},
          {"equality_cases", s.equality_cases},
          {"worst_slack_sc", finite_or_null(s.worst_slack_sc)},
          {"worst_slack_uc", finite_or_null(s.worst_slack_uc)},
          {"worst_seed_sc", s.worst_seed_sc},
          {"worst_seed_uc", s.worst_seed_uc},
          {"ok", s.ok()}};
}

// ---- files ---------------------------------------------------------------

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

/// Writes through a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + tmp.string());
    out << contents;
    out.flush();
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace sipldl
