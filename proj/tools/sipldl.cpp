// Command-line entry point: bound verification, synthetic data, pretraining,
// linear probing and seed aggregation.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "sipldl/sipldl.hpp"

namespace fs = std::filesystem;
using namespace sipldl;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitVerification = 2;

fs::path default_output(const std::string& sub) {
  const char* root = std::getenv("SIPLDL_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / sub;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_manifest(const fs::path& dir, const std::string& subcommand, const std::string& config_path,
                    const Json& resolved, std::optional<std::uint64_t> seed, double seconds) {
  Json m{{"subcommand", subcommand},
         {"config_path", config_path},
         {"config", resolved},
         {"output_dir", dir.string()},
         {"tool_version", kToolVersion},
         {"finished_at", utc_timestamp()},
         {"wall_clock_seconds", seconds}};
  m["seed"] = seed ? Json(*seed) : Json(nullptr);
  write_json_file(dir / "manifest.json", m);
}

struct Dataset {
  DelimitedSchema schema;
  TimeSeriesBatch train;
  TimeSeriesBatch test;
};

Dataset load_dataset(const fs::path& dir) {
  const Json meta = read_json_file(dir / "dataset.json");
  json_detail::ObjectReader r(meta, "dataset.json");
  Dataset d;
  d.schema.channels = r.required<std::size_t>("channels");
  d.schema.length = r.required<std::size_t>("length");
  d.schema.num_classes = r.required<std::size_t>("num_classes");
  for (const char* k : {"class_counts", "train_rows", "test_rows", "imbalance_ratio", "source"}) r.child(k);
  r.finish();
  require(fs::exists(dir / "train.csv"), ErrorKind::Io, "missing " + (dir / "train.csv").string());
  d.train = load_delimited((dir / "train.csv").string(), d.schema);
  if (fs::exists(dir / "test.csv")) d.test = load_delimited((dir / "test.csv").string(), d.schema);
  require(d.train.size() > 0, ErrorKind::Schema, (dir / "train.csv").string() + ": no samples");
  return d;
}

TrainConfig load_config(const std::string& path) {
  return path.empty() ? TrainConfig{} : train_config_from_json(read_json_file(path));
}

// ---- verify-bounds -------------------------------------------------------

struct VerifyOptions {
  FuzzConfig fuzz;
  std::string config;
  std::string out;
};

/// Evaluates both bounds for every class of an explicit configuration file:
/// {"embeddings": [[...]], "labels": [...], "partner": [...]?, "tau": t}.
int verify_file(const VerifyOptions& o) {
  const Json doc = read_json_file(o.config);
  json_detail::ObjectReader r(doc, "");
  const auto rows = r.required<std::vector<std::vector<double>>>("embeddings");
  const auto labels_in = r.required<std::vector<int>>("labels");
  std::vector<std::size_t> partner;
  r.optional("partner", partner);
  double tau = 1.0;
  r.optional("tau", tau);
  r.finish();
  require(!rows.empty(), ErrorKind::Schema, "embeddings: empty");
  const Tensor2D z = Tensor2D::from_rows(rows);
  BatchIndexing idx;
  if (partner.empty()) {
    require(labels_in.size() * 2 == z.rows() || labels_in.size() == z.rows(), ErrorKind::Schema,
            "labels: need one label per row or per view pair");
    require(z.rows() % 2 == 0, ErrorKind::Schema, "embeddings: two-view layout needs an even row count");
    std::vector<int> view(labels_in.begin(), labels_in.begin() + static_cast<std::ptrdiff_t>(z.rows() / 2));
    idx = BatchIndexing::two_views(view);
    if (labels_in.size() == z.rows()) idx.labels = labels_in;
  } else {
    idx.labels = labels_in;
    idx.partner = partner;
  }
  idx.validate_pairs();
  require(idx.size() == z.rows(), ErrorKind::Schema, "labels: length does not match embeddings");

  Json reports = Json::array();
  std::size_t violations = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (int y : idx.classes()) {
    if (idx.members(y).size() < 2 || idx.complement(y).empty()) continue;
    for (const BoundReport& b : {bound_sc(z, idx, y, tau), bound_uc(z, idx, y, tau)}) {
      if (b.slack < -kSlackTolerance) ++violations;
      worst = std::min(worst, b.slack);
      reports.push_back(to_json(b));
    }
  }
  Json out{{"source", o.config}, {"temperature", tau}, {"violations", violations}, {"reports", reports}};
  out["worst_slack"] = std::isfinite(worst) ? Json(worst) : Json(nullptr);
  const std::string text = out.dump(2);
  if (o.out.empty()) std::cout << text << "\n";
  else write_file_atomic(o.out, text + "\n");
  std::cerr << "classes evaluated: " << reports.size() / 2 << ", worst slack "
            << (std::isfinite(worst) ? std::to_string(worst) : "n/a") << ", violations " << violations << "\n";
  return violations == 0 ? kExitOk : kExitVerification;
}

int cmd_verify_bounds(const VerifyOptions& o) {
  if (!o.config.empty()) return verify_file(o);
  o.fuzz.validate();
  const Stopwatch sw;
  const FuzzSummary s = run_bound_fuzz(o.fuzz);
  Json out{{"fuzz", to_json(o.fuzz)}, {"summary", to_json(s)}, {"seconds", sw.seconds()}};
  const std::string text = out.dump(2);
  if (o.out.empty()) std::cout << text << "\n";
  else write_file_atomic(o.out, text + "\n");
  std::cerr << s.configurations << " configurations, " << s.class_evaluations << " class evaluations, "
            << s.violations << " violations, " << s.equality_inconsistencies << " equality inconsistencies\n";
  return s.ok() ? kExitOk : kExitVerification;
}

// ---- synth ---------------------------------------------------------------

int cmd_synth(const std::string& spec_path, fs::path out) {
  const Stopwatch sw;
  const SynthDocument doc = synth_from_json(read_json_file(spec_path));
  const TimeSeriesBatch all = generate(doc.spec);
  const TrainTestSplit split = stratified_split(all, doc.test_fraction, doc.spec.seed);
  fs::create_directories(out);
  write_delimited((out / "train.csv").string(), split.train);
  write_delimited((out / "test.csv").string(), split.test);
  write_json_file(out / "dataset.json", {{"channels", doc.spec.channels},
                                         {"length", doc.spec.length},
                                         {"num_classes", doc.spec.num_classes()},
                                         {"class_counts", doc.spec.class_counts},
                                         {"imbalance_ratio", doc.spec.imbalance_ratio()},
                                         {"train_rows", split.train.size()},
                                         {"test_rows", split.test.size()},
                                         {"source", spec_path}});
  write_manifest(out, "synth", spec_path, to_json(doc.spec, doc.test_fraction), doc.spec.seed, sw.seconds());
  std::cerr << "wrote " << all.size() << " samples (r_im " << doc.spec.imbalance_ratio() << ") to " << out << "\n";
  return kExitOk;
}

// ---- pretrain ------------------------------------------------------------

struct PretrainOptions {
  std::string config;
  std::string data;
  fs::path out;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<double> tau;
  std::size_t jobs = 1;
};

/// Runs `tasks` on up to `jobs` threads; the first failure is rethrown.
template <class F>
void fan_out(std::size_t count, std::size_t jobs, F&& task) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t k; (k = next++) < count;) {
      try {
        task(k);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(jobs, count); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

int cmd_pretrain(const PretrainOptions& o) {
  TrainConfig base = load_config(o.config);
  if (o.epochs) base.epochs = *o.epochs;
  if (o.batch_size) base.batch_size = *o.batch_size;
  if (o.lr) base.adam.lr = *o.lr;
  if (o.tau) base.tau = *o.tau;
  if (!o.seeds.empty()) base.seeds = o.seeds;
  require(!base.seeds.empty(), ErrorKind::Parameter, "no seeds to run");
  std::vector<Variant> variants;
  for (const auto& v : o.variants) variants.push_back(parse_variant(v));
  if (variants.empty()) variants.push_back(base.variant);
  base.validate();

  const Dataset data = load_dataset(o.data);
  require(data.test.size() > 0, ErrorKind::Schema, o.data + "/test.csv: no samples to evaluate on");

  struct Task {
    Variant variant;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (Variant v : variants)
    for (std::uint64_t s : base.seeds) tasks.push_back({v, s});

  std::mutex log_mu;
  fan_out(tasks.size(), o.jobs, [&](std::size_t k) {
    const Stopwatch sw;
    TrainConfig cfg = base;
    cfg.variant = tasks[k].variant;
    cfg.seed = tasks[k].seed;
    const fs::path dir = o.out / std::string(to_string(cfg.variant)) / ("seed_" + std::to_string(cfg.seed));
    EvaluatedRun run = run_and_evaluate(cfg, data.train, data.test);
    fs::create_directories(dir);
    save_checkpoint((dir / "params.ckpt").string(), run.params.named());
    write_json_file(dir / "record.json", to_json(run.record));
    write_file_atomic(dir / "class_losses.csv", class_loss_csv(run.record));
    write_manifest(dir, "pretrain", o.config, to_json(run.record.config), cfg.seed, sw.seconds());
    std::lock_guard lock(log_mu);
    std::cerr << to_string(cfg.variant) << " seed " << cfg.seed << ": final loss "
              << run.record.history.back().loss << ", accuracy " << run.record.final_metrics->accuracy
              << ", macro-F1 " << run.record.final_metrics->macro_f1 << " -> " << dir.string() << "\n";
  });
  return kExitOk;
}

// ---- probe ---------------------------------------------------------------

int cmd_probe(const std::string& config, const std::string& data_dir, const std::string& params,
              std::optional<std::uint64_t> seed_flag, const fs::path& out) {
  const Stopwatch sw;
  TrainConfig cfg = load_config(config);
  if (seed_flag) cfg.seed = *seed_flag;
  cfg.validate();
  const Dataset data = load_dataset(data_dir);
  require(data.test.size() > 0, ErrorKind::Schema, data_dir + "/test.csv: no samples to evaluate on");
  EncoderConfig enc = cfg.encoder;
  enc.in_channels = data.schema.channels;
  enc.length = data.schema.length;
  ModelParams model = init_model(enc, data.schema.num_classes, cfg.seed);
  if (!params.empty()) assign_checkpoint(model.named_encoder(), load_checkpoint(params));
  const ProbeResult res = linear_probe(model.encoder, data.train, data.test, cfg.probe, cfg.seed);
  Json m = to_json(res.metrics);
  m["metric_scale"] = "fraction in [0, 1]";
  m["encoder"] = params.empty() ? "random initialization" : params;
  write_json_file(out / "metrics.json", m);
  Json resolved = to_json(cfg);
  resolved["encoder"] = to_json(enc);
  write_manifest(out, "probe", config, resolved, cfg.seed, sw.seconds());
  std::cerr << "accuracy " << res.metrics.accuracy << ", macro-F1 " << res.metrics.macro_f1 << "\n";
  return kExitOk;
}

// ---- report --------------------------------------------------------------

int cmd_report(const std::vector<std::string>& run_dirs, const fs::path& out) {
  const Stopwatch sw;
  std::vector<fs::path> files;
  for (const auto& d : run_dirs) {
    require(fs::exists(d), ErrorKind::Io, "missing run directory " + d);
    if (fs::exists(fs::path(d) / "record.json")) {
      files.push_back(fs::path(d) / "record.json");
      continue;
    }
    for (const auto& e : fs::recursive_directory_iterator(d))
      if (e.is_regular_file() && e.path().filename() == "record.json") files.push_back(e.path());
  }
  require(!files.empty(), ErrorKind::Io, "no record.json found under the given run directories");
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> runs;
  for (const auto& f : files) {
    try {
      runs.push_back(run_record_from_json(read_json_file(f)));
    } catch (const Error& e) {
      fail(e.kind(), f.string() + ": " + e.what());
    }
  }
  const auto rows = summarize_runs(runs);
  write_file_atomic(out / "report.csv", report_csv(rows));
  Json inputs = Json::array();
  for (const auto& f : files) inputs.push_back(f.string());
  write_manifest(out, "report", "", {{"records", inputs}}, std::nullopt, sw.seconds());
  std::cout << report_csv(rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive-loss bound verification and imbalanced time-series pretraining"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  VerifyOptions vo;
  auto* verify = app.add_subcommand("verify-bounds", "Fuzz or evaluate the contrastive-loss lower bounds");
  verify->add_option("--seeds", vo.fuzz.seeds, "number of random configurations");
  verify->add_option("--n-min", vo.fuzz.n_min, "smallest batch (rows, both views)");
  verify->add_option("--n-max", vo.fuzz.n_max, "largest batch (rows, both views)");
  verify->add_option("--h-min", vo.fuzz.h_min, "smallest embedding width");
  verify->add_option("--h-max", vo.fuzz.h_max, "largest embedding width");
  verify->add_option("--c-min", vo.fuzz.c_min, "fewest classes");
  verify->add_option("--c-max", vo.fuzz.c_max, "most classes");
  verify->add_option("--tau", vo.fuzz.taus, "temperatures, cycled over configurations");
  verify->add_option("--base-seed", vo.fuzz.base_seed, "seed of the first configuration");
  verify->add_option("--config", vo.config, "evaluate one configuration file instead of fuzzing")
      ->check(CLI::ExistingFile);
  verify->add_option("--out", vo.out, "write the JSON report here instead of stdout");

  std::string synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic imbalanced time-series dataset");
  synth->add_option("--spec", synth_spec, "synthetic spec JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output directory");

  PretrainOptions po;
  std::string pretrain_out;
  auto* pre = app.add_subcommand("pretrain", "Pretrain, probe and record one run per variant and seed");
  pre->add_option("--config", po.config, "training config JSON")->check(CLI::ExistingFile);
  pre->add_option("--data", po.data, "dataset directory written by synth")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", pretrain_out, "output directory");
  pre->add_option("--variant", po.variants, "variant(s); overrides the config");
  pre->add_option("--seed", po.seeds, "seed(s); overrides the config");
  pre->add_option("--epochs", po.epochs, "epochs");
  pre->add_option("--batch-size", po.batch_size, "batch size");
  pre->add_option("--lr", po.lr, "Adam learning rate");
  pre->add_option("--tau", po.tau, "temperature");
  pre->add_option("--jobs", po.jobs, "concurrent runs")->check(CLI::PositiveNumber);

  std::string probe_config, probe_data, probe_params, probe_out;
  std::optional<std::uint64_t> probe_seed;
  auto* probe = app.add_subcommand("probe", "Linear probe of a frozen (or random) encoder");
  probe->add_option("--config", probe_config, "training config JSON")->check(CLI::ExistingFile);
  probe->add_option("--data", probe_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  probe->add_option("--params", probe_params, "checkpoint; omit for a randomly initialized encoder")
      ->check(CLI::ExistingFile);
  probe->add_option("--seed", probe_seed, "seed");
  probe->add_option("--out", probe_out, "output directory");

  std::vector<std::string> report_runs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Aggregate run records into a mean±std table");
  report->add_option("--runs", report_runs, "run directories (searched recursively)")->required();
  report->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  auto out_or = [](const std::string& flag, const char* sub) { return flag.empty() ? default_output(sub) : fs::path(flag); };
  try {
    if (*verify) return cmd_verify_bounds(vo);
    if (*synth) return cmd_synth(synth_spec, out_or(synth_out, "synth"));
    if (*pre) {
      po.out = out_or(pretrain_out, "pretrain");
      return cmd_pretrain(po);
    }
    if (*probe) return cmd_probe(probe_config, probe_data, probe_params, probe_seed, out_or(probe_out, "probe"));
    if (*report) return cmd_report(report_runs, out_or(report_out, "report"));
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
