#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "actta/adapt.hpp"
#include "actta/config.hpp"
#include "actta/network.hpp"
#include "actta/shiftgen.hpp"
#include "actta/sweep.hpp"

namespace actta::cli {

namespace fs = std::filesystem;

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// --groups values: a preset name or "custom=<group>[,<group>...]".
inline ParamGroupSelection parse_groups_flag(const std::string& flag) {
  if (flag.rfind("custom=", 0) == 0) {
    ParamGroupSelection sel;
    std::istringstream ss(flag.substr(7));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) sel.groups.insert(item);
    }
    if (sel.groups.empty()) {
      throw ValidationError("groups", "custom selection lists no groups");
    }
    try {
      validate_selection(sel);
    } catch (const ContractError& e) {
      throw ValidationError("groups", e.what());
    }
    return sel;
  }
  return selection_preset(flag);
}

// Label used in run ids and reports. Comma-free so it is CSV-safe.
inline std::string groups_label(const std::string& flag) {
  if (flag.rfind("custom=", 0) != 0) return flag;
  std::string label = "custom[";
  std::istringstream ss(flag.substr(7));
  std::string item;
  bool first = true;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (!first) label += "+";
    label += item;
    first = false;
  }
  label += "]";
  return label;
}

// ---------------------------------------------------------------- gen-data

inline void cmd_gen_data(const ExperimentConfig& cfg,
                         const std::string& out_dir, bool also_csv,
                         std::ostream& log) {
  ensure_dir(out_dir);
  const Dataset ds = generate(cfg.dataset);
  const std::string train_path = out_dir + "/train.acds";
  const std::string test_path = out_dir + "/test.acds";
  save_batch(ds.train, train_path);
  save_batch(ds.test, test_path);
  json manifest;
  manifest["command"] = "gen-data";
  manifest["dataset"] = config_to_json(cfg)["dataset"];
  manifest["files"] = {{"train", "train.acds"}, {"test", "test.acds"}};
  manifest["counts"] = {{"train", ds.train.size()}, {"test", ds.test.size()}};
  if (also_csv) {
    save_batch_csv(ds.train, out_dir + "/train.csv");
    save_batch_csv(ds.test, out_dir + "/test.csv");
    manifest["files"]["train_csv"] = "train.csv";
    manifest["files"]["test_csv"] = "test.csv";
  }
  std::ofstream ms(out_dir + "/manifest.json");
  if (!ms) throw IoError("cannot open for writing: " + out_dir +
                         "/manifest.json");
  ms << manifest.dump(2) << "\n";
  log << "wrote " << ds.train.size() << " train and " << ds.test.size()
      << " test samples to " << out_dir << "\n";
}

// ---------------------------------------------------------------- pretrain

// Supervised source training: SGD with momentum on cross-entropy over the
// dense and affine parameters. Activation parameters stay at identity.
// Uses full batches only and updates running statistics. Throws
// NumericError if the loss goes non-finite.
inline void pretrain_model(Model& model, const LabeledBatch& train,
                           const PretrainConfig& cfg, std::ostream& log) {
  if (train.size() < cfg.batch_size) {
    throw ValidationError("pretrain.batch_size",
                          "exceeds the training set size");
  }
  ParamGroupSelection sel;
  sel.groups = {"weights", "affine"};
  model.set_trainable(sel);
  OptimizerConfig oc;
  oc.kind = OptimizerConfig::Kind::kSgd;
  oc.momentum = cfg.momentum;
  Optimizer opt(oc);
  auto groups = model.param_groups();
  opt.add_group("weights", groups["weights"], cfg.lr);
  opt.add_group("affine", groups["affine"], cfg.lr);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t n_batches = train.size() / cfg.batch_size;
  const std::size_t log_every = std::max<std::size_t>(1, cfg.epochs / 10);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<std::size_t> rows(
          order.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size),
          order.begin() +
              static_cast<std::ptrdiff_t>((b + 1) * cfg.batch_size));
      const LabeledBatch batch = take_rows(train, rows);
      Tape tape;
      const Tensor logits = model.forward(tape, batch.x, /*train_mode=*/true,
                                          nullptr, /*update_running=*/true);
      const Tensor loss = ops::cross_entropy(tape, logits, batch.y);
      if (!std::isfinite(loss.item())) {
        throw NumericError("pretraining diverged at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      epoch_loss += loss.item();
      tape.backward(loss);
      opt.step();
    }
    if ((epoch + 1) % log_every == 0 || epoch + 1 == cfg.epochs) {
      log << "epoch " << (epoch + 1) << "/" << cfg.epochs
          << " mean loss " << format_double(epoch_loss /
                                            static_cast<double>(n_batches))
          << "\n";
    }
  }
  model.freeze_all();
}

inline void cmd_pretrain(const ExperimentConfig& cfg,
                         const std::string& data_dir,
                         const std::string& out_dir, std::ostream& log) {
  const LabeledBatch train = load_batch(data_dir + "/train.acds");
  const LabeledBatch test = load_batch(data_dir + "/test.acds");
  ensure_dir(out_dir);

  MlpSpec spec;
  spec.input_dims = train.dims();
  spec.n_classes = static_cast<std::size_t>(train.n_classes);
  spec.hidden_width = cfg.model.hidden_width;
  spec.hidden_blocks = cfg.model.hidden_blocks;
  spec.norm = cfg.model.norm;
  spec.base = cfg.model.base_activation();
  spec.granularity = cfg.model.granularity;
  spec.depth_ratio = cfg.model.depth_ratio;
  spec.element_slots = cfg.model.granularity == Granularity::kPerElement
                           ? cfg.adapt.config.batch_size
                           : 1;
  spec.init_seed = cfg.model.init_seed;
  Model model = Model::make_mlp(spec);

  pretrain_model(model, train, cfg.pretrain, log);
  const double source_error = eval_error(model, test);
  const std::string checkpoint_path = out_dir + "/model.acta";
  save_checkpoint(model, checkpoint_path);

  json manifest;
  manifest["command"] = "pretrain";
  manifest["epochs"] = cfg.pretrain.epochs;
  manifest["source_test_error"] = source_error;
  manifest["checkpoint"] = "model.acta";
  std::ofstream ms(out_dir + "/manifest.json");
  if (!ms) throw IoError("cannot open for writing: " + out_dir +
                         "/manifest.json");
  ms << manifest.dump(2) << "\n";
  log << "source test error " << format_double(source_error) << ", saved "
      << checkpoint_path << "\n";
}

// ------------------------------------------------------------------- adapt

struct AdaptOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string out_dir;
  std::string schedule = "episodic";
  std::optional<CorruptionKind> corruption;
  int severity = 3;
  std::string groups = "actta_star";
  std::optional<Granularity> granularity;
  std::optional<double> depth_ratio;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
};

inline void write_run_summary(const RunMetrics& rm, const AdaptOptions& opts,
                              const AdaptConfig& acfg,
                              const std::vector<Segment>* segments,
                              const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "run_id: " << rm.run_id << "\n";
  os << "schedule: " << opts.schedule << "\n";
  std::size_t ok = 0, skipped = 0, aborted = 0;
  for (const auto& s : rm.steps) {
    if (s.status == "ok") ++ok;
    else if (s.status == "skipped") ++skipped;
    else ++aborted;
  }
  os << "batches: " << rm.steps.size() << " batch_size: " << acfg.batch_size
     << "\n";
  os << "steps ok/skipped/aborted: " << ok << "/" << skipped << "/" << aborted
     << "\n";
  os << "mean target error: " << format_double(rm.mean_target_error()) << "\n";
  if (rm.initial_source_error) {
    os << "initial source error: "
       << format_double(*rm.initial_source_error) << "\n";
  }
  if (const auto fse = rm.final_source_error()) {
    os << "final source error: " << format_double(*fse) << "\n";
  }
  if (segments) {
    os << "\nsegment  corruption  severity  target_error  source_error\n";
    std::size_t offset = 0;
    for (std::size_t s = 0; s < segments->size(); ++s) {
      const auto& seg = (*segments)[s];
      const std::size_t len = seg.batches.size();
      const double terr =
          rm.mean_target_error_window(offset, offset + len);
      std::string serr = "-";
      if (len > 0 && offset + len <= rm.steps.size()) {
        const auto& last = rm.steps[offset + len - 1];
        if (last.source_error) serr = format_double(*last.source_error);
      }
      os << (s + 1) << "  " << corruption_kind_name(seg.corruption.kind)
         << "  " << seg.corruption.severity << "  " << format_double(terr)
         << "  " << serr << "\n";
      offset += len;
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

inline void cmd_adapt(const ExperimentConfig& cfg, const AdaptOptions& opts,
                      std::ostream& log) {
  if (opts.schedule != "episodic" && opts.schedule != "continual") {
    throw ValidationError("schedule",
                          "must be 'episodic' or 'continual', got '" +
                              opts.schedule + "'");
  }
  if (opts.severity < 1 || opts.severity > 5) {
    throw ValidationError("severity", "must be in 1..5");
  }
  if (opts.schedule == "episodic" && !opts.corruption) {
    throw ValidationError("corruption",
                          "required for the episodic schedule");
  }
  const ParamGroupSelection sel = parse_groups_flag(opts.groups);

  AdaptConfig acfg = cfg.adapt.config;
  if (opts.lr) acfg.base_lr = *opts.lr;
  if (opts.batch_size) acfg.batch_size = *opts.batch_size;
  if (opts.seed) acfg.seed = *opts.seed;
  validate_adapt_config(acfg);

  Model model = load_checkpoint(opts.checkpoint);
  const LabeledBatch pool = load_batch(opts.data_dir + "/test.acds");

  if (opts.granularity || opts.depth_ratio) {
    Granularity gran = opts.granularity.value_or([&] {
      for (const auto& layer : model.layers()) {
        if (const auto* a = std::get_if<ActLayer>(&layer)) {
          return a->params.granularity;
        }
      }
      return Granularity::kPerChannel;
    }());
    model.reconfigure_activations(
        gran, opts.depth_ratio.value_or(model.depth_ratio()),
        acfg.batch_size);
  }

  ensure_dir(opts.out_dir);
  const std::string run_id =
      groups_label(opts.groups) + ":" + std::to_string(acfg.seed);

  RunMetrics rm;
  std::vector<Segment> segments;
  if (opts.schedule == "episodic") {
    CorruptionSpec cspec;
    cspec.kind = *opts.corruption;
    cspec.severity = opts.severity;
    cspec.seed = mix_seed(acfg.seed, 1);
    const auto stream = make_stream(pool, acfg.n_batches, acfg.batch_size,
                                    cspec, mix_seed(acfg.seed, 2));
    RunTag tag;
    tag.run_id = run_id;
    tag.schedule_kind = "episodic";
    tag.corruption = cspec.kind;
    tag.severity = cspec.severity;
    rm = run_episode(model, stream, acfg, sel, tag);
  } else {
    const auto& kinds = cfg.adapt.continual_kinds;
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      Segment seg;
      seg.corruption.kind = kinds[i];
      seg.corruption.severity = opts.severity;
      seg.corruption.seed = mix_seed(acfg.seed, 100 + i);
      seg.batches = make_stream(pool, acfg.n_batches, acfg.batch_size,
                                seg.corruption, mix_seed(acfg.seed, 200 + i));
      segments.push_back(std::move(seg));
    }
    rm = run_continual(model, segments, acfg, sel, pool, run_id);
  }

  write_metrics_csv({rm}, opts.out_dir + "/metrics.csv");
  write_run_summary(rm, opts, acfg,
                    opts.schedule == "continual" ? &segments : nullptr,
                    opts.out_dir + "/summary.txt");
  save_checkpoint(model, opts.out_dir + "/adapted.acta");
  log << "run " << run_id << ": mean target error "
      << format_double(rm.mean_target_error()) << "\n";
}

// ------------------------------------------------------------------- sweep

struct SweepOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string grid_path;
  std::string out_dir;
  CorruptionKind corruption = CorruptionKind::kAdditiveGaussian;
  int severity = 3;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

inline SweepGrid load_sweep_grid(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open grid: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ValidationError("grid", std::string("invalid JSON: ") + e.what());
  }
  detail_config::check_keys(j,
                            {"base_lrs", "batch_sizes", "selections",
                             "depth_ratios", "granularities"},
                            "grid");
  SweepGrid grid;
  try {
    if (j.contains("base_lrs")) {
      grid.base_lrs = j.at("base_lrs").get<std::vector<double>>();
    }
    if (j.contains("batch_sizes")) {
      grid.batch_sizes =
          j.at("batch_sizes").get<std::vector<std::size_t>>();
    }
    if (j.contains("selections")) {
      grid.selections = j.at("selections").get<std::vector<std::string>>();
    }
    if (j.contains("depth_ratios")) {
      grid.depth_ratios = j.at("depth_ratios").get<std::vector<double>>();
    }
    if (j.contains("granularities")) {
      for (const auto& g :
           j.at("granularities").get<std::vector<std::string>>()) {
        grid.granularities.push_back(parse_granularity(g));
      }
    }
  } catch (const json::exception&) {
    throw ValidationError("grid", "axis has the wrong type");
  }
  for (const auto& s : grid.selections) {
    selection_preset(s);  // throws ValidationError on unknown presets
  }
  for (double lr : grid.base_lrs) {
    if (!(lr > 0.0)) throw ValidationError("grid.base_lrs", "must be positive");
  }
  for (std::size_t bs : grid.batch_sizes) {
    if (bs < 2) throw ValidationError("grid.batch_sizes", "must be >= 2");
  }
  for (double dr : grid.depth_ratios) {
    if (!(dr >= 0.0 && dr <= 1.0)) {
      throw ValidationError("grid.depth_ratios", "must be in [0, 1]");
    }
  }
  return grid;
}

inline void cmd_sweep(const ExperimentConfig& cfg, const SweepOptions& opts,
                      std::ostream& log) {
  if (opts.severity < 1 || opts.severity > 5) {
    throw ValidationError("severity", "must be in 1..5");
  }
  const SweepGrid grid = load_sweep_grid(opts.grid_path);
  Model model = load_checkpoint(opts.checkpoint);
  const LabeledBatch pool = load_batch(opts.data_dir + "/test.acds");
  AdaptConfig acfg = cfg.adapt.config;
  if (opts.seed) acfg.seed = *opts.seed;

  CorruptionSpec cspec;
  cspec.kind = opts.corruption;
  cspec.severity = opts.severity;
  const SweepResult result =
      run_sweep(model, pool, acfg, grid, cspec, acfg.seed, opts.threads);

  ensure_dir(opts.out_dir);
  write_sweep_summary_csv(result, opts.out_dir + "/sweep_summary.csv");
  std::vector<RunMetrics> all;
  for (const auto& cell : result.cells) {
    if (cell.status == "ok") all.push_back(cell.metrics);
  }
  write_metrics_csv(all, opts.out_dir + "/sweep_metrics.csv");
  std::size_t ok = 0;
  for (const auto& cell : result.cells) {
    if (cell.status == "ok") ++ok;
  }
  log << "sweep: " << ok << "/" << result.cells.size() << " cells ok\n";
}

// ------------------------------------------------------------------ report

struct MetricsRow {
  std::string run_id;
  std::string schedule_kind;
  std::string corruption_kind;
  int severity = 0;
  std::size_t batch_index = 0;
  double target_error = 0.0;
  double mean_entropy = 0.0;
  double selected_fraction = 0.0;
  double pass_through_ratio = 0.0;
  std::optional<double> source_error;
  double step_wall_time_s = 0.0;
  std::string status;
};

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(is, line)) {
    throw FormatError(FormatError::Kind::kTruncated,
                      "empty metrics file " + path);
  }
  if (line != kMetricsCsvHeader) {
    throw FormatError(FormatError::Kind::kBadHeader,
                      "unexpected metrics header in " + path);
  }
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) {
      throw FormatError(FormatError::Kind::kInconsistent,
                        "metrics row has " + std::to_string(f.size()) +
                            " fields, expected 12");
    }
    MetricsRow r;
    r.run_id = f[0];
    r.schedule_kind = f[1];
    r.corruption_kind = f[2];
    r.severity = static_cast<int>(parse_int_field(f[3], "severity"));
    r.batch_index = static_cast<std::size_t>(
        parse_int_field(f[4], "batch_index"));
    r.target_error = parse_double_field(f[5], "target_error");
    r.mean_entropy = parse_double_field(f[6], "mean_entropy");
    r.selected_fraction = parse_double_field(f[7], "selected_fraction");
    r.pass_through_ratio = parse_double_field(f[8], "pass_through_ratio");
    if (!f[9].empty()) {
      r.source_error = parse_double_field(f[9], "source_error");
    }
    r.step_wall_time_s = parse_double_field(f[10], "step_wall_time_s");
    r.status = f[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string method_of_run_id(const std::string& run_id) {
  const auto pos = run_id.rfind(':');
  return pos == std::string::npos ? run_id : run_id.substr(0, pos);
}

// Aggregates one or more metrics files into a per-method x per-corruption
// table of run-mean target errors (mean and sample standard deviation over
// runs), plus final source errors where runs probed them.
inline void cmd_report(const std::vector<std::string>& csv_paths,
                       std::ostream& out) {
  struct RunAgg {
    double target_sum = 0.0;
    std::size_t n_steps = 0;
  };
  // (method, corruption) -> list of per-run mean target errors
  std::map<std::pair<std::string, std::string>, std::vector<double>> cells;
  std::map<std::string, std::vector<double>> source_by_method;
  std::set<std::string> corruption_names;

  for (std::size_t file_idx = 0; file_idx < csv_paths.size(); ++file_idx) {
    const auto rows = read_metrics_csv(csv_paths[file_idx]);
    // Group rows of this file by run and corruption segment.
    std::map<std::pair<std::string, std::string>, RunAgg> per_run;
    std::map<std::string, std::optional<double>> run_final_source;
    for (const auto& r : rows) {
      auto& agg = per_run[{r.run_id, r.corruption_kind}];
      agg.target_sum += r.target_error;
      agg.n_steps += 1;
      if (r.source_error) run_final_source[r.run_id] = r.source_error;
      corruption_names.insert(r.corruption_kind);
    }
    for (const auto& [key, agg] : per_run) {
      const auto method = method_of_run_id(key.first);
      cells[{method, key.second}].push_back(
          agg.target_sum / static_cast<double>(agg.n_steps));
    }
    for (const auto& [run_id, src] : run_final_source) {
      if (src) source_by_method[method_of_run_id(run_id)].push_back(*src);
    }
  }

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  auto std_of = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };

  std::set<std::string> methods;
  for (const auto& [key, _] : cells) methods.insert(key.first);

  out << "# Adaptation report\n\n";
  out << "Mean target error per run, aggregated over runs (mean +/- std).\n\n";
  out << "| method |";
  for (const auto& c : corruption_names) out << " " << c << " |";
  out << " overall |\n";
  out << "|---|";
  for (std::size_t i = 0; i < corruption_names.size(); ++i) out << "---|";
  out << "---|\n";
  for (const auto& method : methods) {
    out << "| " << method << " |";
    std::vector<double> all_runs;
    for (const auto& c : corruption_names) {
      auto it = cells.find({method, c});
      if (it == cells.end()) {
        out << " - |";
        continue;
      }
      out << " " << format_double(mean_of(it->second)) << " +/- "
          << format_double(std_of(it->second)) << " |";
      for (double v : it->second) all_runs.push_back(v);
    }
    out << " " << format_double(mean_of(all_runs)) << " |\n";
  }

  if (!source_by_method.empty()) {
    out << "\nFinal clean-source error after adaptation (mean +/- std over"
           " runs).\n\n";
    out << "| method | final source error |\n|---|---|\n";
    for (const auto& [method, vals] : source_by_method) {
      out << "| " << method << " | " << format_double(mean_of(vals))
          << " +/- " << format_double(std_of(vals)) << " |\n";
    }
  }
}

inline void cmd_report_to_file(const std::vector<std::string>& csv_paths,
                               const std::string& out_path,
                               std::ostream& log) {
  if (out_path.empty()) {
    cmd_report(csv_paths, std::cout);
    return;
  }
  std::ofstream os(out_path);
  if (!os) throw IoError("cannot open for writing: " + out_path);
  cmd_report(csv_paths, os);
  if (!os) throw IoError("write failed: " + out_path);
  log << "wrote " << out_path << "\n";
}

}  // namespace actta::cli
