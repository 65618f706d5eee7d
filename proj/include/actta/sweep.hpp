#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "actta/adapt.hpp"
#include "actta/errors.hpp"
#include "actta/network.hpp"
#include "actta/shiftgen.hpp"

namespace actta {

// Sweep axes. Empty axes collapse to a singleton taken from the base
// configuration (or the model, for depth ratio), so a grid over two axes
// does not need every axis spelled out.
struct SweepGrid {
  std::vector<double> base_lrs;
  std::vector<std::size_t> batch_sizes;
  std::vector<std::string> selections;  // preset names
  std::vector<double> depth_ratios;
  std::vector<Granularity> granularities;
};

struct SweepCell {
  std::size_t index = 0;
  double base_lr = 0.0;
  std::size_t batch_size = 0;
  std::string selection;
  double depth_ratio = 0.0;
  Granularity granularity = Granularity::kPerChannel;
};

struct SweepCellResult {
  SweepCell cell;
  std::size_t n_act_params = 0;  // selected activation params, adaptable layers
  double mean_target_error = 0.0;
  double mean_entropy = 0.0;
  std::string status;  // "ok" or "error: <reason>"
  RunMetrics metrics;
};

struct SweepResult {
  std::vector<SweepCellResult> cells;
};

// Cell order is the nested-loop order base_lr x batch_size x selection x
// depth_ratio x granularity, regardless of thread count, and each cell is
// seeded from (base seed, cell index) alone, so sweep output is identical
// for any parallelism level.
inline std::vector<SweepCell> expand_grid(const SweepGrid& grid,
                                          const AdaptConfig& base,
                                          const Model& source) {
  SweepGrid g = grid;
  if (g.base_lrs.empty()) g.base_lrs = {base.base_lr};
  if (g.batch_sizes.empty()) g.batch_sizes = {base.batch_size};
  if (g.selections.empty()) g.selections = {"actta_star"};
  if (g.depth_ratios.empty()) g.depth_ratios = {source.depth_ratio()};
  if (g.granularities.empty()) {
    g.granularities = {Granularity::kPerChannel};
  }
  std::vector<SweepCell> cells;
  std::size_t index = 0;
  for (double lr : g.base_lrs) {
    for (std::size_t bs : g.batch_sizes) {
      for (const auto& sel : g.selections) {
        for (double dr : g.depth_ratios) {
          for (Granularity gran : g.granularities) {
            SweepCell c;
            c.index = index++;
            c.base_lr = lr;
            c.batch_size = bs;
            c.selection = sel;
            c.depth_ratio = dr;
            c.granularity = gran;
            cells.push_back(c);
          }
        }
      }
    }
  }
  return cells;
}

inline std::string sweep_run_id(const SweepCell& cell) {
  return "cell" + std::to_string(cell.index) + ":" + cell.selection;
}

// Thread count resolution: explicit request wins, then the ACTTA_THREADS
// environment variable, then hardware concurrency (at least 1).
inline unsigned resolve_thread_count(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ACTTA_THREADS")) {
    const std::string s(env);
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s, &pos);
    } catch (const std::exception&) {
      throw ValidationError("ACTTA_THREADS", "not a number: '" + s + "'");
    }
    if (pos != s.size() || v == 0) {
      throw ValidationError("ACTTA_THREADS",
                            "must be a positive integer, got '" + s + "'");
    }
    return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace detail {

inline std::size_t selected_act_params(Model& model,
                                       const ParamGroupSelection& sel) {
  std::size_t n = 0;
  auto groups = model.param_groups();
  for (const char* name : {"lambda_pos", "lambda_neg", "c"}) {
    if (!sel.groups.count(name)) continue;
    auto it = groups.find(name);
    if (it == groups.end()) continue;
    for (const auto& t : it->second) n += t.numel();
  }
  return n;
}

inline SweepCellResult run_sweep_cell(const Model& source,
                                      const LabeledBatch& pool,
                                      const AdaptConfig& base,
                                      const CorruptionSpec& corruption,
                                      std::uint64_t base_seed,
                                      const SweepCell& cell) {
  SweepCellResult result;
  result.cell = cell;
  try {
    Model model = source.clone();
    model.reconfigure_activations(cell.granularity, cell.depth_ratio,
                                  cell.batch_size);
    AdaptConfig config = base;
    config.base_lr = cell.base_lr;
    config.batch_size = cell.batch_size;
    config.seed = mix_seed(base_seed, cell.index);

    const ParamGroupSelection sel = selection_preset(cell.selection);
    result.n_act_params = detail::selected_act_params(model, sel);

    CorruptionSpec stream_corruption = corruption;
    stream_corruption.seed = mix_seed(config.seed, 7919);
    const auto stream =
        make_stream(pool, config.n_batches, config.batch_size,
                    stream_corruption, mix_seed(config.seed, 104729));

    RunTag tag;
    tag.run_id = sweep_run_id(cell);
    tag.schedule_kind = "episodic";
    tag.corruption = corruption.kind;
    tag.severity = corruption.severity;
    result.metrics = run_episode(model, stream, config, sel, tag);
    result.mean_target_error = result.metrics.mean_target_error();
    result.mean_entropy =
        result.metrics.mean_entropy_window(0, result.metrics.steps.size());
    result.status = "ok";
  } catch (const std::exception& e) {
    result.status = std::string("error: ") + e.what();
  }
  return result;
}

}  // namespace detail

// Runs every cell of the grid against the same source model and pool.
// Cells are independent episodic runs; a failing cell is reported in its
// status and does not stop the sweep.
inline SweepResult run_sweep(const Model& source, const LabeledBatch& pool,
                             const AdaptConfig& base, const SweepGrid& grid,
                             const CorruptionSpec& corruption,
                             std::uint64_t base_seed, unsigned n_threads = 0) {
  validate_corruption_spec(corruption);
  const auto cells = expand_grid(grid, base, source);
  SweepResult result;
  result.cells.resize(cells.size());
  unsigned threads = resolve_thread_count(n_threads);
  if (threads > cells.size()) {
    threads = static_cast<unsigned>(cells.size());
  }
  if (threads <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      result.cells[i] = detail::run_sweep_cell(source, pool, base, corruption,
                                               base_seed, cells[i]);
    }
    return result;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    workers.emplace_back([&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cells.size()) break;
        result.cells[i] = detail::run_sweep_cell(source, pool, base,
                                                 corruption, base_seed,
                                                 cells[i]);
      }
    });
  }
  for (auto& w : workers) w.join();
  return result;
}

inline constexpr const char* kSweepCsvHeader =
    "cell_index,run_id,base_lr,batch_size,groups,depth_ratio,granularity,"
    "n_act_params,mean_target_error,mean_entropy,status";

inline void write_sweep_summary_csv(const SweepResult& result,
                                    std::ostream& os) {
  os << kSweepCsvHeader << "\n";
  for (const auto& r : result.cells) {
    // Error reasons may carry commas; keep the row at 11 fields.
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    os << r.cell.index << "," << sweep_run_id(r.cell) << ","
       << format_double(r.cell.base_lr) << "," << r.cell.batch_size << ","
       << r.cell.selection << "," << format_double(r.cell.depth_ratio) << ","
       << granularity_name(r.cell.granularity) << "," << r.n_act_params << ","
       << format_double(r.mean_target_error) << ","
       << format_double(r.mean_entropy) << "," << status << "\n";
  }
}

inline void write_sweep_summary_csv(const SweepResult& result,
                                    const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_sweep_summary_csv(result, os);
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace actta
