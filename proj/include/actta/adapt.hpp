#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "actta/errors.hpp"
#include "actta/network.hpp"
#include "actta/optimizer.hpp"
#include "actta/shiftgen.hpp"
#include "actta/tensor.hpp"

namespace actta {

// Entropy of softmax(z) for one row, in nats, through log-sum-exp.
inline double row_entropy(const double* z, std::size_t c) {
  double mx = z[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
  double lse = 0.0;
  for (std::size_t j = 0; j < c; ++j) lse += std::exp(z[j] - mx);
  lse = std::log(lse);
  double h = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    const double t = z[j] - mx - lse;
    h -= std::exp(t) * t;
  }
  return h;
}

inline std::vector<double> row_entropies(const Tensor& logits) {
  detail::require_matrix(logits, "row_entropies");
  const std::size_t m = logits.shape()[0], c = logits.shape()[1];
  std::vector<double> h(m);
  for (std::size_t i = 0; i < m; ++i) {
    h[i] = row_entropy(logits.values().data() + i * c, c);
  }
  return h;
}

struct SelectionConfig {
  // Samples with entropy below e0_factor * ln(n_classes) participate in
  // the loss; the rest are dropped for that step.
  double e0_factor = 0.4;
  // When set, selected samples are weighted by exp(threshold - entropy),
  // so the most confident samples count the most.
  bool weighting = true;
};

struct Selection {
  std::vector<bool> mask;
  std::vector<double> weights;  // zero where mask is false
  double threshold = 0.0;
  double selected_fraction = 0.0;
};

inline Selection select_samples(const Tensor& logits,
                                const SelectionConfig& config) {
  if (!(config.e0_factor > 0.0 && config.e0_factor <= 1.0)) {
    throw ContractError("select_samples: e0_factor must be in (0, 1]");
  }
  const std::size_t m = logits.shape()[0], c = logits.shape()[1];
  if (c < 2) {
    throw ShapeError("select_samples: need at least 2 classes, got " +
                     std::to_string(c));
  }
  Selection sel;
  sel.threshold = config.e0_factor * std::log(static_cast<double>(c));
  sel.mask.resize(m);
  sel.weights.resize(m);
  std::size_t n_selected = 0;
  const auto h = row_entropies(logits);
  for (std::size_t i = 0; i < m; ++i) {
    const bool keep = h[i] < sel.threshold;
    sel.mask[i] = keep;
    sel.weights[i] =
        keep ? (config.weighting ? std::exp(sel.threshold - h[i]) : 1.0)
             : 0.0;
    if (keep) ++n_selected;
  }
  sel.selected_fraction =
      m == 0 ? 0.0
             : static_cast<double>(n_selected) / static_cast<double>(m);
  return sel;
}

// Differentiable batch entropy objective: the (optionally weighted) mean of
// per-row softmax entropies. Returns nothing when the batch is empty or
// every weight is zero; callers treat that as a skipped step.
inline std::optional<Tensor> entropy_loss(
    Tape& tape, const Tensor& logits,
    const std::vector<double>* weights = nullptr) {
  detail::require_matrix(logits, "entropy_loss");
  const std::size_t m = logits.shape()[0];
  if (m == 0) return std::nullopt;
  Tensor h = ops::entropy_rows(tape, logits);
  if (!weights) return ops::mean(tape, h);
  if (weights->size() != m) {
    throw ShapeError("entropy_loss: " + std::to_string(weights->size()) +
                     " weights for " + std::to_string(m) + " rows");
  }
  double wsum = 0.0;
  for (double w : *weights) {
    if (!(w >= 0.0)) {
      throw ContractError("entropy_loss: weights must be non-negative");
    }
    wsum += w;
  }
  if (wsum == 0.0) return std::nullopt;
  Tensor w(std::vector<std::size_t>{m}, *weights);
  Tensor weighted = ops::mul(tape, h, w);
  return ops::mul_scalar(tape, ops::sum(tape, weighted), 1.0 / wsum);
}

struct AdaptConfig {
  OptimizerConfig optimizer;  // Adam(0.9, 0.999, 1e-8) by default
  double base_lr = 1e-3;
  // Per-group learning-rate multipliers. Groups not listed here fall back
  // to the built-in defaults: 10 for the activation groups (lambda_pos,
  // lambda_neg, c), 1 for everything else.
  std::map<std::string, double> group_lr_multipliers;
  std::size_t batch_size = 64;
  std::size_t n_batches = 50;
  std::optional<SelectionConfig> selection = SelectionConfig{};
  std::uint64_t seed = 0;
  double pass_through_tau = 1e-3;
};

inline void validate_adapt_config(const AdaptConfig& config) {
  if (!(config.base_lr > 0.0)) {
    throw ValidationError("adapt.base_lr", "must be positive");
  }
  if (config.batch_size < 2) {
    throw ValidationError("adapt.batch_size",
                          "must be >= 2 (batch statistics need it)");
  }
  if (config.n_batches < 1) {
    throw ValidationError("adapt.n_batches", "must be >= 1");
  }
  if (config.selection) {
    if (!(config.selection->e0_factor > 0.0 &&
          config.selection->e0_factor <= 1.0)) {
      throw ValidationError("adapt.selection.e0_factor",
                            "must be in (0, 1]");
    }
  }
  if (!(config.pass_through_tau > 0.0)) {
    throw ValidationError("adapt.pass_through_tau", "must be positive");
  }
}

inline double default_group_multiplier(const std::string& group) {
  if (group == "lambda_pos" || group == "lambda_neg" || group == "c") {
    return 10.0;
  }
  return 1.0;
}

// Effective learning rate for a group: base_lr, scaled by 0.1 for small
// batches (below 16), times the group's multiplier. Multiplier precedence:
// selection override, then config map, then built-in default.
inline double effective_group_lr(const AdaptConfig& config,
                                 const ParamGroupSelection& sel,
                                 const std::string& group) {
  double lr = config.base_lr;
  if (config.batch_size < 16) lr *= 0.1;
  double mult = default_group_multiplier(group);
  if (auto it = config.group_lr_multipliers.find(group);
      it != config.group_lr_multipliers.end()) {
    mult = it->second;
  }
  if (auto it = sel.lr_multiplier.find(group); it != sel.lr_multiplier.end()) {
    mult = it->second;
  }
  return lr * mult;
}

// Marks the selected groups trainable and builds the optimizer over them.
// Rejects selections that match no parameters (e.g. activation groups on a
// model whose depth ratio leaves no adaptable layers).
inline Optimizer make_adapt_optimizer(Model& model, const AdaptConfig& config,
                                      const ParamGroupSelection& sel) {
  validate_selection(sel);
  validate_adapt_config(config);
  model.set_trainable(sel);
  auto groups = model.param_groups();
  Optimizer opt(config.optimizer);
  std::size_t n_params = 0;
  for (const auto& name : sel.groups) {
    auto it = groups.find(name);
    if (it == groups.end() || it->second.empty()) continue;
    for (const auto& t : it->second) n_params += t.numel();
    opt.add_group(name, it->second, effective_group_lr(config, sel, name));
  }
  if (n_params == 0) {
    throw ContractError(
        "adaptation: selected groups match no trainable parameters");
  }
  return opt;
}

struct StepMetrics {
  std::size_t batch_index = 0;
  std::string schedule_kind;
  std::string corruption_kind;
  int severity = 0;
  double target_error = 0.0;
  double mean_entropy = 0.0;
  double selected_fraction = 0.0;
  double pass_through_ratio = 0.0;
  std::vector<double> layer_pass_through;  // per activation layer, not in CSV
  std::optional<double> source_error;
  double step_wall_time_s = 0.0;
  std::string status;  // "ok", "skipped", or "aborted"
};

struct RunMetrics {
  std::string run_id;
  std::vector<StepMetrics> steps;
  std::optional<double> initial_source_error;

  double mean_target_error() const {
    double s = 0.0;
    for (const auto& m : steps) s += m.target_error;
    return steps.empty() ? 0.0 : s / static_cast<double>(steps.size());
  }

  // Mean entropy over the half-open step-index window [lo, hi).
  double mean_entropy_window(std::size_t lo, std::size_t hi) const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = lo; i < hi && i < steps.size(); ++i) {
      s += steps[i].mean_entropy;
      ++n;
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
  }

  double mean_target_error_window(std::size_t lo, std::size_t hi) const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = lo; i < hi && i < steps.size(); ++i) {
      s += steps[i].target_error;
      ++n;
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
  }

  std::optional<double> final_source_error() const {
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
      if (it->source_error) return it->source_error;
    }
    return std::nullopt;
  }
};

inline double error_rate(const std::vector<int>& pred,
                         const std::vector<int>& labels) {
  if (pred.size() != labels.size()) {
    throw ShapeError("error_rate: " + std::to_string(pred.size()) +
                     " predictions for " + std::to_string(labels.size()) +
                     " labels");
  }
  if (pred.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

// Eval-mode (running statistics) error on a labeled batch.
inline double eval_error(Model& model, const LabeledBatch& batch) {
  Tape tape;
  const Tensor logits = model.forward(tape, batch.x, /*train_mode=*/false);
  return error_rate(predict_argmax(logits), batch.y);
}

// Per-activation-layer fraction of elements whose activation slope |dg/dx|
// exceeds tau, measured at the traced layer inputs with current parameters.
inline std::vector<double> trace_pass_through(Model& model,
                                              const ForwardTrace& trace,
                                              double tau) {
  std::vector<double> ratios;
  std::size_t t = 0;
  for (auto& layer : model.layers()) {
    auto* act = std::get_if<ActLayer>(&layer);
    if (!act) continue;
    if (t >= trace.act_inputs.size()) {
      throw ContractError("trace_pass_through: trace is missing layers");
    }
    const auto partials =
        actta_backward_partials(trace.act_inputs[t], act->params);
    std::size_t passing = 0;
    for (double d : partials.d_x.values()) {
      if (std::fabs(d) > tau) ++passing;
    }
    ratios.push_back(partials.d_x.numel() == 0
                         ? 0.0
                         : static_cast<double>(passing) /
                               static_cast<double>(partials.d_x.numel()));
    ++t;
  }
  return ratios;
}

// Forward-and-probe helper: runs x through the model in the given
// normalization mode and reports each activation layer's pass-through
// ratio. Never updates running statistics.
inline std::vector<double> pass_through_ratios(Model& model, const Tensor& x,
                                               bool train_mode, double tau) {
  Tape tape;
  ForwardTrace trace;
  model.forward(tape, x, train_mode, &trace);
  return trace_pass_through(model, trace, tau);
}

// One online step: predict on the incoming batch with batch statistics,
// record metrics from that forward, then minimize selected-sample entropy.
// Running statistics never move during adaptation. Predictions are made
// before the update, so the reported target error reflects the parameters
// the batch arrived at. A step with nothing selected is "skipped"; a
// non-finite loss value makes it "aborted". Either way parameters are left
// untouched.
inline StepMetrics adapt_step(Model& model, const LabeledBatch& batch,
                              const AdaptConfig& config, Optimizer& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  StepMetrics sm;
  Tape tape;
  ForwardTrace trace;
  const Tensor logits =
      model.forward(tape, batch.x, /*train_mode=*/true, &trace,
                    /*update_running=*/false);
  sm.target_error = error_rate(predict_argmax(logits), batch.y);

  const auto ent = row_entropies(logits);
  double mean_h = 0.0;
  for (double h : ent) mean_h += h;
  mean_h = ent.empty() ? 0.0 : mean_h / static_cast<double>(ent.size());
  const double hmax = std::log(static_cast<double>(logits.shape()[1]));
  sm.mean_entropy = std::clamp(mean_h, 0.0, hmax);

  sm.layer_pass_through =
      trace_pass_through(model, trace, config.pass_through_tau);
  double mean_pt = 0.0;
  for (double r : sm.layer_pass_through) mean_pt += r;
  sm.pass_through_ratio =
      sm.layer_pass_through.empty()
          ? 0.0
          : mean_pt / static_cast<double>(sm.layer_pass_through.size());

  std::optional<Tensor> loss;
  if (config.selection) {
    const Selection sel = select_samples(logits, *config.selection);
    sm.selected_fraction = sel.selected_fraction;
    loss = entropy_loss(tape, logits, &sel.weights);
  } else {
    sm.selected_fraction = 1.0;
    loss = entropy_loss(tape, logits);
  }

  if (!loss) {
    sm.status = "skipped";
  } else if (!std::isfinite(loss->item())) {
    sm.status = "aborted";
  } else {
    tape.backward(*loss);
    opt.step();
    sm.status = "ok";
  }
  sm.step_wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return sm;
}

// Slices a stream of corrupted batches out of a clean pool: sample order
// comes from seeded shuffles (reshuffling whenever fewer than batch_size
// samples remain), and each batch is corrupted on the way out. Mean-shift
// streams keep one offset for the whole stream; the noise-driven kinds
// redraw noise per batch from a per-batch subseed.
inline std::vector<LabeledBatch> make_stream(const LabeledBatch& pool,
                                             std::size_t n_batches,
                                             std::size_t batch_size,
                                             const CorruptionSpec& corruption,
                                             std::uint64_t order_seed) {
  validate_corruption_spec(corruption);
  if (pool.size() < batch_size) {
    throw ContractError("make_stream: pool of " +
                        std::to_string(pool.size()) +
                        " samples cannot fill batches of " +
                        std::to_string(batch_size));
  }
  Rng order_rng(order_seed);
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  order_rng.shuffle(order);
  std::size_t cursor = 0;

  const std::size_t d = pool.dims();
  std::vector<LabeledBatch> stream;
  stream.reserve(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    if (cursor + batch_size > order.size()) {
      order_rng.shuffle(order);
      cursor = 0;
    }
    LabeledBatch clean;
    std::vector<double> xs(batch_size * d);
    clean.y.resize(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t src = order[cursor + i];
      for (std::size_t j = 0; j < d; ++j) {
        xs[i * d + j] = pool.x.values()[src * d + j];
      }
      clean.y[i] = pool.y[src];
    }
    cursor += batch_size;
    clean.x = Tensor({batch_size, d}, std::move(xs));
    clean.n_classes = pool.n_classes;

    CorruptionSpec batch_spec = corruption;
    if (corruption.kind != CorruptionKind::kMeanShift) {
      batch_spec.seed = mix_seed(corruption.seed, b);
    }
    stream.push_back(corrupt(clean, batch_spec));
  }
  return stream;
}

struct RunTag {
  std::string run_id;
  std::string schedule_kind;  // "episodic" or "continual"
  CorruptionKind corruption = CorruptionKind::kAdditiveGaussian;
  int severity = 1;
};

// Adapts the model in place over one corrupted stream. The caller passes a
// pristine model (fresh clone of the source checkpoint) for episodic runs.
inline RunMetrics run_episode(Model& model,
                              const std::vector<LabeledBatch>& stream,
                              const AdaptConfig& config,
                              const ParamGroupSelection& sel,
                              const RunTag& tag) {
  Optimizer opt = make_adapt_optimizer(model, config, sel);
  RunMetrics rm;
  rm.run_id = tag.run_id;
  for (std::size_t b = 0; b < stream.size(); ++b) {
    StepMetrics sm = adapt_step(model, stream[b], config, opt);
    sm.batch_index = b;
    sm.schedule_kind = tag.schedule_kind;
    sm.corruption_kind = corruption_kind_name(tag.corruption);
    sm.severity = tag.severity;
    rm.steps.push_back(std::move(sm));
  }
  return rm;
}

struct Segment {
  CorruptionSpec corruption;
  std::vector<LabeledBatch> batches;
};

// Continual schedule: segments run back to back with no resets, sharing
// one optimizer so its state carries across corruption changes. The clean
// probe is evaluated in eval mode before adaptation starts and after each
// segment; each segment's probe result lands on its last step row.
inline RunMetrics run_continual(Model& model,
                                const std::vector<Segment>& segments,
                                const AdaptConfig& config,
                                const ParamGroupSelection& sel,
                                const LabeledBatch& source_probe,
                                const std::string& run_id) {
  if (segments.empty()) {
    throw ContractError("run_continual: no segments");
  }
  Optimizer opt = make_adapt_optimizer(model, config, sel);
  RunMetrics rm;
  rm.run_id = run_id;
  rm.initial_source_error = eval_error(model, source_probe);
  std::size_t batch_index = 0;
  for (const auto& seg : segments) {
    for (std::size_t b = 0; b < seg.batches.size(); ++b) {
      StepMetrics sm = adapt_step(model, seg.batches[b], config, opt);
      sm.batch_index = batch_index++;
      sm.schedule_kind = "continual";
      sm.corruption_kind = corruption_kind_name(seg.corruption.kind);
      sm.severity = seg.corruption.severity;
      if (b + 1 == seg.batches.size()) {
        sm.source_error = eval_error(model, source_probe);
      }
      rm.steps.push_back(std::move(sm));
    }
  }
  return rm;
}

inline constexpr const char* kMetricsCsvHeader =
    "run_id,schedule_kind,corruption_kind,severity,batch_index,target_error,"
    "mean_entropy,selected_fraction,pass_through_ratio,source_error,"
    "step_wall_time_s,status";

inline void write_metrics_csv(const std::vector<RunMetrics>& runs,
                              std::ostream& os) {
  os << kMetricsCsvHeader << "\n";
  for (const auto& run : runs) {
    for (const auto& m : run.steps) {
      os << run.run_id << "," << m.schedule_kind << "," << m.corruption_kind
         << "," << m.severity << "," << m.batch_index << ","
         << format_double(m.target_error) << ","
         << format_double(m.mean_entropy) << ","
         << format_double(m.selected_fraction) << ","
         << format_double(m.pass_through_ratio) << ","
         << (m.source_error ? format_double(*m.source_error) : std::string())
         << "," << format_double(m.step_wall_time_s) << "," << m.status
         << "\n";
    }
  }
}

inline void write_metrics_csv(const std::vector<RunMetrics>& runs,
                              const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_metrics_csv(runs, os);
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace actta
