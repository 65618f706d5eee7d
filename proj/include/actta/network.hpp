#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "actta/activation.hpp"
#include "actta/binio.hpp"
#include "actta/errors.hpp"
#include "actta/rng.hpp"
#include "actta/tensor.hpp"

namespace actta {

enum class NormKind { kBatch, kLayer };

inline std::string norm_kind_name(NormKind k) {
  return k == NormKind::kBatch ? "batch" : "layer";
}

inline NormKind parse_norm_kind(const std::string& s) {
  if (s == "batch") return NormKind::kBatch;
  if (s == "layer") return NormKind::kLayer;
  throw ValidationError("norm", "unknown value '" + s + "'");
}

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct NormLayer {
  NormKind kind = NormKind::kBatch;
  std::size_t width = 0;
  Tensor gamma;  // [width]
  Tensor beta;   // [width]
  // Running statistics (batch norm only). Updated only when the forward
  // pass asks for it; adaptation runs leave them frozen.
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

struct ActLayer {
  ActParams params;
  bool adaptable = false;
};

using Layer = std::variant<DenseLayer, NormLayer, ActLayer>;

// Normalization forward passes, fused onto the tape with their analytic
// backward rules. Train-mode batch norm normalizes by batch statistics
// (biased variance); running buffers move only when update_running is set.
inline Tensor batch_norm(Tape& tape, const Tensor& x, NormLayer& norm,
                         bool train_mode, bool update_running) {
  detail::require_matrix(x, "batch_norm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (n != norm.width) {
    throw ShapeError("batch_norm: input width " + std::to_string(n) +
                     " does not match layer width " +
                     std::to_string(norm.width));
  }
  const bool track = x.requires_grad() || norm.gamma.requires_grad() ||
                     norm.beta.requires_grad();
  Tensor out = Tensor::zeros(x.shape(), track);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto istd = std::make_shared<std::vector<double>>(n);
  const auto& xv = x.values();

  if (train_mode) {
    if (m < 2) {
      throw NumericError(
          "batch_norm: train-mode batch of " + std::to_string(m) +
          " has degenerate variance; need at least 2 samples");
    }
    std::vector<double> mean(n, 0.0), var(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) mean[j] += xv[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) mean[j] /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double d = xv[i * n + j] - mean[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < n; ++j) var[j] /= static_cast<double>(m);
    for (std::size_t j = 0; j < n; ++j) {
      (*istd)[j] = 1.0 / std::sqrt(var[j] + norm.eps);
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t e = i * n + j;
        (*xhat)[e] = (xv[e] - mean[j]) * (*istd)[j];
        out.values()[e] =
            norm.gamma.values()[j] * (*xhat)[e] + norm.beta.values()[j];
      }
    }
    if (update_running) {
      const double mom = norm.momentum;
      const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
      for (std::size_t j = 0; j < n; ++j) {
        norm.running_mean[j] = (1.0 - mom) * norm.running_mean[j] +
                               mom * mean[j];
        norm.running_var[j] = (1.0 - mom) * norm.running_var[j] +
                              mom * var[j] * unbias;
      }
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      (*istd)[j] = 1.0 / std::sqrt(norm.running_var[j] + norm.eps);
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t e = i * n + j;
        (*xhat)[e] = (xv[e] - norm.running_mean[j]) * (*istd)[j];
        out.values()[e] =
            norm.gamma.values()[j] * (*xhat)[e] + norm.beta.values()[j];
      }
    }
  }

  if (track) {
    Tensor gamma = norm.gamma, beta = norm.beta;
    tape.record([x = x, gamma = gamma, beta = beta, out, xhat, istd, m, n, train_mode]() mutable {
      const auto& g = out.grad();
      if (gamma.requires_grad()) {
        auto& gg = gamma.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            gg[j] += g[i * n + j] * (*xhat)[i * n + j];
          }
        }
      }
      if (beta.requires_grad()) {
        auto& gb = beta.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
      if (!x.requires_grad()) return;
      auto& gx = x.grad();
      const auto& gv = gamma.values();
      if (!train_mode) {
        // Fixed statistics: the map is affine per element.
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            gx[i * n + j] += g[i * n + j] * gv[j] * (*istd)[j];
          }
        }
        return;
      }
      // Batch statistics: dxhat = g * gamma, then
      // dx = istd/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
      // with both sums taken over the batch, per column.
      std::vector<double> sum_dxhat(n, 0.0), sum_dxhat_xhat(n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t e = i * n + j;
          const double dxh = g[e] * gv[j];
          sum_dxhat[j] += dxh;
          sum_dxhat_xhat[j] += dxh * (*xhat)[e];
        }
      }
      const double invm = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t e = i * n + j;
          const double dxh = g[e] * gv[j];
          gx[e] += (*istd)[j] * invm *
                   (static_cast<double>(m) * dxh - sum_dxhat[j] -
                    (*xhat)[e] * sum_dxhat_xhat[j]);
        }
      }
    });
  }
  return out;
}

// Layer norm: per-row normalization over the feature axis, same affine
// parameters. Identical in train and eval mode.
inline Tensor layer_norm(Tape& tape, const Tensor& x, NormLayer& norm) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (n != norm.width) {
    throw ShapeError("layer_norm: input width " + std::to_string(n) +
                     " does not match layer width " +
                     std::to_string(norm.width));
  }
  if (n < 2) {
    throw NumericError("layer_norm: width " + std::to_string(n) +
                       " has degenerate variance; need at least 2 features");
  }
  const bool track = x.requires_grad() || norm.gamma.requires_grad() ||
                     norm.beta.requires_grad();
  Tensor out = Tensor::zeros(x.shape(), track);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto istd = std::make_shared<std::vector<double>>(m);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    (*istd)[i] = 1.0 / std::sqrt(var + norm.eps);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t e = i * n + j;
      (*xhat)[e] = (xv[e] - mean) * (*istd)[i];
      out.values()[e] =
          norm.gamma.values()[j] * (*xhat)[e] + norm.beta.values()[j];
    }
  }
  if (track) {
    Tensor gamma = norm.gamma, beta = norm.beta;
    tape.record([x = x, gamma = gamma, beta = beta, out, xhat, istd, m, n]() mutable {
      const auto& g = out.grad();
      if (gamma.requires_grad()) {
        auto& gg = gamma.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            gg[j] += g[i * n + j] * (*xhat)[i * n + j];
          }
        }
      }
      if (beta.requires_grad()) {
        auto& gb = beta.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
      if (!x.requires_grad()) return;
      auto& gx = x.grad();
      const auto& gv = gamma.values();
      const double invn = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < m; ++i) {
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t e = i * n + j;
          const double dxh = g[e] * gv[j];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * (*xhat)[e];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t e = i * n + j;
          const double dxh = g[e] * gv[j];
          gx[e] += (*istd)[i] * invn *
                   (static_cast<double>(n) * dxh - sum_dxh -
                    (*xhat)[e] * sum_dxh_xh);
        }
      }
    });
  }
  return out;
}

// Which parameter groups train, plus optional per-group learning-rate
// multiplier overrides. Group names: "weights" (dense W and b), "affine"
// (normalization gamma/beta), "lambda_pos", "lambda_neg", "c" (activation
// parameters on adaptable layers).
struct ParamGroupSelection {
  std::set<std::string> groups;
  std::map<std::string, double> lr_multiplier;
};

inline const std::set<std::string>& known_param_groups() {
  static const std::set<std::string> k = {"weights", "affine", "lambda_pos",
                                          "lambda_neg", "c"};
  return k;
}

inline void validate_selection(const ParamGroupSelection& sel) {
  if (sel.groups.empty()) {
    throw ContractError("parameter selection: no groups selected");
  }
  for (const auto& g : sel.groups) {
    if (!known_param_groups().count(g)) {
      throw ContractError("parameter selection: unknown group '" + g + "'");
    }
  }
  for (const auto& [g, mult] : sel.lr_multiplier) {
    if (!known_param_groups().count(g)) {
      throw ContractError("parameter selection: unknown group '" + g +
                          "' in lr multipliers");
    }
    if (!(mult > 0.0)) {
      throw ContractError("parameter selection: lr multiplier for '" + g +
                          "' must be positive");
    }
  }
}

// Named selections exposed on the command line. "affine" is the norm-only
// baseline; "actta_star" trains just the activation parameters; "actta"
// trains both.
inline ParamGroupSelection selection_preset(const std::string& name) {
  ParamGroupSelection sel;
  if (name == "affine") {
    sel.groups = {"affine"};
  } else if (name == "actta") {
    sel.groups = {"affine", "lambda_pos", "lambda_neg", "c"};
  } else if (name == "actta_star") {
    sel.groups = {"lambda_pos", "lambda_neg", "c"};
  } else {
    throw ValidationError("groups", "unknown preset '" + name + "'");
  }
  return sel;
}

// Captures the input of every activation layer during a forward pass, in
// layer order. Used for gradient pass-through probes.
struct ForwardTrace {
  std::vector<Tensor> act_inputs;
};

struct MlpSpec {
  std::size_t input_dims = 0;
  std::size_t n_classes = 0;
  std::size_t hidden_width = 64;
  std::size_t hidden_blocks = 3;
  NormKind norm = NormKind::kBatch;
  BaseActivation base = BaseActivation::relu();
  Granularity granularity = Granularity::kPerChannel;
  double depth_ratio = 1.0;
  std::size_t element_slots = 1;
  std::uint64_t init_seed = 0;
};

// Snapshot of every parameter and running buffer, keyed to the model's
// structural signature so restores onto a different architecture fail.
struct ModelState {
  std::string signature;
  std::vector<std::vector<double>> arrays;
};

inline std::size_t adaptable_count(double depth_ratio, std::size_t n_act) {
  return static_cast<std::size_t>(
      std::ceil(depth_ratio * static_cast<double>(n_act)));
}

// MLP of Dense -> Norm -> Activation blocks with a final dense head.
// The first ceil(depth_ratio * #activation-layers) activation layers,
// counted from the input, are flagged adaptable; the rest stay frozen at
// identity initialization.
class Model {
 public:
  Model() = default;

  static Model make_mlp(const MlpSpec& spec) {
    if (spec.input_dims < 1) {
      throw ValidationError("model.input_dims", "must be >= 1");
    }
    if (spec.n_classes < 2) {
      throw ValidationError("model.n_classes", "must be >= 2");
    }
    if (spec.hidden_width < 2) {
      throw ValidationError("model.hidden_width", "must be >= 2");
    }
    if (spec.hidden_blocks < 1) {
      throw ValidationError("model.hidden_blocks", "must be >= 1");
    }
    if (!(spec.depth_ratio >= 0.0 && spec.depth_ratio <= 1.0)) {
      throw ValidationError("model.depth_ratio", "must be in [0, 1]");
    }
    Model m;
    m.depth_ratio_ = spec.depth_ratio;
    Rng rng(spec.init_seed);
    const std::size_t n_adapt =
        adaptable_count(spec.depth_ratio, spec.hidden_blocks);
    for (std::size_t b = 0; b < spec.hidden_blocks; ++b) {
      const std::size_t in = b == 0 ? spec.input_dims : spec.hidden_width;
      m.layers_.push_back(make_dense(in, spec.hidden_width, rng));
      m.layers_.push_back(make_norm(spec.norm, spec.hidden_width));
      ActLayer act;
      act.params = make_act_params(spec.hidden_width, spec.granularity,
                                   spec.base, spec.element_slots);
      act.adaptable = b < n_adapt;
      m.layers_.push_back(act);
    }
    m.layers_.push_back(make_dense(spec.hidden_width, spec.n_classes, rng));
    return m;
  }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  double depth_ratio() const { return depth_ratio_; }

  std::size_t input_dims() const {
    return std::get<DenseLayer>(layers_.front()).in;
  }

  std::size_t n_classes() const {
    return std::get<DenseLayer>(layers_.back()).out;
  }

  std::size_t n_activation_layers() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      if (std::holds_alternative<ActLayer>(l)) ++n;
    }
    return n;
  }

  std::size_t n_adaptable_activation_layers() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      if (const auto* a = std::get_if<ActLayer>(&l); a && a->adaptable) ++n;
    }
    return n;
  }

  Tensor forward(Tape& tape, const Tensor& x, bool train_mode,
                 ForwardTrace* trace = nullptr, bool update_running = false) {
    detail::require_matrix(x, "Model::forward");
    if (x.shape()[1] != input_dims()) {
      throw ShapeError("Model::forward: input width " +
                       std::to_string(x.shape()[1]) + " does not match " +
                       std::to_string(input_dims()));
    }
    Tensor h = x;
    for (auto& layer : layers_) {
      if (auto* d = std::get_if<DenseLayer>(&layer)) {
        h = ops::add_rowvec(tape, ops::matmul(tape, h, d->weight), d->bias);
      } else if (auto* nl = std::get_if<NormLayer>(&layer)) {
        h = nl->kind == NormKind::kBatch
                ? batch_norm(tape, h, *nl, train_mode, update_running)
                : layer_norm(tape, h, *nl);
      } else {
        auto& act = std::get<ActLayer>(layer);
        if (trace) trace->act_inputs.push_back(h);
        h = actta_forward(tape, h, act.params);
      }
    }
    return h;
  }

  // Enables gradients exactly for the selected groups. Activation groups
  // apply only to adaptable layers; frozen layers never train. Stale
  // gradient buffers are cleared on every call.
  void set_trainable(const ParamGroupSelection& sel) {
    validate_selection(sel);
    const bool w = sel.groups.count("weights") > 0;
    const bool aff = sel.groups.count("affine") > 0;
    const bool lp = sel.groups.count("lambda_pos") > 0;
    const bool ln = sel.groups.count("lambda_neg") > 0;
    const bool c = sel.groups.count("c") > 0;
    for (auto& layer : layers_) {
      if (auto* d = std::get_if<DenseLayer>(&layer)) {
        d->weight.set_requires_grad(w);
        d->weight.zero_grad();
        d->bias.set_requires_grad(w);
        d->bias.zero_grad();
      } else if (auto* nl = std::get_if<NormLayer>(&layer)) {
        nl->gamma.set_requires_grad(aff);
        nl->gamma.zero_grad();
        nl->beta.set_requires_grad(aff);
        nl->beta.zero_grad();
      } else {
        auto& act = std::get<ActLayer>(layer);
        act.params.lambda_pos.set_requires_grad(lp && act.adaptable);
        act.params.lambda_pos.zero_grad();
        act.params.lambda_neg.set_requires_grad(ln && act.adaptable);
        act.params.lambda_neg.zero_grad();
        act.params.c.set_requires_grad(c && act.adaptable);
        act.params.c.zero_grad();
      }
    }
  }

  void freeze_all() {
    for (auto& layer : layers_) {
      for (Tensor* t : layer_tensors(layer)) {
        t->set_requires_grad(false);
        t->zero_grad();
      }
    }
  }

  // Tensors by group name. Activation groups list adaptable layers only.
  std::map<std::string, std::vector<Tensor>> param_groups() {
    std::map<std::string, std::vector<Tensor>> groups;
    for (auto& layer : layers_) {
      if (auto* d = std::get_if<DenseLayer>(&layer)) {
        groups["weights"].push_back(d->weight);
        groups["weights"].push_back(d->bias);
      } else if (auto* nl = std::get_if<NormLayer>(&layer)) {
        groups["affine"].push_back(nl->gamma);
        groups["affine"].push_back(nl->beta);
      } else {
        auto& act = std::get<ActLayer>(layer);
        if (!act.adaptable) continue;
        groups["lambda_pos"].push_back(act.params.lambda_pos);
        groups["lambda_neg"].push_back(act.params.lambda_neg);
        groups["c"].push_back(act.params.c);
      }
    }
    return groups;
  }

  Model clone() const {
    Model m;
    m.depth_ratio_ = depth_ratio_;
    for (const auto& layer : layers_) {
      if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        DenseLayer c = *d;
        c.weight = d->weight.clone();
        c.bias = d->bias.clone();
        m.layers_.push_back(c);
      } else if (const auto* nl = std::get_if<NormLayer>(&layer)) {
        NormLayer c = *nl;
        c.gamma = nl->gamma.clone();
        c.beta = nl->beta.clone();
        m.layers_.push_back(c);
      } else {
        const auto& a = std::get<ActLayer>(layer);
        ActLayer c = a;
        c.params.lambda_pos = a.params.lambda_pos.clone();
        c.params.lambda_neg = a.params.lambda_neg.clone();
        c.params.c = a.params.c.clone();
        m.layers_.push_back(c);
      }
    }
    return m;
  }

  // Swaps every activation layer's parameters for fresh identity parameters
  // at the given granularity, and re-flags adaptability from depth_ratio.
  // Identity initialization leaves the network function unchanged, so a
  // pretrained model can be re-granularized without retraining.
  void reconfigure_activations(Granularity granularity, double depth_ratio,
                               std::size_t element_slots) {
    if (!(depth_ratio >= 0.0 && depth_ratio <= 1.0)) {
      throw ValidationError("depth_ratio", "must be in [0, 1]");
    }
    depth_ratio_ = depth_ratio;
    const std::size_t n_adapt =
        adaptable_count(depth_ratio, n_activation_layers());
    std::size_t i = 0;
    for (auto& layer : layers_) {
      auto* a = std::get_if<ActLayer>(&layer);
      if (!a) continue;
      a->params = make_act_params(a->params.width, granularity,
                                  a->params.base, element_slots);
      a->adaptable = i < n_adapt;
      ++i;
    }
  }

  std::string signature() const {
    std::string sig;
    for (const auto& layer : layers_) {
      if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        sig += "dense:" + std::to_string(d->in) + ":" + std::to_string(d->out);
      } else if (const auto* nl = std::get_if<NormLayer>(&layer)) {
        sig += "norm:" + norm_kind_name(nl->kind) + ":" +
               std::to_string(nl->width);
      } else {
        const auto& a = std::get<ActLayer>(layer);
        sig += "act:" + base_kind_name(a.params.base.kind) + ":" +
               granularity_name(a.params.granularity) + ":" +
               std::to_string(a.params.width) + ":" +
               std::to_string(a.params.element_slots);
      }
      sig += "|";
    }
    return sig;
  }

  ModelState snapshot() const {
    ModelState st;
    st.signature = signature();
    for (const auto& layer : layers_) {
      for (const Tensor* t : layer_tensors(layer)) {
        st.arrays.push_back(t->values());
      }
      if (const auto* nl = std::get_if<NormLayer>(&layer)) {
        st.arrays.push_back(nl->running_mean);
        st.arrays.push_back(nl->running_var);
      }
    }
    return st;
  }

  void restore(const ModelState& st) {
    if (st.signature != signature()) {
      throw ShapeError("Model::restore: snapshot signature does not match");
    }
    std::size_t idx = 0;
    for (auto& layer : layers_) {
      for (Tensor* t : layer_tensors(layer)) {
        if (idx >= st.arrays.size() ||
            st.arrays[idx].size() != t->numel()) {
          throw ShapeError("Model::restore: array count or size mismatch");
        }
        t->values() = st.arrays[idx++];
      }
      if (auto* nl = std::get_if<NormLayer>(&layer)) {
        nl->running_mean = st.arrays.at(idx++);
        nl->running_var = st.arrays.at(idx++);
      }
    }
    if (idx != st.arrays.size()) {
      throw ShapeError("Model::restore: array count mismatch");
    }
  }

  void zero_all_grads() {
    for (auto& layer : layers_) {
      for (Tensor* t : layer_tensors(layer)) t->zero_grad();
    }
  }

  // Sets the recorded ratio without re-deriving per-layer flags; the
  // checkpoint loader uses this because the stored flags are authoritative.
  void set_depth_ratio_value(double depth_ratio) {
    depth_ratio_ = depth_ratio;
  }

 private:
  static DenseLayer make_dense(std::size_t in, std::size_t out, Rng& rng) {
    DenseLayer d;
    d.in = in;
    d.out = out;
    std::vector<double> w(in * out);
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& v : w) v = rng.normal(0.0, stddev);
    d.weight = Tensor({in, out}, std::move(w));
    d.bias = Tensor::zeros({out});
    return d;
  }

  static NormLayer make_norm(NormKind kind, std::size_t width) {
    NormLayer n;
    n.kind = kind;
    n.width = width;
    n.gamma = Tensor::full({width}, 1.0);
    n.beta = Tensor::zeros({width});
    n.running_mean.assign(width, 0.0);
    n.running_var.assign(width, 1.0);
    return n;
  }

  static std::vector<Tensor*> layer_tensors(Layer& layer) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      return {&d->weight, &d->bias};
    }
    if (auto* nl = std::get_if<NormLayer>(&layer)) {
      return {&nl->gamma, &nl->beta};
    }
    auto& a = std::get<ActLayer>(layer);
    return {&a.params.lambda_pos, &a.params.lambda_neg, &a.params.c};
  }

  static std::vector<const Tensor*> layer_tensors(const Layer& layer) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      return {&d->weight, &d->bias};
    }
    if (const auto* nl = std::get_if<NormLayer>(&layer)) {
      return {&nl->gamma, &nl->beta};
    }
    const auto& a = std::get<ActLayer>(layer);
    return {&a.params.lambda_pos, &a.params.lambda_neg, &a.params.c};
  }

  std::vector<Layer> layers_;
  double depth_ratio_ = 1.0;
};

inline std::vector<int> predict_argmax(const Tensor& logits) {
  detail::require_matrix(logits, "predict_argmax");
  const std::size_t m = logits.shape()[0], c = logits.shape()[1];
  std::vector<int> pred(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (logits.values()[i * c + j] > logits.values()[i * c + best]) {
        best = j;
      }
    }
    pred[i] = static_cast<int>(best);
  }
  return pred;
}

// Checkpoint format (magic "ACTA", version 1, little-endian):
//   header: magic, u32 version, f64 depth_ratio, u32 layer count
//   per-layer records:
//     u32 layer kind (0 dense, 1 norm, 2 activation)
//     dense: u32 in, u32 out
//     norm:  u32 norm kind (0 batch, 1 layer), u32 width, f64 momentum,
//            f64 eps
//     act:   u32 base kind (0 relu, 1 swish, 2 gelu_approx, 3 sigmoid_gate),
//            f64 beta, u32 granularity (0 layer, 1 channel, 2 element),
//            u32 width, u32 element_slots, u8 adaptable
//   then per-layer f64 payloads in the same order:
//     dense: weight (row-major in*out), bias (out)
//     norm:  gamma, beta, running_mean, running_var (width each)
//     act:   lambda_pos, lambda_neg, c (param length each)
inline void save_checkpoint(const Model& model, const std::string& path) {
  auto os = binio::open_out(path);
  os.write("ACTA", 4);
  binio::write_u32(os, 1);
  binio::write_f64(os, model.depth_ratio());
  binio::write_u32(os, static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& layer : model.layers()) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      binio::write_u32(os, 0);
      binio::write_u32(os, static_cast<std::uint32_t>(d->in));
      binio::write_u32(os, static_cast<std::uint32_t>(d->out));
    } else if (const auto* nl = std::get_if<NormLayer>(&layer)) {
      binio::write_u32(os, 1);
      binio::write_u32(os, nl->kind == NormKind::kBatch ? 0 : 1);
      binio::write_u32(os, static_cast<std::uint32_t>(nl->width));
      binio::write_f64(os, nl->momentum);
      binio::write_f64(os, nl->eps);
    } else {
      const auto& a = std::get<ActLayer>(layer);
      binio::write_u32(os, 2);
      binio::write_u32(os, static_cast<std::uint32_t>(a.params.base.kind));
      binio::write_f64(os, a.params.base.beta);
      binio::write_u32(os, static_cast<std::uint32_t>(a.params.granularity));
      binio::write_u32(os, static_cast<std::uint32_t>(a.params.width));
      binio::write_u32(os, static_cast<std::uint32_t>(a.params.element_slots));
      binio::write_u8(os, a.adaptable ? 1 : 0);
    }
  }
  for (const auto& layer : model.layers()) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      binio::write_f64_array(os, d->weight.values());
      binio::write_f64_array(os, d->bias.values());
    } else if (const auto* nl = std::get_if<NormLayer>(&layer)) {
      binio::write_f64_array(os, nl->gamma.values());
      binio::write_f64_array(os, nl->beta.values());
      binio::write_f64_array(os, nl->running_mean);
      binio::write_f64_array(os, nl->running_var);
    } else {
      const auto& a = std::get<ActLayer>(layer);
      binio::write_f64_array(os, a.params.lambda_pos.values());
      binio::write_f64_array(os, a.params.lambda_neg.values());
      binio::write_f64_array(os, a.params.c.values());
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

inline Model load_checkpoint(const std::string& path) {
  auto is = binio::open_in(path);
  binio::expect_magic(is, "ACTA", "checkpoint");
  const auto version = binio::read_u32(is, "checkpoint version");
  if (version != 1) {
    throw FormatError(FormatError::Kind::kBadHeader,
                      "unsupported checkpoint version " +
                          std::to_string(version));
  }
  const double depth_ratio = binio::read_f64(is, "depth_ratio");
  const auto n_layers = binio::read_u32(is, "layer count");
  if (n_layers == 0) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      "checkpoint has no layers");
  }
  Model model;
  std::vector<Layer>& layers = model.layers();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto kind = binio::read_u32(is, "layer kind");
    if (kind == 0) {
      DenseLayer d;
      d.in = binio::read_u32(is, "dense in");
      d.out = binio::read_u32(is, "dense out");
      if (d.in == 0 || d.out == 0) {
        throw FormatError(FormatError::Kind::kInconsistent,
                          "dense layer with zero dimension");
      }
      d.weight = Tensor::zeros({d.in, d.out});
      d.bias = Tensor::zeros({d.out});
      layers.push_back(d);
    } else if (kind == 1) {
      NormLayer nl;
      const auto nk = binio::read_u32(is, "norm kind");
      if (nk > 1) {
        throw FormatError(FormatError::Kind::kInconsistent,
                          "unknown norm kind " + std::to_string(nk));
      }
      nl.kind = nk == 0 ? NormKind::kBatch : NormKind::kLayer;
      nl.width = binio::read_u32(is, "norm width");
      nl.momentum = binio::read_f64(is, "norm momentum");
      nl.eps = binio::read_f64(is, "norm eps");
      if (nl.width == 0) {
        throw FormatError(FormatError::Kind::kInconsistent,
                          "norm layer with zero width");
      }
      nl.gamma = Tensor::zeros({nl.width});
      nl.beta = Tensor::zeros({nl.width});
      nl.running_mean.assign(nl.width, 0.0);
      nl.running_var.assign(nl.width, 0.0);
      layers.push_back(nl);
    } else if (kind == 2) {
      const auto bk = binio::read_u32(is, "base kind");
      if (bk > 3) {
        throw FormatError(FormatError::Kind::kInconsistent,
                          "unknown base kind " + std::to_string(bk));
      }
      BaseActivation base;
      base.kind = static_cast<BaseKind>(bk);
      base.beta = binio::read_f64(is, "base beta");
      const auto gr = binio::read_u32(is, "granularity");
      if (gr > 2) {
        throw FormatError(FormatError::Kind::kInconsistent,
                          "unknown granularity " + std::to_string(gr));
      }
      const auto width = binio::read_u32(is, "act width");
      const auto slots = binio::read_u32(is, "element slots");
      if (width == 0 || slots == 0) {
        throw FormatError(FormatError::Kind::kInconsistent,
                          "activation layer with zero width or slots");
      }
      ActLayer a;
      a.params = make_act_params(width, static_cast<Granularity>(gr), base,
                                 slots);
      a.adaptable = binio::read_u8(is, "adaptable flag") != 0;
      layers.push_back(a);
    } else {
      throw FormatError(FormatError::Kind::kInconsistent,
                        "unknown layer kind " + std::to_string(kind));
    }
  }
  for (auto& layer : layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      d->weight.values() =
          binio::read_f64_array(is, d->in * d->out, "dense weight");
      d->bias.values() = binio::read_f64_array(is, d->out, "dense bias");
    } else if (auto* nl = std::get_if<NormLayer>(&layer)) {
      nl->gamma.values() = binio::read_f64_array(is, nl->width, "norm gamma");
      nl->beta.values() = binio::read_f64_array(is, nl->width, "norm beta");
      nl->running_mean = binio::read_f64_array(is, nl->width, "running mean");
      nl->running_var = binio::read_f64_array(is, nl->width, "running var");
    } else {
      auto& a = std::get<ActLayer>(layer);
      const std::size_t len = a.params.param_len();
      a.params.lambda_pos.values() =
          binio::read_f64_array(is, len, "lambda_pos");
      a.params.lambda_neg.values() =
          binio::read_f64_array(is, len, "lambda_neg");
      a.params.c.values() = binio::read_f64_array(is, len, "c");
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      "trailing data after checkpoint payload");
  }
  model.set_depth_ratio_value(depth_ratio);
  return model;
}

}  // namespace actta
