#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "actta/errors.hpp"
#include "actta/tensor.hpp"

namespace actta {

// Numerically safe logistic sigmoid.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

enum class BaseKind { kRelu, kSwish, kGeluApprox, kSigmoidGate };

// Base nonlinearity phi. All smooth bases share one form, x * sigmoid(beta*x):
// beta = 1 is Swish, beta = 1.702 approximates GELU, and beta -> infinity
// recovers ReLU, which we keep as an exact branch. For the ReLU branch,
// `beta` only controls the sharpness of the slope-interpolation gate in the
// reparameterized activation below; 10 keeps that gate close to a step
// without the overflow risk of anything steeper.
struct BaseActivation {
  BaseKind kind = BaseKind::kRelu;
  double beta = kReluGateBeta;

  static constexpr double kReluGateBeta = 10.0;

  static BaseActivation relu() { return {BaseKind::kRelu, kReluGateBeta}; }
  static BaseActivation swish() { return {BaseKind::kSwish, 1.0}; }
  static BaseActivation gelu_approx() {
    return {BaseKind::kGeluApprox, 1.702};
  }
  static BaseActivation sigmoid_gate(double beta) {
    if (!(beta > 0.0)) {
      throw ContractError("sigmoid_gate: beta must be positive");
    }
    return {BaseKind::kSigmoidGate, beta};
  }

  bool operator==(const BaseActivation&) const = default;
};

inline double base_value(const BaseActivation& base, double u) {
  if (base.kind == BaseKind::kRelu) return std::max(0.0, u);
  return u * sigmoid(base.beta * u);
}

// d phi / d u. For the smooth bases, with s = sigmoid(beta*u):
//   phi'(u) = s + beta*u * s * (1 - s).
// The ReLU branch uses the subgradient choice phi'(0) = 0.
inline double base_slope(const BaseActivation& base, double u) {
  if (base.kind == BaseKind::kRelu) return u > 0.0 ? 1.0 : 0.0;
  const double s = sigmoid(base.beta * u);
  return s + base.beta * u * s * (1.0 - s);
}

// Pure elementwise maps of the base nonlinearity (no tape involvement).
inline Tensor base_forward(const Tensor& x, const BaseActivation& base) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    out.values()[i] = base_value(base, x.values()[i]);
  }
  return out;
}

inline Tensor base_derivative(const Tensor& x, const BaseActivation& base) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    out.values()[i] = base_slope(base, x.values()[i]);
  }
  return out;
}

enum class Granularity { kPerLayer, kPerChannel, kPerElement };

inline std::string granularity_name(Granularity g) {
  switch (g) {
    case Granularity::kPerLayer: return "layer";
    case Granularity::kPerChannel: return "channel";
    case Granularity::kPerElement: return "element";
  }
  throw ContractError("granularity_name: invalid enum value");
}

inline Granularity parse_granularity(const std::string& s) {
  if (s == "layer") return Granularity::kPerLayer;
  if (s == "channel") return Granularity::kPerChannel;
  if (s == "element") return Granularity::kPerElement;
  throw ValidationError("granularity", "unknown value '" + s + "'");
}

inline std::string base_kind_name(BaseKind k) {
  switch (k) {
    case BaseKind::kRelu: return "relu";
    case BaseKind::kSwish: return "swish";
    case BaseKind::kGeluApprox: return "gelu_approx";
    case BaseKind::kSigmoidGate: return "sigmoid_gate";
  }
  throw ContractError("base_kind_name: invalid enum value");
}

inline BaseKind parse_base_kind(const std::string& s) {
  if (s == "relu") return BaseKind::kRelu;
  if (s == "swish") return BaseKind::kSwish;
  if (s == "gelu_approx") return BaseKind::kGeluApprox;
  if (s == "sigmoid_gate") return BaseKind::kSigmoidGate;
  throw ValidationError("base", "unknown value '" + s + "'");
}

// Parameters of the reparameterized activation
//   g(x) = phi(x - c) + lambda(x - c) * (x - c),
//   lambda(u) = lambda_neg + (lambda_pos - lambda_neg) * sigmoid(beta * u).
// The three arrays (lambda_pos, lambda_neg, c) share one length that depends
// on granularity: 1 for per-layer, `width` for per-channel, and
// width * element_slots for per-element, where element_slots is the batch
// size the per-element parameters were sized for. Per-element parameters
// belong to (slot, feature) positions; successive batches reuse the array.
struct ActParams {
  Tensor lambda_pos;
  Tensor lambda_neg;
  Tensor c;
  BaseActivation base;
  Granularity granularity = Granularity::kPerChannel;
  std::size_t width = 0;
  std::size_t element_slots = 1;

  std::size_t param_len() const { return lambda_pos.numel(); }
};

// Builds zero-initialized (identity) parameters: lambda_pos = lambda_neg =
// c = 0 makes g coincide with the base activation exactly.
inline ActParams make_act_params(std::size_t width, Granularity granularity,
                                 const BaseActivation& base,
                                 std::size_t element_slots = 1) {
  if (width == 0) throw ContractError("make_act_params: width must be >= 1");
  if (element_slots == 0) {
    throw ContractError("make_act_params: element_slots must be >= 1");
  }
  std::size_t len = 0;
  switch (granularity) {
    case Granularity::kPerLayer: len = 1; break;
    case Granularity::kPerChannel: len = width; break;
    case Granularity::kPerElement: len = width * element_slots; break;
  }
  ActParams p;
  p.lambda_pos = Tensor::zeros({len});
  p.lambda_neg = Tensor::zeros({len});
  p.c = Tensor::zeros({len});
  p.base = base;
  p.granularity = granularity;
  p.width = width;
  p.element_slots = element_slots;
  return p;
}

namespace detail {

// Rows/width view of an activation input: rank-1 tensors are one row,
// rank-2 tensors are [rows x width]. Width must match the parameters.
struct ActShape {
  std::size_t rows;
  std::size_t width;
};

inline ActShape act_shape(const Tensor& x, const ActParams& p,
                          const char* op) {
  ActShape s{};
  if (x.rank() == 1) {
    s.rows = 1;
    s.width = x.shape()[0];
  } else if (x.rank() == 2) {
    s.rows = x.shape()[0];
    s.width = x.shape()[1];
  } else {
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " +
                     x.shape_string());
  }
  if (s.width != p.width) {
    throw ShapeError(std::string(op) + ": input width " +
                     std::to_string(s.width) +
                     " does not match parameter width " +
                     std::to_string(p.width));
  }
  if (p.granularity == Granularity::kPerElement && s.rows > p.element_slots) {
    throw ShapeError(std::string(op) + ": batch of " + std::to_string(s.rows) +
                     " rows exceeds the " + std::to_string(p.element_slots) +
                     " per-element parameter slots");
  }
  return s;
}

inline std::size_t param_index(const ActParams& p, std::size_t row,
                               std::size_t col) {
  switch (p.granularity) {
    case Granularity::kPerLayer: return 0;
    case Granularity::kPerChannel: return col;
    case Granularity::kPerElement: return row * p.width + col;
  }
  throw ContractError("param_index: invalid granularity");
}

// Single-point evaluation of g and its partials. Every public entry point
// (forward, backward, reduced partials, slope probe) goes through this
// kernel so they cannot drift apart. With u = x - c, s = sigmoid(beta*u),
// lam = lambda_neg + (lambda_pos - lambda_neg)*s:
//   value     = phi(u) + lam*u
//   d_x       = phi'(u) + lam + u * lam'(u),
//               lam'(u) = (lambda_pos - lambda_neg) * beta * s * (1 - s)
//   d_lpos    = s * u
//   d_lneg    = (1 - s) * u
// and d_c = -d_x, which callers derive by negation rather than recomputing.
struct ActPoint {
  double value;
  double d_x;
  double d_lpos;
  double d_lneg;
};

inline ActPoint act_point(const BaseActivation& base, double x, double lpos,
                          double lneg, double c) {
  const double u = x - c;
  const double s = sigmoid(base.beta * u);
  const double lam = lneg + (lpos - lneg) * s;
  const double dlam = (lpos - lneg) * base.beta * s * (1.0 - s);
  ActPoint p{};
  p.value = base_value(base, u) + lam * u;
  p.d_x = base_slope(base, u) + lam + u * dlam;
  p.d_lpos = s * u;
  p.d_lneg = (1.0 - s) * u;
  return p;
}

}  // namespace detail

// Pointwise slope dg/dx at pre-centered inputs u (the shift is taken as
// already applied). Used by gradient pass-through probes.
inline Tensor slope_at(const Tensor& u, const ActParams& p) {
  const auto shape = detail::act_shape(u, p, "slope_at");
  Tensor out = Tensor::zeros(u.shape());
  for (std::size_t r = 0; r < shape.rows; ++r) {
    for (std::size_t j = 0; j < shape.width; ++j) {
      const std::size_t e = r * shape.width + j;
      const std::size_t k = detail::param_index(p, r, j);
      out.values()[e] =
          detail::act_point(p.base, u.values()[e], p.lambda_pos.values()[k],
                            p.lambda_neg.values()[k], 0.0)
              .d_x;
    }
  }
  return out;
}

// Tape-recorded forward pass of the reparameterized activation. The
// elementwise partials are cached at forward time; backward scatters them
// into the input gradient and reduces them into each parameter bucket in
// element order, so accumulation is deterministic.
inline Tensor actta_forward(Tape& tape, const Tensor& x, const ActParams& p) {
  const auto shape = detail::act_shape(x, p, "actta_forward");
  const bool track_params = p.lambda_pos.requires_grad() ||
                            p.lambda_neg.requires_grad() ||
                            p.c.requires_grad();
  Tensor out = Tensor::zeros(x.shape(), x.requires_grad() || track_params);

  auto dx = std::make_shared<std::vector<double>>(x.numel());
  auto dlp = std::make_shared<std::vector<double>>(x.numel());
  auto dln = std::make_shared<std::vector<double>>(x.numel());
  for (std::size_t r = 0; r < shape.rows; ++r) {
    for (std::size_t j = 0; j < shape.width; ++j) {
      const std::size_t e = r * shape.width + j;
      const std::size_t k = detail::param_index(p, r, j);
      const auto pt =
          detail::act_point(p.base, x.values()[e], p.lambda_pos.values()[k],
                            p.lambda_neg.values()[k], p.c.values()[k]);
      out.values()[e] = pt.value;
      (*dx)[e] = pt.d_x;
      (*dlp)[e] = pt.d_lpos;
      (*dln)[e] = pt.d_lneg;
    }
  }

  if (out.requires_grad()) {
    ActParams params = p;  // tensor handles share storage with the caller's
    const std::size_t rows = shape.rows, width = shape.width;
    tape.record([x = x, params, out, dx, dlp, dln, rows, width]() mutable {
      const auto& g = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (std::size_t e = 0; e < g.size(); ++e) gx[e] += g[e] * (*dx)[e];
      }
      const bool wlp = params.lambda_pos.requires_grad();
      const bool wln = params.lambda_neg.requires_grad();
      const bool wc = params.c.requires_grad();
      if (!(wlp || wln || wc)) return;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < width; ++j) {
          const std::size_t e = r * width + j;
          const std::size_t k = detail::param_index(params, r, j);
          if (wlp) params.lambda_pos.grad()[k] += g[e] * (*dlp)[e];
          if (wln) params.lambda_neg.grad()[k] += g[e] * (*dln)[e];
          if (wc) params.c.grad()[k] -= g[e] * (*dx)[e];
        }
      }
    });
  }
  return out;
}

// Analytic partials of sum(g(x)) with respect to the input and each
// parameter array, i.e. the backward pass under a unit upstream gradient.
// d_x is elementwise (the shape of x); the parameter partials are reduced
// into the parameter buckets. d_c is the negated d_x reduction, bitwise.
struct ActPartials {
  Tensor d_x;
  Tensor d_lambda_pos;
  Tensor d_lambda_neg;
  Tensor d_c;
};

inline ActPartials actta_backward_partials(const Tensor& x,
                                           const ActParams& p) {
  const auto shape = detail::act_shape(x, p, "actta_backward_partials");
  ActPartials out;
  out.d_x = Tensor::zeros(x.shape());
  out.d_lambda_pos = Tensor::zeros({p.param_len()});
  out.d_lambda_neg = Tensor::zeros({p.param_len()});
  out.d_c = Tensor::zeros({p.param_len()});
  for (std::size_t r = 0; r < shape.rows; ++r) {
    for (std::size_t j = 0; j < shape.width; ++j) {
      const std::size_t e = r * shape.width + j;
      const std::size_t k = detail::param_index(p, r, j);
      const auto pt =
          detail::act_point(p.base, x.values()[e], p.lambda_pos.values()[k],
                            p.lambda_neg.values()[k], p.c.values()[k]);
      out.d_x.values()[e] = pt.d_x;
      out.d_lambda_pos.values()[k] += pt.d_lpos;
      out.d_lambda_neg.values()[k] += pt.d_lneg;
      out.d_c.values()[k] += pt.d_x;
    }
  }
  for (std::size_t k = 0; k < p.param_len(); ++k) {
    out.d_c.values()[k] = -out.d_c.values()[k];
  }
  return out;
}

}  // namespace actta
