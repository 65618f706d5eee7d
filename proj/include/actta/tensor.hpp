#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "actta/errors.hpp"

namespace actta {

// Dense row-major tensor of doubles with an optional gradient buffer.
// Copying a Tensor copies the handle: both copies share storage and
// gradient, which is what lets tape closures accumulate into the same
// buffer the optimizer reads. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, std::vector<double> data,
         bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != data.size()) {
      throw ShapeError("Tensor: shape " + shape_string(shape) + " implies " +
                       std::to_string(n) + " elements, got " +
                       std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<std::size_t> shape,
                      bool requires_grad = false) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0),
                  requires_grad);
  }

  static Tensor full(std::vector<std::size_t> shape, double value,
                     bool requires_grad = false) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, value),
                  requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }

  const std::vector<std::size_t>& shape() const { return impl_->shape; }

  std::size_t numel() const { return impl_->data.size(); }

  std::size_t rank() const { return impl_->shape.size(); }

  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const {
    if (numel() != 1) {
      throw ContractError("Tensor::item: tensor has " +
                          std::to_string(numel()) + " elements");
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  // Gradient buffer, allocated as zeros on first access.
  std::vector<double>& grad() {
    if (impl_->grad.size() != impl_->data.size()) {
      impl_->grad.assign(impl_->data.size(), 0.0);
    }
    return impl_->grad;
  }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }

  void zero_grad() { impl_->grad.clear(); }

  // Deep copy; the copy never carries a gradient buffer.
  Tensor clone() const {
    Tensor t(impl_->shape, impl_->data, impl_->requires_grad);
    return t;
  }

  bool same_storage(const Tensor& other) const {
    return impl_ == other.impl_;
  }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << " x ";
      os << s[i];
    }
    os << "]";
    return os.str();
  }

  std::string shape_string() const { return shape_string(impl_->shape); }

 private:
  struct Impl {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched
    bool requires_grad = false;
  };

  std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Operations append a backward closure as they execute,
// so the list is already in topological (execution) order; backward() seeds
// the loss gradient and runs the closures strictly in reverse. Gradients
// accumulate with += into each tensor's buffer, so reused tensors collect
// contributions from every consumer.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  void backward(Tensor loss) {
    if (loss.numel() != 1) {
      throw ContractError("Tape::backward: loss must be scalar, got shape " +
                          loss.shape_string());
    }
    if (!loss.requires_grad()) {
      throw ContractError(
          "Tape::backward: loss does not depend on any tracked tensor");
    }
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      (*it)();
    }
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes disagree: " +
                     a.shape_string() + " vs " + b.shape_string());
  }
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     t.shape_string());
  }
}

inline bool track(const Tensor& t) { return t.requires_grad(); }

}  // namespace detail

// Differentiable tensor operations. Each returns a fresh tensor whose
// requires_grad flag is the OR of its inputs', and records its backward
// rule on the tape when any input is tracked.
namespace ops {

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree: " +
                     a.shape_string() + " vs " + b.shape_string());
  }
  Tensor out = Tensor::zeros({m, n}, detail::track(a) || detail::track(b));
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) {
        ov[i * n + j] += aip * bv[p * n + j];
      }
    }
  }
  if (out.requires_grad()) {
    tape.record([a = a, b = b, out, m, k, n]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const auto& bv = b.values();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) {
              ga[i * k + p] += gij * bv[p * n + j];
            }
          }
        }
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        const auto& av = a.values();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) {
              gb[p * n + j] += aip * g[i * n + j];
            }
          }
        }
      }
    });
  }
  return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape(), detail::track(a) || detail::track(b));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.values()[i] = a.values()[i] + b.values()[i];
  }
  if (out.requires_grad()) {
    tape.record([a = a, b = b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape(), detail::track(a) || detail::track(b));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.values()[i] = a.values()[i] - b.values()[i];
  }
  if (out.requires_grad()) {
    tape.record([a = a, b = b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape(), detail::track(a) || detail::track(b));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.values()[i] = a.values()[i] * b.values()[i];
  }
  if (out.requires_grad()) {
    tape.record([a = a, b = b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const auto& bv = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        const auto& av = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

inline Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "div");
  for (std::size_t i = 0; i < b.numel(); ++i) {
    if (b.values()[i] == 0.0) {
      throw NumericError("div: divisor is zero at flat index " +
                         std::to_string(i));
    }
  }
  Tensor out = Tensor::zeros(a.shape(), detail::track(a) || detail::track(b));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.values()[i] = a.values()[i] / b.values()[i];
  }
  if (out.requires_grad()) {
    tape.record([a = a, b = b, out]() mutable {
      const auto& g = out.grad();
      const auto& av = a.values();
      const auto& bv = b.values();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
        }
      }
    });
  }
  return out;
}

inline Tensor add_scalar(Tape& tape, const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape(), detail::track(a));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.values()[i] = a.values()[i] + s;
  }
  if (out.requires_grad()) {
    tape.record([a = a, out]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

inline Tensor mul_scalar(Tape& tape, const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape(), detail::track(a));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.values()[i] = a.values()[i] * s;
  }
  if (out.requires_grad()) {
    tape.record([a = a, out, s]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

inline Tensor neg(Tape& tape, const Tensor& a) {
  return mul_scalar(tape, a, -1.0);
}

inline Tensor exp(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), detail::track(a));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double v = std::exp(a.values()[i]);
    if (!std::isfinite(v)) {
      throw NumericError("exp: overflow at flat index " + std::to_string(i) +
                         " (input " + std::to_string(a.values()[i]) + ")");
    }
    out.values()[i] = v;
  }
  if (out.requires_grad()) {
    tape.record([a = a, out]() mutable {
      const auto& g = out.grad();
      const auto& ov = out.values();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ov[i];
    });
  }
  return out;
}

inline Tensor log(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), detail::track(a));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a.values()[i] <= 0.0) {
      throw NumericError("log: non-positive input " +
                         std::to_string(a.values()[i]) + " at flat index " +
                         std::to_string(i));
    }
    out.values()[i] = std::log(a.values()[i]);
  }
  if (out.requires_grad()) {
    tape.record([a = a, out]() mutable {
      const auto& g = out.grad();
      const auto& av = a.values();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
    });
  }
  return out;
}

inline Tensor sum(Tape& tape, const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor out = Tensor::scalar(acc, detail::track(a));
  if (out.requires_grad()) {
    tape.record([a = a, out]() mutable {
      const double g = out.grad()[0];
      auto& ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

inline Tensor mean(Tape& tape, const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean: empty tensor");
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(acc * inv, detail::track(a));
  if (out.requires_grad()) {
    tape.record([a = a, out, inv]() mutable {
      const double g = out.grad()[0] * inv;
      auto& ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

// Adds a length-n row vector to every row of an [m x n] matrix (bias add).
// Backward sums the upstream gradient over rows for the vector operand.
inline Tensor add_rowvec(Tape& tape, const Tensor& x, const Tensor& v) {
  detail::require_matrix(x, "add_rowvec");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (v.numel() != n) {
    throw ShapeError("add_rowvec: row vector length " +
                     std::to_string(v.numel()) + " does not match width " +
                     std::to_string(n));
  }
  Tensor out = Tensor::zeros(x.shape(), detail::track(x) || detail::track(v));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.values()[i * n + j] = x.values()[i * n + j] + v.values()[j];
    }
  }
  if (out.requires_grad()) {
    tape.record([x = x, v = v, out, m, n]() mutable {
      const auto& g = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (v.requires_grad()) {
        auto& gv = v.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

// Per-row entropy of softmax(logits): out[i] = H(softmax(z_i)) in nats.
// Computed through log-sum-exp so one-hot-scale logits stay finite, and
// fused so the backward rule is the closed form
//   dH_i/dz_ij = -p_ij (log p_ij + H_i).
inline Tensor entropy_rows(Tape& tape, const Tensor& logits) {
  detail::require_matrix(logits, "entropy_rows");
  const std::size_t m = logits.shape()[0], c = logits.shape()[1];
  if (c == 0) throw ShapeError("entropy_rows: zero classes");
  Tensor out = Tensor::zeros({m}, detail::track(logits));
  // Cached for the backward closure: p and log p per element, H per row.
  auto probs = std::make_shared<std::vector<double>>(m * c);
  auto logp = std::make_shared<std::vector<double>>(m * c);
  const auto& z = logits.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = z[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[i * c + j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(z[i * c + j] - mx);
    lse = std::log(lse);
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = z[i * c + j] - mx - lse;  // log p_ij <= 0
      const double p = std::exp(t);
      (*probs)[i * c + j] = p;
      (*logp)[i * c + j] = t;
      h -= p * t;
    }
    out.values()[i] = h;
  }
  if (out.requires_grad()) {
    tape.record([logits = logits, out, probs, logp, m, c]() mutable {
      const auto& g = out.grad();
      const auto& h = out.values();
      auto& gz = logits.grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t k = i * c + j;
          gz[k] += g[i] * (-(*probs)[k] * ((*logp)[k] + h[i]));
        }
      }
    });
  }
  return out;
}

// Mean cross-entropy of softmax(logits) against integer labels.
// Backward: dL/dz_ij = (p_ij - [j == y_i]) / m.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits,
                            const std::vector<int>& labels) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t m = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(m) + " rows");
  }
  if (m == 0) throw ContractError("cross_entropy: empty batch");
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                          " out of range at row " + std::to_string(i));
    }
  }
  auto probs = std::make_shared<std::vector<double>>(m * c);
  const auto& z = logits.values();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = z[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[i * c + j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(z[i * c + j] - mx);
    lse = std::log(lse);
    for (std::size_t j = 0; j < c; ++j) {
      (*probs)[i * c + j] = std::exp(z[i * c + j] - mx - lse);
    }
    total += mx + lse - z[i * c + static_cast<std::size_t>(labels[i])];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(m),
                              detail::track(logits));
  if (out.requires_grad()) {
    tape.record([logits = logits, out, probs, labels, m, c]() mutable {
      const double g = out.grad()[0] / static_cast<double>(m);
      auto& gz = logits.grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t k = i * c + j;
          const double target =
              (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
          gz[k] += g * ((*probs)[k] - target);
        }
      }
    });
  }
  return out;
}

}  // namespace ops

// Central-difference gradient of a scalar function at x, one coordinate at
// a time: (f(x + h e_i) - f(x - h e_i)) / 2h. The reference oracle for
// checking tape gradients.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, double h = 1e-5) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: h must be positive");
  Tensor probe = x.clone();
  Tensor grad = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + h;
    const double fp = f(probe);
    probe.values()[i] = orig - h;
    const double fm = f(probe);
    probe.values()[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite probe at coordinate " +
                         std::to_string(i));
    }
    grad.values()[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Relative error metric used by all gradient checks: absolute difference
// normalized by max(|a|, |b|, 1) so tiny gradients are compared absolutely.
inline double grad_rel_error(double analytic, double numeric) {
  const double denom =
      std::max({std::fabs(analytic), std::fabs(numeric), 1.0});
  return std::fabs(analytic - numeric) / denom;
}

}  // namespace actta
