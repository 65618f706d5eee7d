#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "actta/errors.hpp"
#include "actta/tensor.hpp"

namespace actta {

struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kAdam;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Parameter-group optimizer. Groups carry their own learning rate; state
// (momentum / Adam moments) is per tensor. A call to step() consumes the
// gradients currently in each parameter's buffer and zeroes them; tensors
// whose buffers were never touched since the last step are left alone.
class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& config) : config_(config) {}

  void add_group(const std::string& name, std::vector<Tensor> params,
                 double lr) {
    if (!(lr > 0.0)) {
      throw ContractError("Optimizer: learning rate for group '" + name +
                          "' must be positive");
    }
    Group g;
    g.name = name;
    g.lr = lr;
    for (auto& p : params) {
      Slot s;
      s.param = p;
      g.slots.push_back(std::move(s));
    }
    groups_.push_back(std::move(g));
  }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (const auto& g : groups_) {
      for (const auto& s : g.slots) n += s.param.numel();
    }
    return n;
  }

  bool empty() const {
    for (const auto& g : groups_) {
      if (!g.slots.empty()) return false;
    }
    return true;
  }

  void zero_grad() {
    for (auto& g : groups_) {
      for (auto& s : g.slots) s.param.zero_grad();
    }
  }

  void step() {
    ++t_;
    for (auto& g : groups_) {
      for (auto& s : g.slots) {
        if (!s.param.has_grad()) continue;
        apply(g.lr, s);
        s.param.zero_grad();
      }
    }
  }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m;  // SGD velocity or Adam first moment
    std::vector<double> v;  // Adam second moment
  };

  struct Group {
    std::string name;
    double lr = 0.0;
    std::vector<Slot> slots;
  };

  void apply(double lr, Slot& s) {
    auto& p = s.param.values();
    const auto& grad = s.param.grad();
    if (config_.kind == OptimizerConfig::Kind::kSgd) {
      if (s.m.size() != p.size()) s.m.assign(p.size(), 0.0);
      for (std::size_t i = 0; i < p.size(); ++i) {
        s.m[i] = config_.momentum * s.m[i] + grad[i];
        p[i] -= lr * s.m[i];
      }
      return;
    }
    if (s.m.size() != p.size()) {
      s.m.assign(p.size(), 0.0);
      s.v.assign(p.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * grad[i];
      s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }

  OptimizerConfig config_;
  std::vector<Group> groups_;
  std::int64_t t_ = 0;
};

}  // namespace actta
