#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "actta/tensor.hpp"

using actta::Tape;
using actta::Tensor;
namespace ops = actta::ops;

namespace {

// Frozen oracle values (see tests/oracle_values.py).
constexpr double kEntropy123 = 0.83239558183993887;
constexpr double kLn4 = 1.3862943611198906;
constexpr double kEntropyPeaked = 1.9673248449238025e-20;
constexpr double kCeMean = 0.28872599200033298;

void expect_grads_close(Tensor t, const Tensor& fd, double tol) {
  ASSERT_TRUE(t.has_grad());
  ASSERT_EQ(t.grad().size(), fd.numel());
  for (size_t i = 0; i < fd.numel(); ++i) {
    double err = actta::grad_rel_error(t.grad()[i], fd.values()[i]);
    EXPECT_LT(err, tol) << "index " << i << " analytic " << t.grad()[i]
                        << " fd " << fd.values()[i];
  }
}

}  // namespace

TEST(Tensor, ConstructionAndAccess) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.shape()[0], 2u);
  EXPECT_EQ(t.values()[5], 6.0);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_FALSE(t.has_grad());

  EXPECT_THROW(Tensor({2, 3}, {1, 2}), actta::ShapeError);

  Tensor z = Tensor::zeros({4});
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
  Tensor f = Tensor::full({2, 2}, 7.5);
  for (double v : f.values()) EXPECT_EQ(v, 7.5);

  Tensor s = Tensor::scalar(3.25);
  EXPECT_EQ(s.item(), 3.25);
  EXPECT_THROW(t.item(), actta::ContractError);
  EXPECT_EQ(t.shape_string(), "[2 x 3]");
}

TEST(Tensor, CloneIsDeepAndSharingIsShallow) {
  Tensor a({2}, {1, 2});
  Tensor b = a;          // shares storage
  Tensor c = a.clone();  // deep copy
  EXPECT_TRUE(a.same_storage(b));
  EXPECT_FALSE(a.same_storage(c));
  b.values()[0] = 9;
  EXPECT_EQ(a.values()[0], 9.0);
  EXPECT_EQ(c.values()[0], 1.0);
}

TEST(Tensor, MatmulOracle) {
  // Hand-checkable integer product: (3x2) x (2x3).
  Tensor a({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor b({2, 3}, {7, 8, 9, 10, 11, 12});
  Tape tape;
  Tensor c = ops::matmul(tape, a, b);
  std::vector<double> want = {27, 30, 33, 61, 68, 75, 95, 106, 117};
  ASSERT_EQ(c.numel(), want.size());
  for (size_t i = 0; i < want.size(); ++i) EXPECT_EQ(c.values()[i], want[i]);

  Tensor bad({3, 3}, std::vector<double>(9, 0.0));
  EXPECT_THROW(ops::matmul(tape, a, bad), actta::ShapeError);
  Tensor vec({3}, {1, 2, 3});
  EXPECT_THROW(ops::matmul(tape, vec, b), actta::ShapeError);
}

TEST(Tensor, ElementwiseValues) {
  Tape tape;
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(ops::add(tape, a, b).values()[3], 12.0);
  EXPECT_EQ(ops::sub(tape, a, b).values()[0], -4.0);
  EXPECT_EQ(ops::mul(tape, a, b).values()[2], 21.0);
  EXPECT_DOUBLE_EQ(ops::div(tape, a, b).values()[1], 2.0 / 6.0);
  EXPECT_EQ(ops::add_scalar(tape, a, 0.5).values()[0], 1.5);
  EXPECT_EQ(ops::mul_scalar(tape, a, -2.0).values()[3], -8.0);
  EXPECT_EQ(ops::neg(tape, a).values()[1], -2.0);

  Tensor mism({4}, {1, 2, 3, 4});
  EXPECT_THROW(ops::add(tape, a, mism), actta::ShapeError);

  Tensor zero({1}, {0.0});
  Tensor one({1}, {1.0});
  EXPECT_THROW(ops::div(tape, one, zero), actta::NumericError);
  EXPECT_THROW(ops::log(tape, zero), actta::NumericError);
  Tensor negv({1}, {-1.0});
  EXPECT_THROW(ops::log(tape, negv), actta::NumericError);
  Tensor big({1}, {1e308});
  EXPECT_THROW(ops::exp(tape, big), actta::NumericError);
}

TEST(Tensor, ReductionsAndBias) {
  Tape tape;
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(ops::sum(tape, a).item(), 21.0);
  EXPECT_DOUBLE_EQ(ops::mean(tape, a).item(), 3.5);

  Tensor bias({3}, {10, 20, 30});
  Tensor shifted = ops::add_rowvec(tape, a, bias);
  std::vector<double> want = {11, 22, 33, 14, 25, 36};
  for (size_t i = 0; i < want.size(); ++i)
    EXPECT_EQ(shifted.values()[i], want[i]);

  Tensor badbias({2}, {1, 2});
  EXPECT_THROW(ops::add_rowvec(tape, a, badbias), actta::ShapeError);
}

TEST(Tensor, EntropyRowsOracle) {
  Tape tape;
  Tensor z({3, 3},
           {1, 2, 3,     // frozen oracle row
            0, 0, 0,     // uniform over 3 classes: exactly ln 3
            50, 0, 0});  // near one-hot: entropy collapses to ~2e-20
  Tensor h = ops::entropy_rows(tape, z);
  ASSERT_EQ(h.rank(), 1u);
  ASSERT_EQ(h.numel(), 3u);
  EXPECT_NEAR(h.values()[0], kEntropy123, 1e-15);
  EXPECT_NEAR(h.values()[1], std::log(3.0), 1e-15);
  EXPECT_NEAR(h.values()[2], kEntropyPeaked, 1e-15);

  Tensor u({1, 4}, {5, 5, 5, 5});
  EXPECT_NEAR(ops::entropy_rows(tape, u).values()[0], kLn4, 1e-15);

  // Entropy of any row lies in [0, ln C].
  Tensor r({4, 6}, {0.3,  -1.2, 2.7, 0.1,  -0.4, 1.9, 5.0, 5.0,
                    5.0,  5.0,  5.0, 5.0,  -9.0, 4.0, 0.0, 2.0,
                    -2.0, 1.0,  0.0, 30.0, 0.0,  0.0, 0.0, 0.0});
  Tensor hr = ops::entropy_rows(tape, r);
  for (size_t i = 0; i < hr.numel(); ++i) {
    EXPECT_GE(hr.values()[i], 0.0);
    EXPECT_LE(hr.values()[i], std::log(6.0) + 1e-12);
  }

  Tensor vec({3}, {1, 2, 3});
  EXPECT_THROW(ops::entropy_rows(tape, vec), actta::ShapeError);
}

TEST(Tensor, CrossEntropyOracle) {
  Tape tape;
  Tensor z({2, 3}, {1, 2, 3, 3, 1, 0});
  std::vector<int> y = {2, 0};
  Tensor loss = ops::cross_entropy(tape, z, y);
  EXPECT_NEAR(loss.item(), kCeMean, 1e-15);

  std::vector<int> out_of_range = {2, 3};
  EXPECT_THROW(ops::cross_entropy(tape, z, out_of_range),
               actta::ContractError);
  std::vector<int> negy = {-1, 0};
  EXPECT_THROW(ops::cross_entropy(tape, z, negy), actta::ContractError);
  std::vector<int> shorty = {0};
  EXPECT_THROW(ops::cross_entropy(tape, z, shorty), actta::ShapeError);
}

TEST(Tensor, BackwardMatmulChainMatchesFiniteDiff) {
  Tensor a({3, 2}, {0.5, -1.2, 2.0, 0.3, -0.7, 1.1});
  Tensor b({2, 4}, {1.5, -0.2, 0.8, 0.4, -1.0, 0.6, 0.9, -0.3});
  a.set_requires_grad(true);
  b.set_requires_grad(true);

  auto run = [&](Tape& tape) {
    Tensor c = ops::matmul(tape, a, b);
    Tensor e = ops::mul(tape, c, c);  // square to make grads nontrivial
    return ops::sum(tape, e);
  };
  Tape tape;
  tape.backward(run(tape));

  auto loss_fn = [&](const Tensor&) {
    Tape t;
    return run(t).item();
  };
  // The probe tensor passed to loss_fn is ignored; finite_diff_grad perturbs
  // `a` (then `b`) in place through the shared-storage handle.
  auto fd_wrt = [&](Tensor target) {
    return actta::finite_diff_grad(
        [&](const Tensor& probe) {
          Tensor saved = target.clone();
          target.values() = probe.values();
          double v = loss_fn(probe);
          target.values() = saved.values();
          return v;
        },
        target, 1e-5);
  };
  expect_grads_close(a, fd_wrt(a), 1e-6);
  expect_grads_close(b, fd_wrt(b), 1e-6);
}

TEST(Tensor, BackwardElementwiseMatchesFiniteDiff) {
  Tensor a({2, 3}, {0.5, -1.2, 2.0, 0.3, -0.7, 1.1});
  Tensor b({2, 3}, {1.5, -0.2, 0.8, 0.4, -1.0, 0.6});
  a.set_requires_grad(true);
  b.set_requires_grad(true);

  auto run = [&](Tape& tape) {
    Tensor s = ops::add(tape, a, b);
    Tensor d = ops::sub(tape, s, ops::mul(tape, a, b));
    Tensor q =
        ops::div(tape, d,
                 ops::add_scalar(tape, ops::mul(tape, b, b), 1.0));
    Tensor e = ops::exp(tape, ops::mul_scalar(tape, q, 0.3));
    Tensor l =
        ops::log(tape, ops::add_scalar(tape, ops::mul(tape, e, e), 0.5));
    return ops::mean(tape, l);
  };
  Tape tape;
  tape.backward(run(tape));

  auto fd_wrt = [&](Tensor target) {
    return actta::finite_diff_grad(
        [&](const Tensor& probe) {
          Tensor saved = target.clone();
          target.values() = probe.values();
          Tape t;
          double v = run(t).item();
          target.values() = saved.values();
          return v;
        },
        target, 1e-5);
  };
  expect_grads_close(a, fd_wrt(a), 1e-6);
  expect_grads_close(b, fd_wrt(b), 1e-6);
}

TEST(Tensor, BackwardEntropyMatchesFiniteDiff) {
  Tensor z({3, 4}, {0.2, -1.0, 0.7, 1.4, 2.0, 2.0, 2.0, 2.0, -0.3, 0.9, -2.2,
                    0.5});
  z.set_requires_grad(true);
  Tape tape;
  tape.backward(ops::sum(tape, ops::entropy_rows(tape, z)));

  Tensor fd = actta::finite_diff_grad(
      [&](const Tensor& probe) {
        Tensor saved = z.clone();
        z.values() = probe.values();
        Tape t;
        double v = ops::sum(t, ops::entropy_rows(t, z)).item();
        z.values() = saved.values();
        return v;
      },
      z, 1e-5);
  expect_grads_close(z, fd, 1e-6);
}

TEST(Tensor, BackwardCrossEntropyMatchesFiniteDiff) {
  Tensor z({3, 5}, {0.2, -1.0, 0.7, 1.4, -0.6, 2.0, 0.1, -0.5, 0.3, 0.8,
                    -0.3, 0.9, -2.2, 0.5, 1.1});
  std::vector<int> y = {3, 0, 4};
  z.set_requires_grad(true);
  Tape tape;
  tape.backward(ops::cross_entropy(tape, z, y));

  Tensor fd = actta::finite_diff_grad(
      [&](const Tensor& probe) {
        Tensor saved = z.clone();
        z.values() = probe.values();
        Tape t;
        double v = ops::cross_entropy(t, z, y).item();
        z.values() = saved.values();
        return v;
      },
      z, 1e-5);
  expect_grads_close(z, fd, 1e-6);
}

TEST(Tensor, GradientAccumulationAcrossReuse) {
  // loss = sum(a*b + a) so d/da = b + 1 and d/db = a, with `a` used twice.
  Tensor a({3}, {1.0, -2.0, 0.5});
  Tensor b({3}, {4.0, 0.25, -3.0});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape tape;
  tape.backward(ops::sum(tape, ops::add(tape, ops::mul(tape, a, b), a)));
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(a.grad()[i], b.values()[i] + 1.0);
    EXPECT_DOUBLE_EQ(b.grad()[i], a.values()[i]);
  }

  // zero_grad resets, and a second backward starts from scratch.
  a.zero_grad();
  b.zero_grad();
  EXPECT_FALSE(a.has_grad());
  Tape tape2;
  tape2.backward(ops::sum(tape2, ops::mul(tape2, a, b)));
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(a.grad()[i], b.values()[i]);
  }
}

TEST(Tensor, BackwardContract) {
  Tape tape;
  Tensor a({2}, {1, 2});
  a.set_requires_grad(true);
  Tensor doubled = ops::mul_scalar(tape, a, 2.0);
  EXPECT_THROW(tape.backward(doubled), actta::ContractError);  // non-scalar

  Tensor b({2}, {1, 2});  // nothing tracked anywhere upstream
  Tape tape2;
  Tensor s = ops::sum(tape2, b);
  EXPECT_THROW(tape2.backward(s), actta::ContractError);

  Tape tape3;
  EXPECT_EQ(tape3.size(), 0u);
  ops::sum(tape3, a);
  EXPECT_EQ(tape3.size(), 1u);
  tape3.clear();
  EXPECT_EQ(tape3.size(), 0u);
}

TEST(Tensor, FiniteDiffContract) {
  Tensor a({2}, {1, 2});
  auto ok = [](const Tensor& t) { return t.values()[0] + t.values()[1]; };
  EXPECT_THROW(actta::finite_diff_grad(ok, a, 0.0), actta::ContractError);
  EXPECT_THROW(actta::finite_diff_grad(ok, a, -1e-5), actta::ContractError);

  auto nan_fn = [](const Tensor&) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  EXPECT_THROW(actta::finite_diff_grad(nan_fn, a, 1e-5),
               actta::NumericError);

  Tensor g = actta::finite_diff_grad(ok, a, 1e-5);
  EXPECT_NEAR(g.values()[0], 1.0, 1e-9);
  EXPECT_NEAR(g.values()[1], 1.0, 1e-9);
}

TEST(Tensor, GradRelErrorIsRobustNearZero) {
  EXPECT_EQ(actta::grad_rel_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(actta::grad_rel_error(1e-12, 0.0), 1e-12, 1e-18);
  EXPECT_NEAR(actta::grad_rel_error(2.0, 1.0), 0.5, 1e-15);
}
