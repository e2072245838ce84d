#include "sodarec/tape.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "test_util.hpp"

using namespace sodarec;
using testutil::random_mat;

namespace {

using VarD = Tape<double>::Var;
using Body = std::function<VarD(Tape<double>&, const std::vector<VarD>&)>;

// Worst relative error between reverse-mode gradients and central differences
// of the scalar built by `body` over fresh tapes. Inputs enter as leaves.
double fd_worst(const std::vector<MatD>& inputs, const Body& body) {
  auto eval = [&](const std::vector<MatD>& xs) {
    Tape<double> t;
    std::vector<VarD> leaves;
    leaves.reserve(xs.size());
    for (const MatD& x : xs) {
      leaves.push_back(t.leaf(x));
    }
    return t.val(body(t, leaves))(0, 0);
  };

  Tape<double> t;
  std::vector<VarD> leaves;
  for (const MatD& x : inputs) {
    leaves.push_back(t.leaf(x));
  }
  const VarD loss = body(t, leaves);
  REQUIRE(t.val(loss).rows() == 1);
  REQUIRE(t.val(loss).cols() == 1);
  t.backward(loss);

  double worst = 0.0;
  std::vector<MatD> xs = inputs;
  for (size_t m = 0; m < xs.size(); ++m) {
    const MatD& g = t.grad(leaves[m]);
    for (Eigen::Index i = 0; i < xs[m].size(); ++i) {
      const double base = xs[m].data()[i];
      const double h = 1e-6 * std::max(1.0, std::fabs(base));
      xs[m].data()[i] = base + h;
      const double f1 = eval(xs);
      xs[m].data()[i] = base - h;
      const double f2 = eval(xs);
      xs[m].data()[i] = base;
      const double fd = (f1 - f2) / (2.0 * h);
      const double an = g.size() > 0 ? g.data()[i] : 0.0;
      const double rel =
          std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Contracts a matrix-valued op down to a scalar with a random weighting so
// every output element influences the loss. The weights depend only on the
// output shape, so repeated evaluations difference the same scalar function.
VarD contract(Tape<double>& t, VarD y) {
  const Eigen::Index rows = t.val(y).rows();
  const Eigen::Index cols = t.val(y).cols();
  Rng rng(0x5eedULL + 131 * static_cast<uint64_t>(rows) + static_cast<uint64_t>(cols));
  MatD w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w.data()[i] = rng.normal();
  }
  return t.sum(t.mul(y, t.constant(w)));
}

}  // namespace

TEST_CASE("tape: arithmetic ops match finite differences") {
  Rng rng(101);
  const MatD a = random_mat(rng, 3, 4);
  const MatD b = random_mat(rng, 3, 4);

  CHECK(fd_worst({a, b}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.add(v[0], v[1]));
        }) < 1e-7);
  CHECK(fd_worst({a, b}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.sub(v[0], v[1]));
        }) < 1e-7);
  CHECK(fd_worst({a, b}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.mul(v[0], v[1]));
        }) < 1e-7);
  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.scale(v[0], -1.7));
        }) < 1e-7);
  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.add_scalar(v[0], 0.3));
        }) < 1e-7);
}

TEST_CASE("tape: matrix products match finite differences") {
  Rng rng(102);
  const MatD a = random_mat(rng, 3, 5);
  const MatD b = random_mat(rng, 5, 2);
  const MatD c = random_mat(rng, 4, 5);

  CHECK(fd_worst({a, b}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.matmul(v[0], v[1]));
        }) < 1e-7);
  CHECK(fd_worst({a, c}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.matmul_nt(v[0], v[1]));
        }) < 1e-7);
}

TEST_CASE("tape: row broadcasts match finite differences") {
  Rng rng(103);
  const MatD a = random_mat(rng, 4, 3);
  const MatD row = random_mat(rng, 1, 3);

  CHECK(fd_worst({a, row}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.add_row(v[0], v[1]));
        }) < 1e-7);
  CHECK(fd_worst({a, row}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.mul_row(v[0], v[1]));
        }) < 1e-7);
}

TEST_CASE("tape: nonlinearities match finite differences away from kinks") {
  Rng rng(104);
  // Shift values away from the relu/clamp kink so differencing is clean.
  MatD a = random_mat(rng, 3, 4);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (std::fabs(a.data()[i]) < 0.05) {
      a.data()[i] = 0.1;
    }
  }

  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.relu(v[0]));
        }) < 1e-7);
  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.clamp_min(v[0], -0.5));
        }) < 1e-6);
  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.softmax_rows(v[0]));
        }) < 1e-7);
  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.log_softmax_rows(v[0]));
        }) < 1e-7);
  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.neg_log_sigmoid(v[0]));
        }) < 1e-7);

  // log and normalize_rows need positive inputs.
  MatD p = random_mat(rng, 2, 5);
  p = p.array().abs() + 0.2;
  CHECK(fd_worst({p}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.log(v[0]));
        }) < 1e-7);
  CHECK(fd_worst({p}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.normalize_rows(v[0]));
        }) < 1e-7);
}

TEST_CASE("tape: reductions and reshapes match finite differences") {
  Rng rng(105);
  const MatD a = random_mat(rng, 5, 3);
  const MatD b = random_mat(rng, 2, 3);

  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return t.sum(v[0]);
        }) < 1e-7);
  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.gather_rows(v[0], {4, 0, 0, 2}));
        }) < 1e-7);
  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.slice_rows(v[0], 1, 3));
        }) < 1e-7);
  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.slice_cols(v[0], 1, 2));
        }) < 1e-7);
  CHECK(fd_worst({a, b}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.concat_rows({v[0], v[1]}));
        }) < 1e-7);
  CHECK(fd_worst({a, random_mat(rng, 5, 2)},
                 [&](Tape<double>& t, const std::vector<VarD>& v) {
                   return contract(t, t.concat_cols({v[0], v[1]}));
                 }) < 1e-7);
}

TEST_CASE("tape: layer norm and squared distances match finite differences") {
  Rng rng(106);
  const MatD a = random_mat(rng, 3, 6);
  const MatD v1 = random_mat(rng, 1, 4);
  const MatD rows = random_mat(rng, 5, 4);

  CHECK(fd_worst({a}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.layer_norm_rows(v[0], 1e-5));
        }) < 1e-6);
  CHECK(fd_worst({v1, rows}, [&](Tape<double>& t, const std::vector<VarD>& v) {
          return contract(t, t.squared_distances(v[0], v[1]));
        }) < 1e-7);
}

TEST_CASE("tape: straight-through passes gradients to the pre-quantized input") {
  Rng rng(107);
  const MatD a = random_mat(rng, 1, 4);
  const MatD q = random_mat(rng, 1, 4);

  Tape<double> t;
  const VarD av = t.leaf(a);
  const VarD st = t.straight_through(av, q);
  CHECK((t.val(st) - q).cwiseAbs().maxCoeff() == 0.0);  // forward takes q

  // loss = sum(st * w); d/d a must equal w exactly (identity pass-through).
  MatD w = random_mat(rng, 1, 4);
  const VarD loss = t.sum(t.mul(st, t.constant(w)));
  t.backward(loss);
  CHECK((t.grad(av) - w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tape: parameters accumulate gradients and rebind after reset") {
  Parameter<double> p;
  p.setup(1, 2);
  p.value.setConstant(1.5);

  Tape<double> t;
  // Using the same parameter twice must reuse one node and sum contributions.
  const VarD v1 = t.param(p);
  const VarD v2 = t.param(p);
  CHECK(v1.id == v2.id);
  const VarD loss = t.sum(t.add(v1, t.scale(v2, 2.0)));
  p.grad.setZero();
  t.backward(loss);
  CHECK(p.grad(0, 0) == doctest::Approx(3.0));
  CHECK(p.grad(0, 1) == doctest::Approx(3.0));

  // After reset the stale binding must not be reused.
  t.reset();
  const VarD v3 = t.param(p);
  const VarD loss2 = t.sum(v3);
  p.grad.setZero();
  t.backward(loss2);
  CHECK(p.grad(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("tape: backward ignores branches not reaching the root") {
  Tape<double> t;
  const VarD a = t.leaf(MatD::Constant(1, 1, 2.0));
  const VarD b = t.leaf(MatD::Constant(1, 1, 5.0));
  const VarD unused = t.scale(b, 100.0);
  (void)unused;
  const VarD loss = t.scale(a, 3.0);
  t.backward(loss);
  CHECK(t.grad(a)(0, 0) == 3.0);
  CHECK(t.grad(b).size() == 0);  // never touched
}
