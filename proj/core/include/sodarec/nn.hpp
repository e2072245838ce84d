#pragma once

#include "sodarec/rng.hpp"
#include "sodarec/tape.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace sodarec {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Parameter<T>*>>;

template <typename T>
std::vector<Parameter<T>*> param_ptrs(const NamedParams<T>& named) {
  std::vector<Parameter<T>*> out;
  out.reserve(named.size());
  for (const auto& [name, p] : named) {
    out.push_back(p);
  }
  return out;
}

template <typename T>
void glorot_init(Parameter<T>& p, Rng& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = static_cast<T>((rng.uniform() * 2.0 - 1.0) * lim);
  }
}

template <typename T>
void normal_init(Parameter<T>& p, Rng& rng, double sd) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = static_cast<T>(rng.normal(0.0, sd));
  }
}

// FNV over parameter values in registration order; used by the freeze-discipline checks.
template <typename T>
uint64_t params_checksum(const std::vector<Parameter<T>*>& params) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const Parameter<T>* p : params) {
    h = fnv1a64(p->value.data(), sizeof(T) * static_cast<size_t>(p->value.size()), h);
  }
  return h;
}

// Feed-forward block with one hidden ReLU layer. hidden == 0 collapses to a
// single affine map (used by tests that need an identity decoder).
template <typename T>
struct Mlp {
  using Var = typename Tape<T>::Var;

  Parameter<T> w1, b1, w2, b2;
  int in_dim = 0, hidden = 0, out_dim = 0;

  Mlp() = default;

  Mlp(int in, int hid, int out) { setup(in, hid, out); }

  void setup(int in, int hid, int out) {
    in_dim = in;
    hidden = hid;
    out_dim = out;
    if (hidden > 0) {
      w1.setup(in, hid);
      b1.setup(1, hid);
      w2.setup(hid, out);
      b2.setup(1, out);
    } else {
      w1.setup(in, out);
      b1.setup(1, out);
      w2.setup(0, 0);
      b2.setup(0, 0);
    }
  }

  void init(Rng& rng) {
    glorot_init(w1, rng);
    if (hidden > 0) {
      glorot_init(w2, rng);
    }
  }

  MatX<T> forward(const MatX<T>& x) const {
    require(x.cols() == in_dim, "mlp: input dimension mismatch");
    if (hidden == 0) {
      return (x * w1.value).rowwise() + b1.value.row(0);
    }
    MatX<T> h = ((x * w1.value).rowwise() + b1.value.row(0)).cwiseMax(T(0));
    return (h * w2.value).rowwise() + b2.value.row(0);
  }

  Var forward(Tape<T>& t, Var x) {
    Var y = t.add_row(t.matmul(x, t.param(w1)), t.param(b1));
    if (hidden == 0) {
      return y;
    }
    return t.add_row(t.matmul(t.relu(y), t.param(w2)), t.param(b2));
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".w1", &w1);
    out.emplace_back(prefix + ".b1", &b1);
    if (hidden > 0) {
      out.emplace_back(prefix + ".w2", &w2);
      out.emplace_back(prefix + ".b2", &b2);
    }
  }
};

template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<T>*> params, T lr, T beta1 = T(0.9),
                T beta2 = T(0.999), T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    states_.reserve(params_.size());
    for (Parameter<T>* p : params_) {
      states_.push_back({MatX<T>::Zero(p->value.rows(), p->value.cols()),
                         MatX<T>::Zero(p->value.rows(), p->value.cols())});
    }
  }

  void zero_grad() {
    for (Parameter<T>* p : params_) {
      p->grad.setZero();
    }
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Parameter<T>& p = *params_[i];
      State& s = states_[i];
      s.m = beta1_ * s.m + (T(1) - beta1_) * p.grad;
      s.v = beta2_ * s.v + (T(1) - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -=
          lr_ * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + eps_);
    }
  }

  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }

 private:
  struct State {
    MatX<T> m, v;
  };

  std::vector<Parameter<T>*> params_;
  std::vector<State> states_;
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

extern template struct Mlp<float>;
extern template struct Mlp<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace sodarec
