#pragma once

#include "sodarec/common.hpp"

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace sodarec {

// A trainable tensor. Models own Parameters; the tape accumulates into grad.
template <typename T>
struct Parameter {
  MatX<T> value;
  MatX<T> grad;

  // Binding cache so repeated tape.param(p) calls within one step reuse a node.
  const void* bound_tape = nullptr;
  uint64_t bound_gen = 0;
  int bound_id = -1;

  void setup(int rows, int cols) {
    value = MatX<T>::Zero(rows, cols);
    grad = MatX<T>::Zero(rows, cols);
  }
};

// Reverse-mode autodiff tape over dense row-major matrices.
//
// Nodes are created eagerly with their forward values; creation order is a
// topological order, so backward() is a single reverse sweep. Scalars are 1x1
// matrices. All ops are deterministic; no op consumes RNG.
template <typename T>
class Tape {
 public:
  using Mat = MatX<T>;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int size() const { return static_cast<int>(nodes_.size()); }

  // Drops all nodes and invalidates parameter bindings. Capacity is kept.
  void reset() {
    nodes_.clear();
    gen_ = next_gen_();
  }

  const Mat& val(Var v) const { return nodes_[check_(v)].value; }

  // Gradient of the last backward() root w.r.t. this node. Zero-sized if the
  // node was never reached.
  const Mat& grad(Var v) const { return nodes_[check_(v)].grad; }

  Var constant(Mat v) { return push_(std::move(v), nullptr); }

  Var leaf(Mat v) { return push_(std::move(v), nullptr); }

  Var param(Parameter<T>& p) {
    if (p.bound_tape == this && p.bound_gen == gen_) {
      return Var{p.bound_id};
    }
    Var v = push_(p.value, nullptr);
    Parameter<T>* pp = &p;
    nodes_[v.id].back = [pp](Tape&, const Mat& g) { pp->grad += g; };
    p.bound_tape = this;
    p.bound_gen = gen_;
    p.bound_id = v.id;
    return v;
  }

  Var add(Var a, Var b) {
    Mat y = val(a) + val(b);
    return push_(std::move(y), [a, b](Tape& t, const Mat& g) {
      t.acc_(a) += g;
      t.acc_(b) += g;
    });
  }

  Var sub(Var a, Var b) {
    Mat y = val(a) - val(b);
    return push_(std::move(y), [a, b](Tape& t, const Mat& g) {
      t.acc_(a) += g;
      t.acc_(b) -= g;
    });
  }

  // Elementwise product.
  Var mul(Var a, Var b) {
    Mat y = val(a).cwiseProduct(val(b));
    return push_(std::move(y), [a, b](Tape& t, const Mat& g) {
      t.acc_(a) += g.cwiseProduct(t.val(b));
      t.acc_(b) += g.cwiseProduct(t.val(a));
    });
  }

  Var scale(Var a, T s) {
    Mat y = val(a) * s;
    return push_(std::move(y), [a, s](Tape& t, const Mat& g) { t.acc_(a) += g * s; });
  }

  Var add_scalar(Var a, T s) {
    Mat y = val(a).array() + s;
    return push_(std::move(y), [a](Tape& t, const Mat& g) { t.acc_(a) += g; });
  }

  Var matmul(Var a, Var b) {
    Mat y = val(a) * val(b);
    return push_(std::move(y), [a, b](Tape& t, const Mat& g) {
      t.acc_(a).noalias() += g * t.val(b).transpose();
      t.acc_(b).noalias() += t.val(a).transpose() * g;
    });
  }

  // a * b^T without materializing the transpose.
  Var matmul_nt(Var a, Var b) {
    Mat y = val(a) * val(b).transpose();
    return push_(std::move(y), [a, b](Tape& t, const Mat& g) {
      t.acc_(a).noalias() += g * t.val(b);
      t.acc_(b).noalias() += g.transpose() * t.val(a);
    });
  }

  // Broadcast-add a 1xN row over every row of a.
  Var add_row(Var a, Var row) {
    Mat y = val(a).rowwise() + val(row).row(0);
    return push_(std::move(y), [a, row](Tape& t, const Mat& g) {
      t.acc_(a) += g;
      t.acc_(row) += g.colwise().sum();
    });
  }

  Var mul_row(Var a, Var row) {
    Mat y = val(a).array().rowwise() * val(row).row(0).array();
    return push_(std::move(y), [a, row](Tape& t, const Mat& g) {
      t.acc_(a).array() += g.array().rowwise() * t.val(row).row(0).array();
      t.acc_(row) += g.cwiseProduct(t.val(a)).colwise().sum();
    });
  }

  Var relu(Var a) {
    Mat y = val(a).cwiseMax(T(0));
    return push_(std::move(y), [a](Tape& t, const Mat& g) {
      t.acc_(a).array() += g.array() * (t.val(a).array() > T(0)).template cast<T>();
    });
  }

  Var softmax_rows(Var a) {
    Mat y = val(a);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      auto row = y.row(i).array();
      row -= row.maxCoeff();
      row = row.exp();
      row /= row.sum();
    }
    const Var self{size()};
    return push_(std::move(y), [a, self](Tape& t, const Mat& g) {
      const Mat& y = t.val(self);
      Mat& ga = t.acc_(a);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const T dot = g.row(i).cwiseProduct(y.row(i)).sum();
        ga.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
      }
    });
  }

  Var log_softmax_rows(Var a) {
    Mat y = val(a);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      auto row = y.row(i).array();
      const T m = row.maxCoeff();
      const T lse = m + std::log((row - m).exp().sum());
      row -= lse;
    }
    const Var self{size()};
    return push_(std::move(y), [a, self](Tape& t, const Mat& g) {
      const Mat& y = t.val(self);
      Mat& ga = t.acc_(a);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const T gsum = g.row(i).sum();
        ga.row(i).array() += g.row(i).array() - y.row(i).array().exp() * gsum;
      }
    });
  }

  Var sum(Var a) {
    Mat y(1, 1);
    y(0, 0) = val(a).sum();
    return push_(std::move(y), [a](Tape& t, const Mat& g) {
      t.acc_(a).array() += g(0, 0);
    });
  }

  Var gather_rows(Var a, std::vector<int> idx) {
    const Mat& v = val(a);
    Mat y(static_cast<Eigen::Index>(idx.size()), v.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
      y.row(static_cast<Eigen::Index>(i)) = v.row(idx[i]);
    }
    return push_(std::move(y), [a, idx = std::move(idx)](Tape& t, const Mat& g) {
      Mat& ga = t.acc_(a);
      for (size_t i = 0; i < idx.size(); ++i) {
        ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
      }
    });
  }

  Var slice_rows(Var a, int r0, int n) {
    Mat y = val(a).middleRows(r0, n);
    return push_(std::move(y), [a, r0, n](Tape& t, const Mat& g) {
      t.acc_(a).middleRows(r0, n) += g;
    });
  }

  Var slice_cols(Var a, int c0, int n) {
    Mat y = val(a).middleCols(c0, n);
    return push_(std::move(y), [a, c0, n](Tape& t, const Mat& g) {
      t.acc_(a).middleCols(c0, n) += g;
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    Eigen::Index rows = 0;
    const Eigen::Index cols = val(parts.front()).cols();
    for (Var p : parts) {
      rows += val(p).rows();
    }
    Mat y(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      y.middleRows(at, val(p).rows()) = val(p);
      at += val(p).rows();
    }
    return push_(std::move(y), [parts](Tape& t, const Mat& g) {
      Eigen::Index at = 0;
      for (Var p : parts) {
        const Eigen::Index n = t.val(p).rows();
        t.acc_(p) += g.middleRows(at, n);
        at += n;
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    Eigen::Index cols = 0;
    const Eigen::Index rows = val(parts.front()).rows();
    for (Var p : parts) {
      cols += val(p).cols();
    }
    Mat y(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      y.middleCols(at, val(p).cols()) = val(p);
      at += val(p).cols();
    }
    return push_(std::move(y), [parts](Tape& t, const Mat& g) {
      Eigen::Index at = 0;
      for (Var p : parts) {
        const Eigen::Index n = t.val(p).cols();
        t.acc_(p) += g.middleCols(at, n);
        at += n;
      }
    });
  }

  // Per-row standardization (x - mean) / sqrt(var + eps), population variance.
  Var layer_norm_rows(Var a, T eps) {
    const Mat& x = val(a);
    Mat y(x.rows(), x.cols());
    const T n = static_cast<T>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const T mu = x.row(i).mean();
      const T var = (x.row(i).array() - mu).square().sum() / n;
      y.row(i) = (x.row(i).array() - mu) / std::sqrt(var + eps);
    }
    const Var self{size()};
    return push_(std::move(y), [a, eps, self](Tape& t, const Mat& g) {
      const Mat& x = t.val(a);
      const Mat& y = t.val(self);
      Mat& ga = t.acc_(a);
      const T n = static_cast<T>(x.cols());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T mu = x.row(i).mean();
        const T var = (x.row(i).array() - mu).square().sum() / n;
        const T inv = T(1) / std::sqrt(var + eps);
        const T gmean = g.row(i).mean();
        const T gymean = g.row(i).cwiseProduct(y.row(i)).mean();
        ga.row(i).array() +=
            inv * (g.row(i).array() - gmean - y.row(i).array() * gymean);
      }
    });
  }

  // y_k = ||v - rows_k||^2 for a 1xD query against a KxD matrix; result 1xK.
  Var squared_distances(Var v, Var rows) {
    const Mat& q = val(v);
    const Mat& e = val(rows);
    Mat y(1, e.rows());
    for (Eigen::Index k = 0; k < e.rows(); ++k) {
      y(0, k) = (q.row(0) - e.row(k)).squaredNorm();
    }
    return push_(std::move(y), [v, rows](Tape& t, const Mat& g) {
      const Mat& q = t.val(v);
      const Mat& e = t.val(rows);
      Mat& gq = t.acc_(v);
      Mat& ge = t.acc_(rows);
      for (Eigen::Index k = 0; k < e.rows(); ++k) {
        const auto diff = (q.row(0) - e.row(k)).eval();
        gq.row(0) += T(2) * g(0, k) * diff;
        ge.row(k) -= T(2) * g(0, k) * diff;
      }
    });
  }

  Var clamp_min(Var a, T m) {
    Mat y = val(a).cwiseMax(m);
    return push_(std::move(y), [a, m](Tape& t, const Mat& g) {
      t.acc_(a).array() += g.array() * (t.val(a).array() > m).template cast<T>();
    });
  }

  // Rows rescaled to sum to one. Inputs must have positive row sums.
  Var normalize_rows(Var a) {
    const Mat& x = val(a);
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      y.row(i) = x.row(i) / x.row(i).sum();
    }
    const Var self{size()};
    return push_(std::move(y), [a, self](Tape& t, const Mat& g) {
      const Mat& x = t.val(a);
      const Mat& y = t.val(self);
      Mat& ga = t.acc_(a);
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T s = x.row(i).sum();
        const T dot = g.row(i).cwiseProduct(y.row(i)).sum();
        ga.row(i).array() += (g.row(i).array() - dot) / s;
      }
    });
  }

  Var log(Var a) {
    Mat y = val(a).array().log();
    return push_(std::move(y), [a](Tape& t, const Mat& g) {
      t.acc_(a).array() += g.array() / t.val(a).array();
    });
  }

  // Elementwise -log(sigmoid(x)), i.e. softplus(-x), numerically stable.
  Var neg_log_sigmoid(Var a) {
    Mat y = val(a);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const T x = y.data()[i];
      y.data()[i] = x < T(0) ? -x + std::log1p(std::exp(x)) : std::log1p(std::exp(-x));
    }
    return push_(std::move(y), [a](Tape& t, const Mat& g) {
      const Mat& x = t.val(a);
      Mat& ga = t.acc_(a);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        // d/dx -log sigmoid(x) = -sigmoid(-x)
        const T s = T(1) / (T(1) + std::exp(x.data()[i]));
        ga.data()[i] += -g.data()[i] * s;
      }
    });
  }

  // Forward value is replaced by q; gradient passes to a unchanged.
  Var straight_through(Var a, Mat q) {
    return push_(std::move(q), [a](Tape& t, const Mat& g) { t.acc_(a) += g; });
  }

  // Reverse sweep from a 1x1 root. Creation order is already topological.
  void backward(Var root) {
    require(val(root).rows() == 1 && val(root).cols() == 1,
            "backward: root must be a scalar node");
    for (auto& n : nodes_) {
      n.grad.resize(0, 0);
    }
    acc_(root)(0, 0) = T(1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.back && n.grad.size() > 0) {
        n.back(*this, n.grad);
      }
    }
  }

 private:
  using BackFn = std::function<void(Tape&, const Mat&)>;

  struct Node {
    Mat value;
    Mat grad;
    BackFn back;
  };

  int check_(Var v) const {
    require(v.id >= 0 && v.id < size(), "tape: invalid var handle");
    return v.id;
  }

  Mat& acc_(Var v) {
    Node& n = nodes_[check_(v)];
    if (n.grad.size() == 0) {
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }

  Var push_(Mat v, BackFn fn) {
    nodes_.push_back(Node{std::move(v), Mat(), std::move(fn)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Process-unique generation tokens: a fresh tape constructed at the address
  // of a destroyed one must not satisfy a parameter's stale binding.
  static uint64_t next_gen_() {
    static uint64_t counter = 0;
    return ++counter;
  }

  std::vector<Node> nodes_;
  uint64_t gen_ = next_gen_();
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace sodarec
