#include "sodarec/align.hpp"

#include <cmath>

namespace sodarec {

namespace {

template <typename T>
MatX<T> floored(const MatX<T>& rows, T eps) {
  MatX<T> out = rows.cwiseMax(eps);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename T>
T kl_row(const MatX<T>& a, const MatX<T>& b, Eigen::Index i) {
  T s = T(0);
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    s += a(i, j) * std::log(a(i, j) / b(i, j));
  }
  return s;
}

}  // namespace

template <typename T>
MatX<T> target_distribution(const MatX<T>& z_y, const RqVae<T>& quantizer, T tau) {
  return quantizer.quantize_soft(quantizer.quantize_hard(quantizer.encode(z_y)), tau);
}

template <typename T>
MatX<T> history_distribution(const MatX<T>& r_x, const RqVae<T>& quantizer, T tau) {
  require(r_x.rows() == 1 && r_x.cols() == quantizer.config().d_code,
          "history_distribution: expected a 1 x d_code vector");
  return quantizer.quantize_soft(quantizer.quantize_hard(r_x), tau);
}

template <typename T>
MatX<T> aggregate_negative(const std::vector<MatX<T>>& batch, int self_index) {
  require(batch.size() >= 2, "aggregate_negative: need at least one other user");
  require(self_index >= 0 && self_index < static_cast<int>(batch.size()),
          "aggregate_negative: self_index out of range");
  MatX<T> sum;
  int n = 0;
  for (int i = 0; i < static_cast<int>(batch.size()); ++i) {
    if (i == self_index) {
      continue;
    }
    if (n == 0) {
      sum = batch[static_cast<size_t>(i)];
    } else {
      sum += batch[static_cast<size_t>(i)];
    }
    ++n;
  }
  return sum / static_cast<T>(n);
}

template <typename T>
T distribution_score(const MatX<T>& a, const MatX<T>& b, T epsilon) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "distribution_score: shape mismatch");
  require(a.rows() > 0, "distribution_score: empty representation");
  const MatX<T> fa = floored(a, epsilon);
  const MatX<T> fb = floored(b, epsilon);
  T total = T(0);
  for (Eigen::Index l = 0; l < fa.rows(); ++l) {
    total += -(kl_row(fa, fb, l) + kl_row(fb, fa, l)) / T(2);
  }
  return total / static_cast<T>(fa.rows());
}

template <typename T>
T soda_loss(const MatX<T>& h_plus, const MatX<T>& h_minus, const MatX<T>& h_y,
            T beta, T epsilon) {
  require(beta > T(0), "soda_loss: beta must be positive");
  const T sp = distribution_score(h_plus, h_y, epsilon);
  const T sn = distribution_score(h_minus, h_y, epsilon);
  const T x = beta * (sp - sn);
  // -log sigmoid(x) = softplus(-x), stable on both sides.
  return x < T(0) ? -x + std::log1p(std::exp(x)) : std::log1p(std::exp(-x));
}

template <typename T>
T pointwise_variant(const MatX<T>& h_plus, const MatX<T>& h_y, T beta, T epsilon) {
  require(beta > T(0), "pointwise_variant: beta must be positive");
  const T x = beta * distribution_score(h_plus, h_y, epsilon);
  return x < T(0) ? -x + std::log1p(std::exp(x)) : std::log1p(std::exp(-x));
}

template <typename T>
typename Tape<T>::Var floor_rows(Tape<T>& t, typename Tape<T>::Var rows, T eps) {
  return t.normalize_rows(t.clamp_min(rows, eps));
}

template <typename T>
typename Tape<T>::Var distribution_score(Tape<T>& t, typename Tape<T>::Var a,
                                         typename Tape<T>::Var b, T eps) {
  const Eigen::Index layers = t.val(a).rows();
  require(layers > 0 && t.val(b).rows() == layers && t.val(b).cols() == t.val(a).cols(),
          "distribution_score: shape mismatch");
  const auto fa = floor_rows(t, a, eps);
  const auto fb = floor_rows(t, b, eps);
  const auto la = t.log(fa);
  const auto lb = t.log(fb);
  const auto kl_ab = t.sum(t.mul(fa, t.sub(la, lb)));
  const auto kl_ba = t.sum(t.mul(fb, t.sub(lb, la)));
  return t.scale(t.add(kl_ab, kl_ba), T(-1) / (T(2) * static_cast<T>(layers)));
}

template <typename T>
typename Tape<T>::Var history_distribution(Tape<T>& t, RqVae<T>& quantizer,
                                           typename Tape<T>::Var r_x, T tau) {
  return t.concat_rows(quantizer.soft_assign_rows(t, r_x, tau, /*train_books=*/false));
}

template <typename T>
typename Tape<T>::Var soda_loss(Tape<T>& t, typename Tape<T>::Var s_plus,
                                typename Tape<T>::Var s_minus, T beta) {
  require(beta > T(0), "soda_loss: beta must be positive");
  return t.neg_log_sigmoid(t.scale(t.sub(s_plus, s_minus), beta));
}

template <typename T>
typename Tape<T>::Var pointwise_variant(Tape<T>& t, typename Tape<T>::Var s_plus,
                                        T beta) {
  require(beta > T(0), "pointwise_variant: beta must be positive");
  return t.neg_log_sigmoid(t.scale(s_plus, beta));
}

#define SODAREC_INSTANTIATE(T)                                                        \
  template struct AlignConfig<T>;                                                     \
  template MatX<T> target_distribution<T>(const MatX<T>&, const RqVae<T>&, T);        \
  template MatX<T> history_distribution<T>(const MatX<T>&, const RqVae<T>&, T);       \
  template MatX<T> aggregate_negative<T>(const std::vector<MatX<T>>&, int);           \
  template T distribution_score<T>(const MatX<T>&, const MatX<T>&, T);                \
  template T soda_loss<T>(const MatX<T>&, const MatX<T>&, const MatX<T>&, T, T);      \
  template T pointwise_variant<T>(const MatX<T>&, const MatX<T>&, T, T);              \
  template Tape<T>::Var floor_rows<T>(Tape<T>&, Tape<T>::Var, T);                     \
  template Tape<T>::Var distribution_score<T>(Tape<T>&, Tape<T>::Var, Tape<T>::Var,   \
                                              T);                                     \
  template Tape<T>::Var history_distribution<T>(Tape<T>&, RqVae<T>&, Tape<T>::Var,    \
                                                T);                                   \
  template Tape<T>::Var soda_loss<T>(Tape<T>&, Tape<T>::Var, Tape<T>::Var, T);        \
  template Tape<T>::Var pointwise_variant<T>(Tape<T>&, Tape<T>::Var, T);

SODAREC_INSTANTIATE(float)
SODAREC_INSTANTIATE(double)
#undef SODAREC_INSTANTIATE

}  // namespace sodarec
