#pragma once

#include "sodarec/quantizer.hpp"

#include <vector>

namespace sodarec {

// Weights of the distribution-alignment objective. lambda scales its share of
// the combined loss, beta sharpens the ranking sigmoid, tau tempers the soft
// assignments, epsilon floors probabilities before KL.
template <typename T>
struct AlignConfig {
  T lambda = T(1e-3);
  T beta = T(100);
  T tau = T(0.1);
  T epsilon = T(1e-10);

  void validate() const {
    require(tau > T(0), "align: tau must be positive");
    require(beta > T(0), "align: beta must be positive");
    require(lambda >= T(0), "align: lambda must be non-negative");
    require(epsilon > T(0) && epsilon <= T(1e-6),
            "align: epsilon must be in (0, 1e-6]");
  }
};

// A distributional representation is an L x K row-stochastic matrix: one soft
// codeword assignment per codebook layer.

// h^y: soft assignments of a target item embedding through the tokenizer.
template <typename T>
MatX<T> target_distribution(const MatX<T>& z_y, const RqVae<T>& quantizer, T tau);

// h^x: the same soft-assignment pipeline starting from an already-projected
// code-space vector (no encoder pass).
template <typename T>
MatX<T> history_distribution(const MatX<T>& r_x, const RqVae<T>& quantizer, T tau);

// h^-: per-layer mean over every batch member except self_index.
template <typename T>
MatX<T> aggregate_negative(const std::vector<MatX<T>>& batch, int self_index);

// Eq-style symmetric negative KL, floored at epsilon and renormalized, then
// averaged over layers. Zero iff the representations match; never positive.
template <typename T>
T distribution_score(const MatX<T>& a, const MatX<T>& b, T epsilon);

// -log sigmoid(beta * (s(h+, hy) - s(h-, hy))).
template <typename T>
T soda_loss(const MatX<T>& h_plus, const MatX<T>& h_minus, const MatX<T>& h_y,
            T beta, T epsilon);

// -log sigmoid(beta * s(h+, hy)); the no-negatives ablation.
template <typename T>
T pointwise_variant(const MatX<T>& h_plus, const MatX<T>& h_y, T beta, T epsilon);

template <typename T>
T combined_loss(T l_rec, T l_soda, T lambda) {
  require(lambda >= T(0), "combined_loss: lambda must be non-negative");
  return l_rec + lambda * l_soda;
}

// ---- tape versions for the training path ----

// Floors every entry at eps and renormalizes rows.
template <typename T>
typename Tape<T>::Var floor_rows(Tape<T>& t, typename Tape<T>::Var rows, T eps);

template <typename T>
typename Tape<T>::Var distribution_score(Tape<T>& t, typename Tape<T>::Var a,
                                         typename Tape<T>::Var b, T eps);

// L x K history distribution from an on-tape projected vector; codebooks stay
// frozen (they are constants on the tape).
template <typename T>
typename Tape<T>::Var history_distribution(Tape<T>& t, RqVae<T>& quantizer,
                                           typename Tape<T>::Var r_x, T tau);

template <typename T>
typename Tape<T>::Var soda_loss(Tape<T>& t, typename Tape<T>::Var s_plus,
                                typename Tape<T>::Var s_minus, T beta);

template <typename T>
typename Tape<T>::Var pointwise_variant(Tape<T>& t, typename Tape<T>::Var s_plus, T beta);

}  // namespace sodarec
