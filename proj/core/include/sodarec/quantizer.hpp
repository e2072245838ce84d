#pragma once

#include "sodarec/nn.hpp"

#include <vector>

namespace sodarec {

// Semantic ID of one item: L codebook indices plus a disambiguation token.
// Indices are 0-based in memory; the exported TSV uses 1-based codes.
struct CodeSeq {
  std::vector<int> codes;
  int disamb = 0;

  bool operator==(const CodeSeq& o) const {
    return codes == o.codes && disamb == o.disamb;
  }
};

template <typename T>
struct TokenizerConfig {
  int d_in = 0;
  int d_code = 16;
  int layers = 3;         // L
  int codebook_size = 16;  // K
  int hidden = 64;         // 0 = plain affine encoder/decoder
  T alpha = T(0.25);
  uint64_t seed = 1;
  int kmeans_iters = 25;
};

// Residual chain of one hard quantization pass.
// residuals has layers+1 rows: row 0 is the input latent, row l the residual
// entering layer l, and the last row the leftover after all layers.
template <typename T>
struct QuantTrace {
  MatX<T> residuals;
  std::vector<int> codes;
};

// Seeded k-means (k-means++ init, Lloyd iterations, ties to the lowest index).
// Sets *degenerate if duplicate centroids remain after convergence.
template <typename T>
MatX<T> kmeans(const MatX<T>& points, int k, uint64_t seed, int iters,
               bool* degenerate = nullptr);

// Residual-quantizing autoencoder: a feed-forward encoder into code space,
// L codebooks quantizing recursively, and a mirrored decoder.
template <typename T>
class RqVae {
 public:
  using Var = typename Tape<T>::Var;

  explicit RqVae(TokenizerConfig<T> cfg);

  const TokenizerConfig<T>& config() const { return cfg_; }
  int layers() const { return cfg_.layers; }
  int codebook_size() const { return cfg_.codebook_size; }

  const MatX<T>& codebook(int l) const { return books_[l].value; }
  MatX<T>& codebook_mut(int l) { return books_[l].value; }
  Parameter<T>& codebook_param(int l) { return books_[l]; }

  Mlp<T>& encoder() { return enc_; }
  Mlp<T>& decoder() { return dec_; }

  // Layered k-means over the samples: layer 0 clusters the latents, deeper
  // layers cluster the residuals left by hard assignment through the layers
  // above. Throws if fewer samples than codewords.
  void init_codebooks(const MatX<T>& latent_samples);

  // Batch-friendly: each row of z is one item embedding.
  MatX<T> encode(const MatX<T>& z) const { return enc_.forward(z); }

  QuantTrace<T> quantize_hard(const MatX<T>& latent) const;

  // Soft assignment rows from the hard-chain residuals: row l is
  // softmax_k(-||v_l - e_l^k||^2 / tau). Result is layers x codebook_size.
  MatX<T> quantize_soft(const QuantTrace<T>& trace, T tau) const;

  MatX<T> decode(const std::vector<int>& codes) const;

  MatX<T> reconstruct(const MatX<T>& z) const;

  T reconstruction_mse(const MatX<T>& z) const;

  // Training loss for one item (1 x d_in). Gradient routing: the decoder path
  // sees the codeword sum through a straight-through estimator, codewords are
  // updated only by the quantization term, and the encoder only by the
  // reconstruction and alpha-weighted commitment terms.
  Var tokenizer_loss(Tape<T>& t, const MatX<T>& z);

  // Value-level evaluation with the stop-gradient captures frozen in `ctx`,
  // for finite-difference comparison against the tape gradients.
  struct FrozenCaptures {
    MatX<T> residuals;   // layers x d_code, sg(v_l)
    std::vector<int> codes;
    MatX<T> codewords;   // layers x d_code, sg(e_l^{c_l})
    MatX<T> ste_delta;   // 1 x d_code, sg(sum_l e - r)
  };
  FrozenCaptures freeze(const MatX<T>& z) const;
  T tokenizer_loss_frozen(const MatX<T>& z, const FrozenCaptures& ctx) const;

  // On-tape soft assignment rows for an already-on-tape latent. The residual
  // chain is differentiable w.r.t. the latent; with train_books the codebooks
  // participate as parameters, otherwise they enter as constants.
  std::vector<Var> soft_assign_rows(Tape<T>& t, Var latent, T tau, bool train_books);

  // Per-item code sequences with collision-breaking disambiguation tokens.
  // `order` lists row indices in ascending item-id order; tokens are assigned
  // in that order, smallest free integer per colliding code tuple.
  std::vector<CodeSeq> assign_semantic_ids(const MatX<T>& embeddings,
                                           const std::vector<int>& order) const;

  NamedParams<T> named_params();

 private:
  TokenizerConfig<T> cfg_;
  Mlp<T> enc_, dec_;
  std::vector<Parameter<T>> books_;
};

extern template class RqVae<float>;
extern template class RqVae<double>;
extern template MatF kmeans<float>(const MatF&, int, uint64_t, int, bool*);
extern template MatD kmeans<double>(const MatD&, int, uint64_t, int, bool*);

}  // namespace sodarec
