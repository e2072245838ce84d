#pragma once

#include "sodarec/nn.hpp"
#include "sodarec/quantizer.hpp"

#include <map>
#include <string>
#include <vector>

namespace sodarec {

// Global token-id layout over the semantic-ID vocabulary. Code (layer, k)
// pairs and disambiguation slots map injectively into one id space after the
// reserved specials.
struct VocabLayout {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;  // reserved; fixed-length decoding never emits it

  int layers = 0;          // L
  int codebook_size = 0;   // K
  int disamb_capacity = 64;

  VocabLayout() = default;
  VocabLayout(int L, int K, int cap = 64)
      : layers(L), codebook_size(K), disamb_capacity(cap) {}

  int code_token(int layer, int k) const {
    require(layer >= 0 && layer < layers, "vocab: layer out of range");
    require(k >= 0 && k < codebook_size, "vocab: code out of range");
    return 3 + layer * codebook_size + k;
  }

  int disamb_token(int t) const {
    require(t >= 0, "vocab: negative disambiguation slot");
    require(t < disamb_capacity,
            strf("vocab: disambiguation slot %d exceeds capacity %d "
                 "(raise disamb_capacity)", t, disamb_capacity));
    return 3 + layers * codebook_size + t;
  }

  int vocab_size() const { return 3 + layers * codebook_size + disamb_capacity; }
  int tokens_per_item() const { return layers + 1; }

  // The L+1 target tokens of one semantic ID.
  std::vector<int> item_tokens(const CodeSeq& id) const;
};

struct TokenizedSeq {
  std::vector<int> tokens;  // fixed capacity, padding id at masked positions
  std::vector<char> mask;   // 1 = valid

  int capacity() const { return static_cast<int>(tokens.size()); }
  int valid_count() const;
};

using SemanticIdMap = std::map<std::string, CodeSeq>;

// Concatenates each item's (L+1)-token ID chronologically, keeping the most
// recent max_items items, padded at the tail to max_items*(L+1) positions.
TokenizedSeq tokenize_history(const std::vector<std::string>& items,
                              const SemanticIdMap& id_map, const VocabLayout& vocab,
                              int max_items);

struct ModelConfig {
  int d_model = 64;
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int ffn = 128;
  int d_code = 16;         // projection head output width
  int max_items = 20;      // history capacity in items
  double dropout = 0.0;    // reserved; training runs deterministic at 0
  uint64_t seed = 1;
};

// One multi-head attention block's projections (bias-free).
template <typename T>
struct AttnWeights {
  Parameter<T> wq, wk, wv, wo;

  void setup(int d);
  void init(Rng& rng);
  void collect(const std::string& prefix, NamedParams<T>& out);
};

template <typename T>
struct LayerNormAffine {
  Parameter<T> g, b;

  void setup(int d);
  void collect(const std::string& prefix, NamedParams<T>& out);
};

template <typename T>
struct EncoderLayer {
  LayerNormAffine<T> ln1, ln2;
  AttnWeights<T> attn;
  Mlp<T> ffn;
};

template <typename T>
struct DecoderLayer {
  LayerNormAffine<T> ln1, ln2, ln3;
  AttnWeights<T> self_attn, cross_attn;
  Mlp<T> ffn;
};

// Pre-norm transformer encoder-decoder over the semantic-ID vocabulary, with
// the pooled-history projection head into code space. Padding is excluded by
// additive -1e9 attention bias, which underflows to an exact zero weight, so
// valid positions are bit-invariant to padded content.
template <typename T>
class SeqRec {
 public:
  using Var = typename Tape<T>::Var;

  SeqRec(VocabLayout vocab, ModelConfig cfg);

  const VocabLayout& vocab() const { return vocab_; }
  const ModelConfig& config() const { return cfg_; }
  int enc_capacity() const { return cfg_.max_items * vocab_.tokens_per_item(); }

  // ---- inference path (no tape) ----

  struct EncodedHistory {
    MatX<T> states;          // capacity x d_model
    std::vector<char> mask;  // 1 = valid
  };

  EncodedHistory encode_history(const TokenizedSeq& x) const;

  // Masked mean over valid encoder positions; errors on an all-padding input.
  MatX<T> pool_history(const EncodedHistory& enc) const;

  MatX<T> project_to_codespace(const MatX<T>& pooled) const;

  // Teacher-forced decoder logits for input tokens [BOS, y_0, ..]; one row of
  // vocabulary scores per input position.
  MatX<T> decoder_logits(const EncodedHistory& enc,
                         const std::vector<int>& dec_input) const;

  // Scores of the next token after the given target prefix (1 x V).
  MatX<T> next_token_logits(const EncodedHistory& enc,
                            const std::vector<int>& prefix) const;

  // -sum of per-step target log-softmax, from the inference path.
  T rec_loss_value(const TokenizedSeq& x, const std::vector<int>& target) const;

  // ---- training path (tape) ----

  struct BatchForward {
    Var loss_mean;              // 1x1, mean over examples of Eq-style token sums
    Var projected;              // B x d_code pooled-and-projected latents
    std::vector<T> per_example; // per-example loss values for logging
  };

  // One training step's graph over a batch of (history, target-tokens) pairs.
  // Set need_projection when the alignment loss will consume the latents.
  BatchForward forward_batch(Tape<T>& t, const std::vector<TokenizedSeq>& histories,
                             const std::vector<std::vector<int>>& targets,
                             bool need_projection);

  NamedParams<T> named_params();

 private:
  MatX<T> embed_(const std::vector<int>& tokens, const Parameter<T>& pos) const;
  MatX<T> attend_(const AttnWeights<T>& w, const MatX<T>& q_in, const MatX<T>& k_in,
                  const MatX<T>& bias_row, const MatX<T>* causal) const;
  MatX<T> ln_(const LayerNormAffine<T>& ln, const MatX<T>& x) const;
  MatX<T> encode_rows_(const MatX<T>& emb, const MatX<T>& bias_row) const;
  MatX<T> decode_rows_(const MatX<T>& emb, const MatX<T>& enc_states,
                       const MatX<T>& enc_bias_row) const;

  Var t_ln_(Tape<T>& t, LayerNormAffine<T>& ln, Var x);
  Var t_attend_(Tape<T>& t, AttnWeights<T>& w, Var q_in, Var k_in, Var bias_row,
                Var causal);

  VocabLayout vocab_;
  ModelConfig cfg_;
  Parameter<T> tok_emb_;   // V x d_model
  Parameter<T> pos_enc_;   // enc capacity x d_model
  Parameter<T> pos_dec_;   // (L+1) x d_model
  std::vector<EncoderLayer<T>> enc_;
  std::vector<DecoderLayer<T>> dec_;
  LayerNormAffine<T> enc_lnf_, dec_lnf_;
  Parameter<T> head_w_;    // d_model x V
  Parameter<T> head_b_;    // 1 x V
  Mlp<T> proj_;            // d_model -> d_model -> d_code
};

extern template class SeqRec<float>;
extern template class SeqRec<double>;

}  // namespace sodarec
