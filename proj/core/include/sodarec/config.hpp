#pragma once

#include "sodarec/align.hpp"
#include "sodarec/quantizer.hpp"
#include "sodarec/seqmodel.hpp"

#include <string>
#include <vector>

namespace sodarec {

// Every tunable of a training run, loadable from key=value text and
// overridable by CLI flags. Field names below match the file keys.
struct TrainConfig {
  uint64_t seed = 1;

  // data
  int max_len = 20;
  int core_k = 5;

  // tokenizer
  int d_in = 0;  // 0 = take the embedding table's width
  int d_code = 16;
  int layers = 3;
  int codebook_size = 16;
  int hidden = 64;
  double alpha = 0.25;
  int kmeans_iters = 25;
  int tok_pretrain_epochs = 50;
  int tok_batch = 64;
  double tok_lr = 1e-3;

  // model
  int d_model = 64;
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int ffn = 128;
  int disamb_capacity = 64;

  // alignment
  double lambda = 1e-3;
  double beta = 100.0;
  double tau = 0.1;
  double epsilon = 1e-10;

  // alternating training
  double rec_lr = 1e-3;
  int batch = 64;
  int rec_epochs_per_cycle = 5;
  int tok_epochs_per_cycle = 1;
  int cycles = 10;

  // evaluation
  std::vector<int> eval_ks = {10, 20};
  int beam = 30;

  void validate() const;

  // Deterministic key=value dump (fixed key order, lossless numerics).
  std::string canonical() const;
  // FNV of the canonical dump, as "fnv1a64:<hex>".
  std::string digest() const;

  template <typename T>
  TokenizerConfig<T> tokenizer_config(int embedding_dim) const {
    TokenizerConfig<T> t;
    t.d_in = d_in > 0 ? d_in : embedding_dim;
    t.d_code = d_code;
    t.layers = layers;
    t.codebook_size = codebook_size;
    t.hidden = hidden;
    t.alpha = static_cast<T>(alpha);
    t.seed = seed;
    t.kmeans_iters = kmeans_iters;
    return t;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.d_model = d_model;
    m.enc_layers = enc_layers;
    m.dec_layers = dec_layers;
    m.heads = heads;
    m.ffn = ffn;
    m.d_code = d_code;
    m.max_items = max_len;
    m.seed = seed;
    return m;
  }

  template <typename T>
  AlignConfig<T> align_config() const {
    AlignConfig<T> a;
    a.lambda = static_cast<T>(lambda);
    a.beta = static_cast<T>(beta);
    a.tau = static_cast<T>(tau);
    a.epsilon = static_cast<T>(epsilon);
    return a;
  }

  VocabLayout vocab_layout() const {
    return VocabLayout(layers, codebook_size, disamb_capacity);
  }
};

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped,
// unknown keys are an error naming the line.
TrainConfig load_config(const std::string& path);

// Applies one "key=value" assignment (used for flag overrides).
void set_config_key(TrainConfig& cfg, const std::string& key, const std::string& value);

void apply_overrides(TrainConfig& cfg, const std::vector<std::string>& assignments);

}  // namespace sodarec
