#pragma once

#include "sodarec/align.hpp"
#include "sodarec/config.hpp"
#include "sodarec/corpus.hpp"
#include "sodarec/metrics.hpp"
#include "sodarec/quantizer.hpp"
#include "sodarec/seqmodel.hpp"

#include <functional>
#include <string>
#include <vector>

namespace sodarec {

enum class Ablation { kFull, kNoNeg, kNoLoss, kNoAlter };

Ablation parse_ablation(const std::string& name);
const char* ablation_name(Ablation ab);

// One logged training epoch. Columns not produced by the phase repeat their
// most recent value so every row is finite.
struct EpochLog {
  int cycle = 0;
  std::string phase;  // "rec" or "tok"
  int epoch = 0;
  double l_token = 0.0;
  double l_rec = 0.0;
  double l_soda = 0.0;
  double l_combined = 0.0;
};

struct RunReport {
  std::vector<EpochLog> curve;
  MetricsReport validation;
  std::string config_digest;
  uint64_t seed = 0;
  std::string variant;
  double wall_seconds = 0.0;  // excluded from serialized artifacts

  void save_log(const std::string& path) const;  // train_log.tsv
  static std::vector<EpochLog> load_log(const std::string& path);
};

// k-means codebook initialization followed by mini-batch descent on the
// reconstruction + quantization objective over the item embeddings. Returns
// the per-epoch mean loss curve (index 0 = after initialization only).
// Aborts on a non-finite loss.
std::vector<double> pretrain_tokenizer(RqVae<float>& rq, const MatF& embeddings,
                                       int epochs, int batch, float lr, uint64_t seed);

// Alternating optimization: recommender phases (generation loss plus
// lambda-weighted alignment loss; tokenizer frozen) interleaved with tokenizer
// phases (tokenizer objective; recommender frozen), each tokenizer phase
// followed by a semantic-ID refresh and re-tokenization. The final cycle ends
// with its recommender phase so the shipped model matches the shipped IDs.
// Ablations: no_neg swaps the ranking loss for the pointwise one, no_loss
// forces lambda to zero, no_alter skips tokenizer phases and refreshes.
RunReport train_alternating(RqVae<float>& rq, SeqRec<float>& model, const Dataset& ds,
                            const TrainConfig& cfg, Ablation ab, SemanticIdMap* ids_out);

// Builds the tokenizer and model from the config, pretrains, then alternates.
struct RunResult {
  RqVae<float> quantizer;
  SeqRec<float> model;
  SemanticIdMap ids;
  RunReport report;
  std::vector<double> pretrain_curve;
};

RunResult run_training(const Dataset& ds, const TrainConfig& cfg, Ablation ab);

// Semantic-ID map over a dataset's items, rows taken in ascending item-id
// order (the dataset's row order).
template <typename T>
SemanticIdMap dataset_semantic_ids(const RqVae<T>& rq, const EmbeddingTable& items);

// ---- finite-difference gradient verification (64-bit) ----

// Central differences with step 1e-5 scaled by parameter magnitude, against
// the analytic gradients left in p->grad by compute_grads. Returns the worst
// relative error over every element of every parameter.
double grad_check(const std::vector<Parameter<double>*>& params,
                  const std::function<double()>& loss_value,
                  const std::function<void()>& compute_grads);

// Tokenizer objective on a tiny random instance (stop-gradient captures held
// at their base values during differencing).
double grad_check_tokenizer_loss(uint64_t seed);

// Generation loss through the full encoder-decoder on a tiny random instance.
double grad_check_rec_loss(uint64_t seed);

// Ranking alignment loss through pooling, projection, soft assignment, and
// the symmetric KL score, w.r.t. every recommender parameter.
double grad_check_align_path(uint64_t seed);

}  // namespace sodarec
