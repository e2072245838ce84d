#pragma once

#include "sodarec/corpus.hpp"
#include "sodarec/decode.hpp"

#include <string>
#include <vector>

namespace sodarec {

// 1 if target appears in the top k of the ranking, else 0.
double recall_at_k(const RankedList& ranked, const std::string& target, int k);

// 1/log2(rank+1) for a 1-based rank within k, else 0; single-target protocol
// so the ideal DCG is 1.
double ndcg_at_k(const RankedList& ranked, const std::string& target, int k);

struct MetricValue {
  std::string name;
  int k = 0;
  double value = 0.0;
  int n_users = 0;
};

struct MetricsReport {
  std::vector<MetricValue> metrics;
  uint64_t seed = 0;
  std::string config_digest;

  double get(const std::string& name, int k) const;

  // One record per line: name, K, value, user count; metadata on '#' lines.
  std::string to_lines() const;
  // Aligned table for standard output.
  std::string to_table() const;

  void save(const std::string& path) const;
  static MetricsReport load(const std::string& path);
};

// Aggregation core: mean metric over per-user (ranking, target) pairs.
MetricsReport evaluate_ranked(const std::vector<std::pair<RankedList, std::string>>& runs,
                              const std::vector<int>& ks);

// Full-ranking evaluation of a split: tokenize each user's history with the
// given semantic IDs, beam-decode against the trie of those IDs, and average
// Recall@K / NDCG@K over users. Errors on an empty split; warns when the beam
// cannot fill the largest K.
template <typename T>
MetricsReport evaluate(const SeqRec<T>& model, const SemanticIdMap& ids,
                       const std::vector<UserSequence>& split,
                       const std::vector<int>& ks, int beam_size);

extern template MetricsReport evaluate<float>(const SeqRec<float>&, const SemanticIdMap&,
                                              const std::vector<UserSequence>&,
                                              const std::vector<int>&, int);
extern template MetricsReport evaluate<double>(const SeqRec<double>&,
                                               const SemanticIdMap&,
                                               const std::vector<UserSequence>&,
                                               const std::vector<int>&, int);

}  // namespace sodarec
