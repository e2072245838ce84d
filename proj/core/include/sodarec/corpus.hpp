#pragma once

#include "sodarec/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace sodarec {

struct Interaction {
  std::string user_id;
  std::string item_id;
  int64_t timestamp = 0;  // seconds
};

struct InteractionLog {
  std::vector<Interaction> records;

  size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  void push_back(Interaction r) { records.push_back(std::move(r)); }
  const Interaction& operator[](size_t i) const { return records[i]; }
  Interaction& operator[](size_t i) { return records[i]; }
  auto begin() const { return records.begin(); }
  auto end() const { return records.end(); }
};

// Reads "user_id\titem_id\ttimestamp" TSV. The result is globally sorted by
// timestamp (stable, so file order breaks ties) with exact duplicate triples
// dropped. A fully empty file yields an empty log; a wrong header or a
// malformed row raises an error naming the line.
InteractionLog load_interactions(const std::string& path);

void save_interactions(const InteractionLog& log, const std::string& path);

// Iteratively removes users and items with fewer than k interactions until
// every survivor has at least k. May return an empty log.
InteractionLog k_core_filter(const InteractionLog& log, int k);

// One user's chronological item list after truncation to the most recent
// max_len + 2 entries (history capacity plus the two held-out targets).
struct UserItems {
  std::string user_id;
  std::vector<std::string> items;
};

std::vector<UserItems> build_sequences(const InteractionLog& log, int max_len);

// A single supervised example: predict `target` from `history`.
struct UserSequence {
  std::string user_id;
  std::vector<std::string> history;  // chronological, at most max_len items
  std::string target;
};

struct SplitDataset {
  std::vector<UserSequence> train;
  std::vector<UserSequence> validation;
  std::vector<UserSequence> test;
};

// Leave-one-out: last item is the test target, second-to-last the validation
// target, and every (prefix, next-item) pair before those is a training
// example. Users with fewer than 3 items are excluded with a warning.
SplitDataset split_leave_one_out(const std::vector<UserItems>& sequences, int max_len);

struct EmbeddingTable {
  std::vector<std::string> ids;  // row order
  MatF vectors;                  // n x d
  std::map<std::string, int> index;

  int dim() const { return static_cast<int>(vectors.cols()); }
  int count() const { return static_cast<int>(vectors.rows()); }
  bool has(const std::string& id) const { return index.count(id) > 0; }
  int row_of(const std::string& id) const;
  void rebuild_index();
};

// embeddings.txt: header "n d", then n rows of d space-separated floats.
// item_map.tsv: "item_id\trow" pairs covering rows 0..n-1 exactly once.
EmbeddingTable load_embeddings(const std::string& emb_path, const std::string& map_path);
void save_embeddings(const EmbeddingTable& table, const std::string& emb_path,
                     const std::string& map_path);

// Planted-cluster synthetic corpus: item embeddings drawn around n_clusters
// Gaussian centers, each user preferring one cluster and picking within it
// with probability 0.8. Timestamps increase along each user's history and
// every user gets at least 5 interactions. Deterministic given the seed.
struct SynthConfig {
  int n_users = 100;
  int n_items = 50;
  int n_clusters = 4;
  int d_in = 32;
  int min_events = 5;
  int max_events = 20;
  double within_cluster_p = 0.8;
  double center_scale = 3.0;
  uint64_t seed = 1;
};

struct SynthCorpus {
  InteractionLog log;
  EmbeddingTable items;
  std::vector<int> item_cluster;
  std::vector<int> user_cluster;
};

SynthCorpus synth_corpus(const SynthConfig& cfg);

// Model-ready bundle: the filtered log split leave-one-out, with the embedding
// table restricted to surviving items and re-ordered so that row index equals
// ascending item-id rank (decode tie-breaks use this order). Items missing
// from the table are a hard error.
struct Dataset {
  EmbeddingTable items;  // rows in ascending item-id order
  SplitDataset split;
  int max_len = 20;
};

Dataset prepare_dataset(const InteractionLog& log, const EmbeddingTable& table,
                        int core_k, int max_len);

}  // namespace sodarec
