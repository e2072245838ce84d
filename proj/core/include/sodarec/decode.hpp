#pragma once

#include "sodarec/seqmodel.hpp"
#include "sodarec/trie.hpp"

#include <string>
#include <vector>

namespace sodarec {

struct ScoredItem {
  std::string item_id;
  double score;  // accumulated natural-log probability
};

// Descending by score, ties broken by ascending item id; no duplicates.
using RankedList = std::vector<ScoredItem>;

// Beam search over the L+1 decoding steps, expanding only trie-valid
// continuations. Scores accumulate per-step log-softmax values with no length
// normalization (all sequences share one length). With beam_size at least the
// item count, every valid sequence survives to the end, so the result equals
// exhaustive scoring.
template <typename T>
RankedList constrained_beam_search(const SeqRec<T>& model, const TokenizedSeq& history,
                                   const PrefixTrie& trie, int beam_size);

// Same search starting from an already-encoded history (evaluation reuses the
// encoder pass across metric computations).
template <typename T>
RankedList constrained_beam_search(const SeqRec<T>& model,
                                   const typename SeqRec<T>::EncodedHistory& enc,
                                   const PrefixTrie& trie, int beam_size);

extern template RankedList constrained_beam_search<float>(const SeqRec<float>&,
                                                          const TokenizedSeq&,
                                                          const PrefixTrie&, int);
extern template RankedList constrained_beam_search<double>(const SeqRec<double>&,
                                                           const TokenizedSeq&,
                                                           const PrefixTrie&, int);

}  // namespace sodarec
