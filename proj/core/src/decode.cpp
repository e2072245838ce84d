#include "sodarec/decode.hpp"

#include <algorithm>
#include <cmath>

namespace sodarec {

namespace {

struct Hypothesis {
  int node = PrefixTrie::kRoot;
  std::vector<int> prefix;
  double logp = 0.0;
};

// Higher score first; equal scores fall back to prefix order so pruning is
// deterministic even mid-search.
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.logp != b.logp) {
    return a.logp > b.logp;
  }
  return a.prefix < b.prefix;
}

}  // namespace

template <typename T>
RankedList constrained_beam_search(const SeqRec<T>& model,
                                   const typename SeqRec<T>::EncodedHistory& enc,
                                   const PrefixTrie& trie, int beam_size) {
  require(beam_size >= 1, "beam search: beam_size must be at least 1");
  if (trie.item_count() == 0) {
    return {};
  }
  const int steps = model.vocab().tokens_per_item();

  std::vector<Hypothesis> beam{Hypothesis{}};
  std::vector<Hypothesis> next;
  for (int step = 0; step < steps; ++step) {
    next.clear();
    for (const Hypothesis& h : beam) {
      const MatX<T> logits = model.next_token_logits(enc, h.prefix);
      const auto row = logits.row(0).array();
      const T m = row.maxCoeff();
      const T lse = m + std::log((row - m).exp().sum());
      for (const auto& [tok, child] : trie.children(h.node)) {
        Hypothesis ext;
        ext.node = child;
        ext.prefix = h.prefix;
        ext.prefix.push_back(tok);
        ext.logp = h.logp + static_cast<double>(logits(0, tok) - lse);
        next.push_back(std::move(ext));
      }
    }
    std::sort(next.begin(), next.end(), better);
    if (static_cast<int>(next.size()) > beam_size) {
      next.resize(static_cast<size_t>(beam_size));
    }
    beam.swap(next);
  }

  RankedList out;
  out.reserve(beam.size());
  for (const Hypothesis& h : beam) {
    out.push_back(ScoredItem{trie.item_at(h.node), h.logp});
  }
  std::sort(out.begin(), out.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) {
      return a.score > b.score;
    }
    return a.item_id < b.item_id;
  });
  return out;
}

template <typename T>
RankedList constrained_beam_search(const SeqRec<T>& model, const TokenizedSeq& history,
                                   const PrefixTrie& trie, int beam_size) {
  return constrained_beam_search(model, model.encode_history(history), trie, beam_size);
}

#define SODAREC_INSTANTIATE(T)                                                     \
  template RankedList constrained_beam_search<T>(const SeqRec<T>&,                 \
                                                 const TokenizedSeq&,              \
                                                 const PrefixTrie&, int);          \
  template RankedList constrained_beam_search<T>(                                  \
      const SeqRec<T>&, const typename SeqRec<T>::EncodedHistory&,                 \
      const PrefixTrie&, int);

SODAREC_INSTANTIATE(float)
SODAREC_INSTANTIATE(double)
#undef SODAREC_INSTANTIATE

}  // namespace sodarec
