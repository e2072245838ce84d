#pragma once

#include "sodarec/seqmodel.hpp"

#include <map>
#include <string>
#include <vector>

namespace sodarec {

// Prefix trie over full token sequences of equal length; each leaf is exactly
// one item. Children are kept in ascending token order for deterministic
// traversal.
class PrefixTrie {
 public:
  static constexpr int kRoot = 0;

  // tokens_by_item: item id -> full (L+1)-token sequence.
  static PrefixTrie build(const std::map<std::string, std::vector<int>>& tokens_by_item);

  // Convenience: token sequences derived from semantic IDs.
  static PrefixTrie build(const SemanticIdMap& ids, const VocabLayout& vocab);

  // Child node for (node, token), or -1.
  int step(int node, int token) const;

  // (token, child) pairs in ascending token order.
  const std::vector<std::pair<int, int>>& children(int node) const;

  bool is_leaf(int node) const;

  // Item id at a leaf node.
  const std::string& item_at(int node) const;

  // Full-sequence membership.
  bool accepts(const std::vector<int>& tokens) const;

  size_t item_count() const { return n_items_; }
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::pair<int, int>> edges;  // sorted by token
    int item = -1;
  };

  std::vector<Node> nodes_{1};
  std::vector<std::string> items_;
  size_t n_items_ = 0;
};

}  // namespace sodarec
