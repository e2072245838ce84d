#include "sodarec/trie.hpp"

#include <algorithm>

namespace sodarec {

PrefixTrie PrefixTrie::build(const std::map<std::string, std::vector<int>>& tokens_by_item) {
  PrefixTrie trie;
  size_t expected_len = 0;
  for (const auto& [item, tokens] : tokens_by_item) {
    require(!tokens.empty(), strf("trie: item %s has an empty sequence", item.c_str()));
    if (trie.n_items_ == 0) {
      expected_len = tokens.size();
    } else if (tokens.size() != expected_len) {
      fail(strf("trie: item %s has length %zu, expected %zu", item.c_str(),
                tokens.size(), expected_len));
    }
    int node = kRoot;
    for (size_t i = 0; i < tokens.size(); ++i) {
      const int tok = tokens[i];
      const int next = trie.step(node, tok);
      if (next >= 0) {
        node = next;
      } else {
        trie.nodes_.push_back(Node{});
        const int fresh = static_cast<int>(trie.nodes_.size()) - 1;
        auto& edges = trie.nodes_[static_cast<size_t>(node)].edges;
        const auto at = std::lower_bound(
            edges.begin(), edges.end(), tok,
            [](const std::pair<int, int>& e, int t) { return e.first < t; });
        edges.insert(at, {tok, fresh});
        node = fresh;
      }
    }
    Node& leaf = trie.nodes_[static_cast<size_t>(node)];
    if (leaf.item >= 0) {
      fail(strf("trie: items %s and %s share one full semantic ID",
                trie.items_[static_cast<size_t>(leaf.item)].c_str(), item.c_str()));
    }
    leaf.item = static_cast<int>(trie.items_.size());
    trie.items_.push_back(item);
    ++trie.n_items_;
  }
  return trie;
}

PrefixTrie PrefixTrie::build(const SemanticIdMap& ids, const VocabLayout& vocab) {
  std::map<std::string, std::vector<int>> tokens;
  for (const auto& [item, id] : ids) {
    tokens.emplace(item, vocab.item_tokens(id));
  }
  return build(tokens);
}

int PrefixTrie::step(int node, int token) const {
  const auto& edges = nodes_[static_cast<size_t>(node)].edges;
  const auto it = std::lower_bound(
      edges.begin(), edges.end(), token,
      [](const std::pair<int, int>& e, int t) { return e.first < t; });
  if (it != edges.end() && it->first == token) {
    return it->second;
  }
  return -1;
}

const std::vector<std::pair<int, int>>& PrefixTrie::children(int node) const {
  return nodes_[static_cast<size_t>(node)].edges;
}

bool PrefixTrie::is_leaf(int node) const {
  return nodes_[static_cast<size_t>(node)].item >= 0;
}

const std::string& PrefixTrie::item_at(int node) const {
  const Node& n = nodes_[static_cast<size_t>(node)];
  require(n.item >= 0, "trie: node is not a leaf");
  return items_[static_cast<size_t>(n.item)];
}

bool PrefixTrie::accepts(const std::vector<int>& tokens) const {
  int node = kRoot;
  for (int tok : tokens) {
    node = step(node, tok);
    if (node < 0) {
      return false;
    }
  }
  return is_leaf(node);
}

}  // namespace sodarec
