#include "sodarec/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace sodarec {

namespace {

// 1-based rank of target, or 0 when absent.
int rank_of(const RankedList& ranked, const std::string& target) {
  for (size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].item_id == target) {
      return static_cast<int>(i) + 1;
    }
  }
  return 0;
}

}  // namespace

double recall_at_k(const RankedList& ranked, const std::string& target, int k) {
  require(k >= 1, "recall_at_k: k must be at least 1");
  const int r = rank_of(ranked, target);
  return (r >= 1 && r <= k) ? 1.0 : 0.0;
}

double ndcg_at_k(const RankedList& ranked, const std::string& target, int k) {
  require(k >= 1, "ndcg_at_k: k must be at least 1");
  const int r = rank_of(ranked, target);
  if (r < 1 || r > k) {
    return 0.0;
  }
  return 1.0 / std::log2(static_cast<double>(r) + 1.0);
}

double MetricsReport::get(const std::string& name, int k) const {
  for (const MetricValue& m : metrics) {
    if (m.name == name && m.k == k) {
      return m.value;
    }
  }
  fail(strf("metrics report has no %s@%d", name.c_str(), k));
}

std::string MetricsReport::to_lines() const {
  std::ostringstream out;
  out << "# seed " << seed << "\n";
  out << "# config " << config_digest << "\n";
  for (const MetricValue& m : metrics) {
    out << m.name << '\t' << m.k << '\t' << strf("%.17g", m.value) << '\t'
        << m.n_users << "\n";
  }
  return out.str();
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  out << strf("%-10s %4s %10s %8s\n", "metric", "K", "value", "users");
  for (const MetricValue& m : metrics) {
    out << strf("%-10s %4d %10.4f %8d\n", m.name.c_str(), m.k, m.value, m.n_users);
  }
  return out.str();
}

void MetricsReport::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) {
    fail(strf("cannot write metrics file: %s", path.c_str()));
  }
  out << to_lines();
  if (!out) {
    fail(strf("write failed: %s", path.c_str()));
  }
}

MetricsReport MetricsReport::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    fail(strf("cannot open metrics file: %s", path.c_str()));
  }
  MetricsReport rep;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      if (key == "seed") {
        hs >> rep.seed;
      } else if (key == "config") {
        hs >> rep.config_digest;
      }
      continue;
    }
    std::istringstream ls(line);
    MetricValue m;
    if (!(ls >> m.name >> m.k >> m.value >> m.n_users)) {
      fail(strf("%s:%d: malformed metric record", path.c_str(), lineno));
    }
    rep.metrics.push_back(std::move(m));
  }
  return rep;
}

MetricsReport evaluate_ranked(const std::vector<std::pair<RankedList, std::string>>& runs,
                              const std::vector<int>& ks) {
  require(!runs.empty(), "evaluate: no users to evaluate");
  require(!ks.empty(), "evaluate: no K values requested");
  MetricsReport rep;
  const int n = static_cast<int>(runs.size());
  for (int k : ks) {
    double recall = 0.0, ndcg = 0.0;
    for (const auto& [ranked, target] : runs) {
      recall += recall_at_k(ranked, target, k);
      ndcg += ndcg_at_k(ranked, target, k);
    }
    rep.metrics.push_back(MetricValue{"recall", k, recall / n, n});
    rep.metrics.push_back(MetricValue{"ndcg", k, ndcg / n, n});
  }
  return rep;
}

template <typename T>
MetricsReport evaluate(const SeqRec<T>& model, const SemanticIdMap& ids,
                       const std::vector<UserSequence>& split,
                       const std::vector<int>& ks, int beam_size) {
  require(!split.empty(), "evaluate: empty split");
  int max_k = 0;
  for (int k : ks) {
    max_k = std::max(max_k, k);
  }
  if (beam_size < max_k) {
    logging::warn(strf("evaluate: beam size %d is below K=%d; recall is capped at "
                       "the returned-list length", beam_size, max_k));
  }
  const PrefixTrie trie = PrefixTrie::build(ids, model.vocab());
  std::vector<std::pair<RankedList, std::string>> runs;
  runs.reserve(split.size());
  for (const UserSequence& u : split) {
    const TokenizedSeq x =
        tokenize_history(u.history, ids, model.vocab(), model.config().max_items);
    runs.emplace_back(constrained_beam_search(model, x, trie, beam_size), u.target);
  }
  return evaluate_ranked(runs, ks);
}

template MetricsReport evaluate<float>(const SeqRec<float>&, const SemanticIdMap&,
                                       const std::vector<UserSequence>&,
                                       const std::vector<int>&, int);
template MetricsReport evaluate<double>(const SeqRec<double>&, const SemanticIdMap&,
                                        const std::vector<UserSequence>&,
                                        const std::vector<int>&, int);

}  // namespace sodarec
