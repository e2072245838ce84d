#include "sodarec/corpus.hpp"

#include "sodarec/rng.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

namespace sodarec {

namespace {

const char* kInteractionHeader = "user_id\titem_id\ttimestamp";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string chomp(std::string line) {
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  return line;
}

bool parse_i64(const std::string& s, int64_t* out) {
  if (s.empty()) {
    return false;
  }
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) {
    return false;
  }
  *out = v;
  return true;
}

// Zero-padded id with enough digits for the largest index.
std::string padded_id(char prefix, int idx, int total) {
  int width = 1;
  for (int v = total - 1; v >= 10; v /= 10) {
    ++width;
  }
  width = std::min(std::max(width, 4), 9);
  return strf("%c%0*d", prefix, width, idx);
}

}  // namespace

InteractionLog load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    fail(strf("cannot open interaction file: %s", path.c_str()));
  }
  InteractionLog log;
  std::string line;
  if (!std::getline(in, line)) {
    return log;  // empty file, empty log
  }
  if (chomp(line) != kInteractionHeader) {
    fail(strf("%s:1: expected header \"%s\"", path.c_str(), kInteractionHeader));
  }
  std::set<std::tuple<std::string, std::string, int64_t>> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::vector<std::string> f = split_tabs(chomp(line));
    if (f.size() != 3 || f[0].empty() || f[1].empty()) {
      fail(strf("%s:%d: expected 3 tab-separated fields", path.c_str(), lineno));
    }
    int64_t ts = 0;
    if (!parse_i64(f[2], &ts)) {
      fail(strf("%s:%d: bad timestamp \"%s\"", path.c_str(), lineno, f[2].c_str()));
    }
    if (seen.emplace(f[0], f[1], ts).second) {
      log.records.push_back(Interaction{f[0], f[1], ts});
    }
  }
  std::stable_sort(log.records.begin(), log.records.end(),
                   [](const Interaction& a, const Interaction& b) {
                     return a.timestamp < b.timestamp;
                   });
  return log;
}

void save_interactions(const InteractionLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    fail(strf("cannot write interaction file: %s", path.c_str()));
  }
  out << kInteractionHeader << "\n";
  for (const Interaction& r : log.records) {
    out << r.user_id << '\t' << r.item_id << '\t' << r.timestamp << "\n";
  }
  if (!out) {
    fail(strf("write failed: %s", path.c_str()));
  }
}

InteractionLog k_core_filter(const InteractionLog& log, int k) {
  require(k >= 1, "k_core_filter: k must be at least 1");
  std::vector<char> alive(log.records.size(), 1);
  while (true) {
    std::map<std::string, int> user_deg, item_deg;
    for (size_t i = 0; i < log.records.size(); ++i) {
      if (alive[i]) {
        ++user_deg[log.records[i].user_id];
        ++item_deg[log.records[i].item_id];
      }
    }
    bool removed = false;
    for (size_t i = 0; i < log.records.size(); ++i) {
      if (alive[i] && (user_deg[log.records[i].user_id] < k ||
                       item_deg[log.records[i].item_id] < k)) {
        alive[i] = 0;
        removed = true;
      }
    }
    if (!removed) {
      break;
    }
  }
  InteractionLog out;
  for (size_t i = 0; i < log.records.size(); ++i) {
    if (alive[i]) {
      out.records.push_back(log.records[i]);
    }
  }
  return out;
}

std::vector<UserItems> build_sequences(const InteractionLog& log, int max_len) {
  require(max_len >= 1, "build_sequences: max_len must be at least 1");
  // The log is already timestamp-sorted with ties in input order, so grouping
  // preserves chronology. std::map gives a deterministic user order.
  std::map<std::string, std::vector<std::string>> per_user;
  for (const Interaction& r : log.records) {
    per_user[r.user_id].push_back(r.item_id);
  }
  std::vector<UserItems> out;
  out.reserve(per_user.size());
  const size_t cap = static_cast<size_t>(max_len) + 2;
  for (auto& [user, items] : per_user) {
    if (items.size() > cap) {
      items.erase(items.begin(), items.end() - static_cast<ptrdiff_t>(cap));
    }
    out.push_back(UserItems{user, std::move(items)});
  }
  return out;
}

SplitDataset split_leave_one_out(const std::vector<UserItems>& sequences, int max_len) {
  require(max_len >= 1, "split_leave_one_out: max_len must be at least 1");
  SplitDataset ds;
  auto make = [max_len](const UserItems& u, size_t target_idx) {
    const size_t lo =
        target_idx > static_cast<size_t>(max_len) ? target_idx - static_cast<size_t>(max_len) : 0;
    UserSequence s;
    s.user_id = u.user_id;
    s.history.assign(u.items.begin() + static_cast<ptrdiff_t>(lo),
                     u.items.begin() + static_cast<ptrdiff_t>(target_idx));
    s.target = u.items[target_idx];
    return s;
  };
  for (const UserItems& u : sequences) {
    const size_t n = u.items.size();
    if (n < 3) {
      logging::warn(strf("split: user %s has %zu interactions, excluded",
                         u.user_id.c_str(), n));
      continue;
    }
    ds.test.push_back(make(u, n - 1));
    ds.validation.push_back(make(u, n - 2));
    for (size_t j = 1; j + 2 < n; ++j) {
      ds.train.push_back(make(u, j));
    }
  }
  return ds;
}

int EmbeddingTable::row_of(const std::string& id) const {
  const auto it = index.find(id);
  require(it != index.end(), strf("embedding table: unknown item %s", id.c_str()));
  return it->second;
}

void EmbeddingTable::rebuild_index() {
  index.clear();
  for (size_t i = 0; i < ids.size(); ++i) {
    const bool fresh = index.emplace(ids[i], static_cast<int>(i)).second;
    require(fresh, strf("embedding table: duplicate item %s", ids[i].c_str()));
  }
}

EmbeddingTable load_embeddings(const std::string& emb_path, const std::string& map_path) {
  std::ifstream in(emb_path);
  if (!in) {
    fail(strf("cannot open embedding file: %s", emb_path.c_str()));
  }
  int64_t n = 0, d = 0;
  {
    std::string header;
    if (!std::getline(in, header)) {
      fail(strf("%s:1: missing \"n d\" header", emb_path.c_str()));
    }
    std::istringstream hs(chomp(header));
    std::string extra;
    if (!(hs >> n >> d) || (hs >> extra) || n < 0 || d <= 0) {
      fail(strf("%s:1: malformed \"n d\" header", emb_path.c_str()));
    }
  }
  EmbeddingTable table;
  table.vectors.resize(n, d);
  std::string line;
  int64_t row = 0;
  while (std::getline(in, line)) {
    line = chomp(line);
    if (line.empty()) {
      continue;
    }
    if (row >= n) {
      fail(strf("%s: more rows than the declared %lld", emb_path.c_str(),
                static_cast<long long>(n)));
    }
    const char* p = line.c_str();
    for (int64_t j = 0; j < d; ++j) {
      char* end = nullptr;
      const float v = std::strtof(p, &end);
      if (end == p) {
        fail(strf("%s:%lld: expected %lld values, found %lld", emb_path.c_str(),
                  static_cast<long long>(row + 2), static_cast<long long>(d),
                  static_cast<long long>(j)));
      }
      table.vectors(row, j) = v;
      p = end;
    }
    while (*p == ' ') {
      ++p;
    }
    if (*p != '\0') {
      fail(strf("%s:%lld: more than %lld values in row", emb_path.c_str(),
                static_cast<long long>(row + 2), static_cast<long long>(d)));
    }
    ++row;
  }
  if (row != n) {
    fail(strf("%s: header declared %lld rows, found %lld", emb_path.c_str(),
              static_cast<long long>(n), static_cast<long long>(row)));
  }

  std::ifstream mp(map_path);
  if (!mp) {
    fail(strf("cannot open item map file: %s", map_path.c_str()));
  }
  table.ids.assign(static_cast<size_t>(n), std::string());
  std::vector<char> filled(static_cast<size_t>(n), 0);
  int lineno = 0;
  while (std::getline(mp, line)) {
    ++lineno;
    line = chomp(line);
    if (line.empty()) {
      continue;
    }
    const std::vector<std::string> f = split_tabs(line);
    int64_t r = 0;
    if (f.size() != 2 || f[0].empty() || !parse_i64(f[1], &r) || r < 0 || r >= n) {
      fail(strf("%s:%d: expected \"item_id\\trow\" with row in [0,%lld)",
                map_path.c_str(), lineno, static_cast<long long>(n)));
    }
    if (filled[r]) {
      fail(strf("%s:%d: row %lld mapped twice", map_path.c_str(), lineno,
                static_cast<long long>(r)));
    }
    filled[r] = 1;
    table.ids[static_cast<size_t>(r)] = f[0];
  }
  for (int64_t r = 0; r < n; ++r) {
    if (!filled[r]) {
      fail(strf("%s: row %lld has no item id", map_path.c_str(),
                static_cast<long long>(r)));
    }
  }
  table.rebuild_index();
  return table;
}

void save_embeddings(const EmbeddingTable& table, const std::string& emb_path,
                     const std::string& map_path) {
  std::ofstream out(emb_path);
  if (!out) {
    fail(strf("cannot write embedding file: %s", emb_path.c_str()));
  }
  out << table.count() << ' ' << table.dim() << "\n";
  char buf[64];
  for (int i = 0; i < table.count(); ++i) {
    for (int j = 0; j < table.dim(); ++j) {
      // %.9g round-trips every float32 exactly.
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(table.vectors(i, j)));
      if (j > 0) {
        out << ' ';
      }
      out << buf;
    }
    out << "\n";
  }
  if (!out) {
    fail(strf("write failed: %s", emb_path.c_str()));
  }
  std::ofstream mp(map_path);
  if (!mp) {
    fail(strf("cannot write item map file: %s", map_path.c_str()));
  }
  for (size_t i = 0; i < table.ids.size(); ++i) {
    mp << table.ids[i] << '\t' << i << "\n";
  }
  if (!mp) {
    fail(strf("write failed: %s", map_path.c_str()));
  }
}

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  require(cfg.n_users > 0 && cfg.n_items > 0, "synth: need users and items");
  require(cfg.n_clusters >= 1 && cfg.n_clusters <= cfg.n_items,
          "synth: n_clusters must be in [1, n_items]");
  require(cfg.min_events >= 1 && cfg.max_events >= cfg.min_events,
          "synth: bad event count range");
  require(cfg.within_cluster_p >= 0.0 && cfg.within_cluster_p <= 1.0,
          "synth: within_cluster_p must be a probability");

  SynthCorpus out;
  Rng rng(Rng::derive(cfg.seed, 7001));

  MatF centers(cfg.n_clusters, cfg.d_in);
  for (Eigen::Index i = 0; i < centers.size(); ++i) {
    centers.data()[i] = static_cast<float>(rng.normal(0.0, cfg.center_scale));
  }

  out.items.vectors.resize(cfg.n_items, cfg.d_in);
  out.items.ids.resize(static_cast<size_t>(cfg.n_items));
  out.item_cluster.resize(static_cast<size_t>(cfg.n_items));
  std::vector<std::vector<int>> cluster_items(static_cast<size_t>(cfg.n_clusters));
  for (int i = 0; i < cfg.n_items; ++i) {
    const int c = i % cfg.n_clusters;  // balanced assignment
    out.item_cluster[static_cast<size_t>(i)] = c;
    cluster_items[static_cast<size_t>(c)].push_back(i);
    for (int j = 0; j < cfg.d_in; ++j) {
      out.items.vectors(i, j) =
          centers(c, j) + static_cast<float>(rng.normal(0.0, 1.0));
    }
    out.items.ids[static_cast<size_t>(i)] = padded_id('i', i, cfg.n_items);
  }
  out.items.rebuild_index();

  out.user_cluster.resize(static_cast<size_t>(cfg.n_users));
  for (int u = 0; u < cfg.n_users; ++u) {
    const int pref = static_cast<int>(rng.uniform_int(0, cfg.n_clusters - 1));
    out.user_cluster[static_cast<size_t>(u)] = pref;
    const std::string uid = padded_id('u', u, cfg.n_users);
    const int events =
        static_cast<int>(rng.uniform_int(cfg.min_events, cfg.max_events));
    for (int t = 0; t < events; ++t) {
      int item;
      if (rng.bernoulli(cfg.within_cluster_p)) {
        const auto& pool = cluster_items[static_cast<size_t>(pref)];
        item = pool[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
      } else {
        item = static_cast<int>(rng.uniform_int(0, cfg.n_items - 1));
      }
      // Strictly increasing within each user; offset by user to keep the
      // global stable sort unambiguous.
      const int64_t ts = 1'000'000'000ll + static_cast<int64_t>(t) * 86400 + u;
      out.log.records.push_back(
          Interaction{uid, out.items.ids[static_cast<size_t>(item)], ts});
    }
  }
  std::stable_sort(out.log.records.begin(), out.log.records.end(),
                   [](const Interaction& a, const Interaction& b) {
                     return a.timestamp < b.timestamp;
                   });
  return out;
}

Dataset prepare_dataset(const InteractionLog& log, const EmbeddingTable& table,
                        int core_k, int max_len) {
  const InteractionLog filtered = core_k >= 1 ? k_core_filter(log, core_k) : log;
  require(!filtered.records.empty(), "prepare_dataset: no interactions survive filtering");

  std::set<std::string> surviving;
  for (const Interaction& r : filtered.records) {
    surviving.insert(r.item_id);
  }
  Dataset ds;
  ds.max_len = max_len;
  ds.items.ids.assign(surviving.begin(), surviving.end());  // ascending ids
  ds.items.vectors.resize(static_cast<Eigen::Index>(ds.items.ids.size()), table.dim());
  for (size_t i = 0; i < ds.items.ids.size(); ++i) {
    if (!table.has(ds.items.ids[i])) {
      fail(strf("prepare_dataset: item %s has no embedding", ds.items.ids[i].c_str()));
    }
    ds.items.vectors.row(static_cast<Eigen::Index>(i)) =
        table.vectors.row(table.index.at(ds.items.ids[i]));
  }
  ds.items.rebuild_index();
  ds.split = split_leave_one_out(build_sequences(filtered, max_len), max_len);
  return ds;
}

}  // namespace sodarec
