#include "sodarec/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace sodarec {

namespace {

struct FieldRef {
  enum Kind { kInt, kDouble, kU64, kKList } kind;
  const char* key;
  void* ptr;
};

// Single source of truth for the key set; the parser, the canonical dump, and
// the digest all walk this table.
std::vector<FieldRef> fields(TrainConfig& c) {
  return {
      {FieldRef::kU64, "seed", &c.seed},
      {FieldRef::kInt, "data.max_len", &c.max_len},
      {FieldRef::kInt, "data.core_k", &c.core_k},
      {FieldRef::kInt, "tokenizer.d_in", &c.d_in},
      {FieldRef::kInt, "tokenizer.d_code", &c.d_code},
      {FieldRef::kInt, "tokenizer.layers", &c.layers},
      {FieldRef::kInt, "tokenizer.codebook_size", &c.codebook_size},
      {FieldRef::kInt, "tokenizer.hidden", &c.hidden},
      {FieldRef::kDouble, "tokenizer.alpha", &c.alpha},
      {FieldRef::kInt, "tokenizer.kmeans_iters", &c.kmeans_iters},
      {FieldRef::kInt, "tokenizer.pretrain_epochs", &c.tok_pretrain_epochs},
      {FieldRef::kInt, "tokenizer.batch", &c.tok_batch},
      {FieldRef::kDouble, "tokenizer.lr", &c.tok_lr},
      {FieldRef::kInt, "model.d_model", &c.d_model},
      {FieldRef::kInt, "model.enc_layers", &c.enc_layers},
      {FieldRef::kInt, "model.dec_layers", &c.dec_layers},
      {FieldRef::kInt, "model.heads", &c.heads},
      {FieldRef::kInt, "model.ffn", &c.ffn},
      {FieldRef::kInt, "model.disamb_capacity", &c.disamb_capacity},
      {FieldRef::kDouble, "align.lambda", &c.lambda},
      {FieldRef::kDouble, "align.beta", &c.beta},
      {FieldRef::kDouble, "align.tau", &c.tau},
      {FieldRef::kDouble, "align.epsilon", &c.epsilon},
      {FieldRef::kDouble, "train.lr", &c.rec_lr},
      {FieldRef::kInt, "train.batch", &c.batch},
      {FieldRef::kInt, "train.rec_epochs_per_cycle", &c.rec_epochs_per_cycle},
      {FieldRef::kInt, "train.tok_epochs_per_cycle", &c.tok_epochs_per_cycle},
      {FieldRef::kInt, "train.cycles", &c.cycles},
      {FieldRef::kKList, "eval.ks", &c.eval_ks},
      {FieldRef::kInt, "eval.beam", &c.beam},
  };
}

int parse_int(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) {
    fail(strf("config: %s expects an integer, got \"%s\"", key.c_str(), s.c_str()));
  }
  return static_cast<int>(v);
}

uint64_t parse_u64(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) {
    fail(strf("config: %s expects an unsigned integer, got \"%s\"", key.c_str(),
              s.c_str()));
  }
  return v;
}

double parse_double(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    fail(strf("config: %s expects a number, got \"%s\"", key.c_str(), s.c_str()));
  }
  return v;
}

std::vector<int> parse_klist(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, ',')) {
    out.push_back(parse_int(part, key));
  }
  if (out.empty()) {
    fail(strf("config: %s expects a comma-separated list", key.c_str()));
  }
  return out;
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t')) {
    ++a;
  }
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) {
    --b;
  }
  return s.substr(a, b - a);
}

}  // namespace

void TrainConfig::validate() const {
  require(max_len >= 1, "config: data.max_len must be at least 1");
  require(core_k >= 0, "config: data.core_k must be non-negative");
  require(d_code > 0 && layers > 0, "config: tokenizer dimensions must be positive");
  require(codebook_size >= 2, "config: tokenizer.codebook_size must be at least 2");
  require(alpha >= 0.0, "config: tokenizer.alpha must be non-negative");
  require(tok_pretrain_epochs >= 0 && tok_batch >= 1,
          "config: tokenizer schedule counts out of range");
  require(d_model > 0 && heads > 0 && d_model % heads == 0,
          "config: model.d_model must be a positive multiple of model.heads");
  require(disamb_capacity >= 1, "config: model.disamb_capacity must be positive");
  require(lambda >= 0.0, "config: align.lambda must be non-negative");
  require(beta > 0.0, "config: align.beta must be positive");
  require(tau > 0.0, "config: align.tau must be positive");
  require(epsilon > 0.0 && epsilon <= 1e-6, "config: align.epsilon must be in (0, 1e-6]");
  require(batch >= 1, "config: train.batch must be at least 1");
  require(rec_epochs_per_cycle >= 0 && tok_epochs_per_cycle >= 0 && cycles >= 0,
          "config: alternation counts must be non-negative");
  require(!eval_ks.empty(), "config: eval.ks must not be empty");
  for (int k : eval_ks) {
    require(k >= 1, "config: eval.ks entries must be at least 1");
  }
  require(beam >= 1, "config: eval.beam must be at least 1");

  if (lambda != 0.0 && (lambda < 1e-6 || lambda > 1e-2)) {
    logging::warn(strf("config: align.lambda=%g is outside the recommended range "
                       "[1e-6, 1e-2]", lambda));
  }
  if (tau < 1e-5 || tau > 1.0) {
    logging::warn(
        strf("config: align.tau=%g is outside the recommended range [1e-5, 1]", tau));
  }
  if (beta < 1.0 || beta > 1000.0) {
    logging::warn(strf("config: align.beta=%g is outside the recommended range [1, 1000]",
                       beta));
  }
}

std::string TrainConfig::canonical() const {
  TrainConfig& self = const_cast<TrainConfig&>(*this);
  std::ostringstream out;
  for (const FieldRef& f : fields(self)) {
    out << f.key << " = ";
    switch (f.kind) {
      case FieldRef::kInt:
        out << *static_cast<const int*>(f.ptr);
        break;
      case FieldRef::kU64:
        out << *static_cast<const uint64_t*>(f.ptr);
        break;
      case FieldRef::kDouble:
        out << strf("%.17g", *static_cast<const double*>(f.ptr));
        break;
      case FieldRef::kKList: {
        const auto& ks = *static_cast<const std::vector<int>*>(f.ptr);
        for (size_t i = 0; i < ks.size(); ++i) {
          out << (i > 0 ? "," : "") << ks[i];
        }
        break;
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string TrainConfig::digest() const {
  return strf("fnv1a64:%016llx",
              static_cast<unsigned long long>(fnv1a64(canonical())));
}

void set_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const FieldRef& f : fields(cfg)) {
    if (key != f.key) {
      continue;
    }
    switch (f.kind) {
      case FieldRef::kInt:
        *static_cast<int*>(f.ptr) = parse_int(value, key);
        return;
      case FieldRef::kU64:
        *static_cast<uint64_t*>(f.ptr) = parse_u64(value, key);
        return;
      case FieldRef::kDouble:
        *static_cast<double*>(f.ptr) = parse_double(value, key);
        return;
      case FieldRef::kKList:
        *static_cast<std::vector<int>*>(f.ptr) = parse_klist(value, key);
        return;
    }
  }
  fail(strf("config: unknown key \"%s\"", key.c_str()));
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    fail(strf("cannot open config file: %s", path.c_str()));
  }
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      fail(strf("%s:%d: expected key = value", path.c_str(), lineno));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_config_key(cfg, key, value);
    } catch (const std::exception& e) {
      fail(strf("%s:%d: %s", path.c_str(), lineno, e.what()));
    }
  }
  return cfg;
}

void apply_overrides(TrainConfig& cfg, const std::vector<std::string>& assignments) {
  for (const std::string& kv : assignments) {
    const size_t eq = kv.find('=');
    require(eq != std::string::npos, strf("override \"%s\" is not key=value", kv.c_str()));
    set_config_key(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
}

}  // namespace sodarec
