#include "sodarec/checkpoint.hpp"

#include "sodarec/corpus.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>

namespace sodarec {

namespace {

constexpr char kCodebookMagic[] = "SODA-CB";
constexpr char kCheckpointMagic[] = "SODA-CP";
constexpr uint32_t kFormatVersion = 1;
constexpr size_t kMagicLen = 7;

void put_u32(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xff),
      static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff),
  };
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    fail(strf("truncated file: %s", path.c_str()));
  }
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

float get_f32(std::istream& in, const std::string& path) {
  const uint32_t bits = get_u32(in, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void check_magic(std::istream& in, const char* magic, const std::string& path) {
  char buf[kMagicLen];
  if (!in.read(buf, kMagicLen) || std::memcmp(buf, magic, kMagicLen) != 0) {
    fail(strf("%s: not a %s file", path.c_str(), magic));
  }
}

}  // namespace

void save_codebooks(const std::string& path, const std::vector<MatF>& layers) {
  require(!layers.empty(), "save_codebooks: no layers");
  const Eigen::Index k = layers.front().rows();
  const Eigen::Index d = layers.front().cols();
  for (const MatF& m : layers) {
    require(m.rows() == k && m.cols() == d, "save_codebooks: layer shape mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    fail(strf("cannot write codebook file: %s", path.c_str()));
  }
  out.write(kCodebookMagic, kMagicLen);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(layers.size()));
  put_u32(out, static_cast<uint32_t>(k));
  put_u32(out, static_cast<uint32_t>(d));
  for (const MatF& m : layers) {
    for (Eigen::Index r = 0; r < k; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) {
        put_f32(out, m(r, c));
      }
    }
  }
  if (!out) {
    fail(strf("write failed: %s", path.c_str()));
  }
}

std::vector<MatF> load_codebooks(const std::string& path, uint32_t* version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(strf("cannot open codebook file: %s", path.c_str()));
  }
  check_magic(in, kCodebookMagic, path);
  const uint32_t ver = get_u32(in, path);
  if (ver != kFormatVersion) {
    fail(strf("%s: unsupported codebook version %u", path.c_str(), ver));
  }
  if (version != nullptr) {
    *version = ver;
  }
  const uint32_t layers = get_u32(in, path);
  const uint32_t k = get_u32(in, path);
  const uint32_t d = get_u32(in, path);
  require(layers > 0 && k > 0 && d > 0, strf("%s: degenerate header", path.c_str()));
  std::vector<MatF> out(layers, MatF(k, d));
  for (uint32_t l = 0; l < layers; ++l) {
    for (uint32_t r = 0; r < k; ++r) {
      for (uint32_t c = 0; c < d; ++c) {
        out[l](r, c) = get_f32(in, path);
      }
    }
  }
  return out;
}

void save_checkpoint(const std::string& path, const NamedParams<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    fail(strf("cannot write checkpoint: %s", path.c_str()));
  }
  out.write(kCheckpointMagic, kMagicLen);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, 2);  // all parameters are matrices
    put_u32(out, static_cast<uint32_t>(p->value.rows()));
    put_u32(out, static_cast<uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      put_f32(out, p->value.data()[i]);
    }
  }
  if (!out) {
    fail(strf("write failed: %s", path.c_str()));
  }
}

void load_checkpoint(const std::string& path, const NamedParams<float>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(strf("cannot open checkpoint: %s", path.c_str()));
  }
  check_magic(in, kCheckpointMagic, path);
  const uint32_t ver = get_u32(in, path);
  if (ver != kFormatVersion) {
    fail(strf("%s: unsupported checkpoint version %u", path.c_str(), ver));
  }
  const uint32_t count = get_u32(in, path);
  if (count != params.size()) {
    fail(strf("%s: %u tensors, expected %zu", path.c_str(), count, params.size()));
  }
  for (const auto& [name, p] : params) {
    const uint32_t name_len = get_u32(in, path);
    std::string stored(name_len, '\0');
    if (!in.read(stored.data(), name_len)) {
      fail(strf("truncated file: %s", path.c_str()));
    }
    if (stored != name) {
      fail(strf("%s: tensor \"%s\" where \"%s\" expected", path.c_str(),
                stored.c_str(), name.c_str()));
    }
    const uint32_t rank = get_u32(in, path);
    if (rank != 2) {
      fail(strf("%s: tensor %s has rank %u, expected 2", path.c_str(), stored.c_str(),
                rank));
    }
    const uint32_t rows = get_u32(in, path);
    const uint32_t cols = get_u32(in, path);
    if (rows != static_cast<uint32_t>(p->value.rows()) ||
        cols != static_cast<uint32_t>(p->value.cols())) {
      fail(strf("%s: tensor %s is %ux%u, expected %lldx%lld", path.c_str(),
                stored.c_str(), rows, cols, static_cast<long long>(p->value.rows()),
                static_cast<long long>(p->value.cols())));
    }
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      p->value.data()[i] = get_f32(in, path);
    }
  }
}

bool files_identical(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) {
    fail(strf("cannot compare %s and %s", a.c_str(), b.c_str()));
  }
  char ba[4096], bb[4096];
  while (true) {
    fa.read(ba, sizeof(ba));
    fb.read(bb, sizeof(bb));
    if (fa.gcount() != fb.gcount()) {
      return false;
    }
    if (fa.gcount() == 0) {
      return true;
    }
    if (std::memcmp(ba, bb, static_cast<size_t>(fa.gcount())) != 0) {
      return false;
    }
  }
}

void save_semantic_ids(const SemanticIdMap& ids, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    fail(strf("cannot write semantic-ID file: %s", path.c_str()));
  }
  for (const auto& [item, id] : ids) {
    out << item;
    for (int c : id.codes) {
      out << '\t' << (c + 1);  // 1-based codes on disk
    }
    out << '\t' << id.disamb << "\n";
  }
  if (!out) {
    fail(strf("write failed: %s", path.c_str()));
  }
}

SemanticIdMap load_semantic_ids(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    fail(strf("cannot open semantic-ID file: %s", path.c_str()));
  }
  SemanticIdMap ids;
  std::string line;
  int lineno = 0;
  size_t expected_fields = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() < 3) {
      fail(strf("%s:%d: expected item_id, codes, disambiguation token",
                path.c_str(), lineno));
    }
    if (expected_fields == 0) {
      expected_fields = fields.size();
    } else if (fields.size() != expected_fields) {
      fail(strf("%s:%d: inconsistent column count", path.c_str(), lineno));
    }
    auto parse_field = [&](const std::string& s, int lo, const char* what) {
      char* end = nullptr;
      const long v = std::strtol(s.c_str(), &end, 10);
      if (s.empty() || end != s.c_str() + s.size() || v < lo) {
        fail(strf("%s:%d: bad %s \"%s\"", path.c_str(), lineno, what, s.c_str()));
      }
      return static_cast<int>(v);
    };
    CodeSeq id;
    for (size_t i = 1; i + 1 < fields.size(); ++i) {
      id.codes.push_back(parse_field(fields[i], 1, "code") - 1);
    }
    id.disamb = parse_field(fields.back(), 0, "disambiguation token");
    if (!ids.emplace(fields[0], std::move(id)).second) {
      fail(strf("%s:%d: duplicate item %s", path.c_str(), lineno, fields[0].c_str()));
    }
  }
  return ids;
}

}  // namespace sodarec
