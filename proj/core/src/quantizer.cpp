#include "sodarec/quantizer.hpp"

#include "sodarec/rng.hpp"

#include <limits>
#include <map>

namespace sodarec {

namespace {

// Nearest row of `centers` to `p`, ties to the lowest index.
template <typename T>
int nearest_row(const MatX<T>& centers, const Eigen::Ref<const Eigen::Matrix<
                    T, 1, Eigen::Dynamic, Eigen::RowMajor>>& p) {
  int best = 0;
  T best_d = (p - centers.row(0)).squaredNorm();
  for (Eigen::Index k = 1; k < centers.rows(); ++k) {
    const T d = (p - centers.row(k)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace

template <typename T>
MatX<T> kmeans(const MatX<T>& points, int k, uint64_t seed, int iters,
               bool* degenerate) {
  const Eigen::Index n = points.rows();
  require(k > 0, "kmeans: k must be positive");
  require(n >= k, strf("kmeans: %lld samples for %d clusters",
                       static_cast<long long>(n), k));

  Rng rng(seed);
  MatX<T> centers(k, points.cols());

  // k-means++ seeding: first center uniform, then proportional to squared
  // distance from the chosen set.
  centers.row(0) = points.row(rng.uniform_int(0, n - 1));
  std::vector<double> d2(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    d2[i] = static_cast<double>((points.row(i) - centers.row(0)).squaredNorm());
  }
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) {
      total += d;
    }
    Eigen::Index pick;
    if (total <= 0.0) {
      // All remaining points coincide with a chosen center.
      pick = rng.uniform_int(0, n - 1);
    } else {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > r) {
          pick = i;
          break;
        }
      }
    }
    centers.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = static_cast<double>(
          (points.row(i) - centers.row(c)).squaredNorm());
      d2[i] = std::min(d2[i], d);
    }
  }

  std::vector<int> assign(static_cast<size_t>(n), -1);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = nearest_row<T>(centers, points.row(i));
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    if (!changed && it > 0) {
      break;
    }

    MatX<T> sums = MatX<T>::Zero(k, points.cols());
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    std::vector<bool> stolen(static_cast<size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(c) = sums.row(c) / static_cast<T>(counts[c]);
        continue;
      }
      // Empty cluster: restart it at the point farthest from its own center.
      Eigen::Index far = 0;
      T far_d = T(-1);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (stolen[i]) {
          continue;
        }
        const T d = (points.row(i) - centers.row(assign[i])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centers.row(c) = points.row(far);
      stolen[far] = true;
    }
  }

  if (degenerate != nullptr) {
    *degenerate = false;
    for (int a = 0; a < k && !*degenerate; ++a) {
      for (int b = a + 1; b < k; ++b) {
        if (centers.row(a) == centers.row(b)) {
          *degenerate = true;
          break;
        }
      }
    }
  }
  return centers;
}

template <typename T>
RqVae<T>::RqVae(TokenizerConfig<T> cfg) : cfg_(std::move(cfg)) {
  require(cfg_.d_in > 0, "tokenizer: d_in must be set");
  require(cfg_.d_code > 0 && cfg_.layers > 0 && cfg_.codebook_size > 0,
          "tokenizer: d_code, layers, codebook_size must be positive");
  enc_.setup(cfg_.d_in, cfg_.hidden, cfg_.d_code);
  dec_.setup(cfg_.d_code, cfg_.hidden, cfg_.d_in);
  Rng enc_rng(Rng::derive(cfg_.seed, 1));
  Rng dec_rng(Rng::derive(cfg_.seed, 2));
  enc_.init(enc_rng);
  dec_.init(dec_rng);
  books_.resize(static_cast<size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    books_[l].setup(cfg_.codebook_size, cfg_.d_code);
    // Placeholder spread so an uninitialized tokenizer is still usable in
    // tests; init_codebooks overwrites this with k-means centers.
    Rng book_rng(Rng::derive(cfg_.seed, 16 + static_cast<uint64_t>(l)));
    normal_init(books_[l], book_rng, 0.1);
  }
}

template <typename T>
void RqVae<T>::init_codebooks(const MatX<T>& latent_samples) {
  require(latent_samples.cols() == cfg_.d_code,
          "init_codebooks: latent dimension mismatch");
  require(latent_samples.rows() >= cfg_.codebook_size,
          strf("init_codebooks: %lld samples cannot seed %d codewords",
               static_cast<long long>(latent_samples.rows()), cfg_.codebook_size));
  MatX<T> residuals = latent_samples;
  for (int l = 0; l < cfg_.layers; ++l) {
    bool degenerate = false;
    books_[l].value = kmeans(residuals, cfg_.codebook_size,
                             Rng::derive(cfg_.seed, 32 + static_cast<uint64_t>(l)),
                             cfg_.kmeans_iters, &degenerate);
    if (degenerate) {
      logging::warn(strf("init_codebooks: duplicate centroids in layer %d "
                        "(residuals collapsed; consider a smaller codebook)", l));
    }
    for (Eigen::Index i = 0; i < residuals.rows(); ++i) {
      const int c = nearest_row<T>(books_[l].value, residuals.row(i));
      residuals.row(i) -= books_[l].value.row(c);
    }
  }
}

template <typename T>
QuantTrace<T> RqVae<T>::quantize_hard(const MatX<T>& latent) const {
  require(latent.rows() == 1 && latent.cols() == cfg_.d_code,
          "quantize_hard: expected a 1 x d_code latent");
  QuantTrace<T> tr;
  tr.residuals.resize(cfg_.layers + 1, cfg_.d_code);
  tr.codes.resize(static_cast<size_t>(cfg_.layers));
  tr.residuals.row(0) = latent.row(0);
  for (int l = 0; l < cfg_.layers; ++l) {
    const int c = nearest_row<T>(books_[l].value, tr.residuals.row(l));
    tr.codes[l] = c;
    tr.residuals.row(l + 1) = tr.residuals.row(l) - books_[l].value.row(c);
  }
  return tr;
}

template <typename T>
MatX<T> RqVae<T>::quantize_soft(const QuantTrace<T>& trace, T tau) const {
  require(tau > T(0), "quantize_soft: tau must be positive");
  require(trace.residuals.rows() == cfg_.layers + 1,
          "quantize_soft: trace layer count mismatch");
  MatX<T> probs(cfg_.layers, cfg_.codebook_size);
  for (int l = 0; l < cfg_.layers; ++l) {
    auto row = probs.row(l);
    for (int k = 0; k < cfg_.codebook_size; ++k) {
      row(k) = -(trace.residuals.row(l) - books_[l].value.row(k)).squaredNorm() / tau;
    }
    const T m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
  return probs;
}

template <typename T>
MatX<T> RqVae<T>::decode(const std::vector<int>& codes) const {
  require(static_cast<int>(codes.size()) == cfg_.layers,
          "decode: expected one code per layer");
  MatX<T> q = MatX<T>::Zero(1, cfg_.d_code);
  for (int l = 0; l < cfg_.layers; ++l) {
    require(codes[l] >= 0 && codes[l] < cfg_.codebook_size,
            strf("decode: code %d out of range at layer %d", codes[l], l));
    q.row(0) += books_[l].value.row(codes[l]);
  }
  return dec_.forward(q);
}

template <typename T>
MatX<T> RqVae<T>::reconstruct(const MatX<T>& z) const {
  MatX<T> out(z.rows(), cfg_.d_in);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const QuantTrace<T> tr = quantize_hard(encode(z.row(i)));
    out.row(i) = decode(tr.codes).row(0);
  }
  return out;
}

template <typename T>
T RqVae<T>::reconstruction_mse(const MatX<T>& z) const {
  const MatX<T> r = reconstruct(z);
  return (r - z).squaredNorm() / static_cast<T>(z.size());
}

template <typename T>
typename RqVae<T>::Var RqVae<T>::tokenizer_loss(Tape<T>& t, const MatX<T>& z) {
  require(z.rows() == 1 && z.cols() == cfg_.d_in,
          "tokenizer_loss: expected a 1 x d_in item embedding");
  const Var zc = t.constant(z);
  const Var r = enc_.forward(t, zc);

  // Hard assignments are chosen on values; the residual chain below replays
  // them on-tape so the commitment terms see live encoder gradients.
  const QuantTrace<T> tr = quantize_hard(t.val(r));

  Var v = r;
  Var quant_sum;  // codeword-side terms, sg on the residual
  Var commit_sum;  // encoder-side terms, sg on the codeword
  MatX<T> q_sum = MatX<T>::Zero(1, cfg_.d_code);
  for (int l = 0; l < cfg_.layers; ++l) {
    const int c = tr.codes[l];
    const MatX<T> e_row = books_[l].value.row(c);
    q_sum.row(0) += e_row.row(0);

    const Var live_e = t.gather_rows(t.param(books_[l]), {c});
    const Var dq = t.sub(t.constant(t.val(v)), live_e);
    const Var quant_l = t.sum(t.mul(dq, dq));
    quant_sum = quant_sum.valid() ? t.add(quant_sum, quant_l) : quant_l;

    const Var dc = t.sub(v, t.constant(e_row));
    const Var commit_l = t.sum(t.mul(dc, dc));
    commit_sum = commit_sum.valid() ? t.add(commit_sum, commit_l) : commit_l;

    v = dc;  // v_{l+1} = v_l - e, with the codeword held constant
  }

  const Var ste = t.straight_through(r, std::move(q_sum));
  const Var recon = dec_.forward(t, ste);
  const Var dr = t.sub(recon, zc);
  const Var rec_term = t.sum(t.mul(dr, dr));

  return t.add(rec_term, t.add(quant_sum, t.scale(commit_sum, cfg_.alpha)));
}

template <typename T>
typename RqVae<T>::FrozenCaptures RqVae<T>::freeze(const MatX<T>& z) const {
  require(z.rows() == 1 && z.cols() == cfg_.d_in,
          "freeze: expected a 1 x d_in item embedding");
  const MatX<T> r = encode(z);
  const QuantTrace<T> tr = quantize_hard(r);
  FrozenCaptures ctx;
  ctx.residuals = tr.residuals.topRows(cfg_.layers);
  ctx.codes = tr.codes;
  ctx.codewords.resize(cfg_.layers, cfg_.d_code);
  MatX<T> q_sum = MatX<T>::Zero(1, cfg_.d_code);
  for (int l = 0; l < cfg_.layers; ++l) {
    ctx.codewords.row(l) = books_[l].value.row(tr.codes[l]);
    q_sum.row(0) += ctx.codewords.row(l);
  }
  ctx.ste_delta = q_sum - r;
  return ctx;
}

template <typename T>
T RqVae<T>::tokenizer_loss_frozen(const MatX<T>& z, const FrozenCaptures& ctx) const {
  const MatX<T> r = encode(z);
  // The decoder input is r + sg(q - r): the straight-through value with the
  // quantization gap held at its captured base.
  const MatX<T> recon = dec_.forward(r + ctx.ste_delta);
  T loss = (recon - z).squaredNorm();
  MatX<T> v = r;
  for (int l = 0; l < cfg_.layers; ++l) {
    loss += (ctx.residuals.row(l) - books_[l].value.row(ctx.codes[l])).squaredNorm();
    loss += cfg_.alpha * (v.row(0) - ctx.codewords.row(l)).squaredNorm();
    v.row(0) -= ctx.codewords.row(l);
  }
  return loss;
}

template <typename T>
std::vector<typename RqVae<T>::Var> RqVae<T>::soft_assign_rows(Tape<T>& t, Var latent,
                                                               T tau, bool train_books) {
  require(tau > T(0), "soft_assign_rows: tau must be positive");
  require(t.val(latent).rows() == 1 && t.val(latent).cols() == cfg_.d_code,
          "soft_assign_rows: expected a 1 x d_code latent");
  std::vector<Var> rows;
  rows.reserve(static_cast<size_t>(cfg_.layers));
  Var v = latent;
  for (int l = 0; l < cfg_.layers; ++l) {
    const Var book = train_books ? t.param(books_[l]) : t.constant(books_[l].value);
    const Var d2 = t.squared_distances(v, book);
    rows.push_back(t.softmax_rows(t.scale(d2, T(-1) / tau)));

    // Hard residual step for the next layer's distances.
    const MatX<T>& dvals = t.val(d2);
    int c = 0;
    for (int k = 1; k < cfg_.codebook_size; ++k) {
      if (dvals(0, k) < dvals(0, c)) {
        c = k;
      }
    }
    v = t.sub(v, t.gather_rows(book, {c}));
  }
  return rows;
}

template <typename T>
std::vector<CodeSeq> RqVae<T>::assign_semantic_ids(const MatX<T>& embeddings,
                                                   const std::vector<int>& order) const {
  require(static_cast<Eigen::Index>(order.size()) == embeddings.rows(),
          "assign_semantic_ids: order must cover every embedding row");
  std::vector<CodeSeq> out(order.size());
  std::map<std::vector<int>, int> seen;
  for (int idx : order) {
    require(idx >= 0 && idx < static_cast<int>(embeddings.rows()),
            "assign_semantic_ids: order index out of range");
    const QuantTrace<T> tr = quantize_hard(encode(embeddings.row(idx)));
    int& count = seen[tr.codes];
    out[static_cast<size_t>(idx)] = CodeSeq{tr.codes, count};
    ++count;
  }
  return out;
}

template <typename T>
NamedParams<T> RqVae<T>::named_params() {
  NamedParams<T> out;
  enc_.collect("tok.enc", out);
  dec_.collect("tok.dec", out);
  for (int l = 0; l < cfg_.layers; ++l) {
    out.emplace_back(strf("tok.book.%d", l), &books_[l]);
  }
  return out;
}

template class RqVae<float>;
template class RqVae<double>;
template MatF kmeans<float>(const MatF&, int, uint64_t, int, bool*);
template MatD kmeans<double>(const MatD&, int, uint64_t, int, bool*);

}  // namespace sodarec
