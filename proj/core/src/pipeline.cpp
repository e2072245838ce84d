#include "sodarec/pipeline.hpp"

#include "sodarec/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sodarec {

namespace {

// Consecutive [begin, end) chunks; a trailing single-example chunk is merged
// into its predecessor so pairwise negatives always exist mid-epoch.
std::vector<std::pair<size_t, size_t>> batch_ranges(size_t n, size_t batch) {
  std::vector<std::pair<size_t, size_t>> out;
  for (size_t a = 0; a < n; a += batch) {
    out.emplace_back(a, std::min(n, a + batch));
  }
  if (out.size() >= 2 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

// Mean tokenizer objective over all items, value only (stop-gradient captures
// taken at the current parameters, where the frozen value equals the live one).
float mean_tokenizer_loss(const RqVae<float>& rq, const MatF& embeddings) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    const MatF z = embeddings.row(i);
    total += static_cast<double>(rq.tokenizer_loss_frozen(z, rq.freeze(z)));
  }
  return static_cast<float>(total / static_cast<double>(embeddings.rows()));
}

}  // namespace

Ablation parse_ablation(const std::string& name) {
  std::string n = name;
  for (char& c : n) {
    if (c == '_') {
      c = '-';
    }
  }
  if (n == "full") {
    return Ablation::kFull;
  }
  if (n == "no-neg") {
    return Ablation::kNoNeg;
  }
  if (n == "no-loss") {
    return Ablation::kNoLoss;
  }
  if (n == "no-alter") {
    return Ablation::kNoAlter;
  }
  fail_arg(strf("unknown ablation \"%s\" (expected full, no-neg, no-loss, no-alter)",
                name.c_str()));
}

const char* ablation_name(Ablation ab) {
  switch (ab) {
    case Ablation::kFull:
      return "full";
    case Ablation::kNoNeg:
      return "no-neg";
    case Ablation::kNoLoss:
      return "no-loss";
    case Ablation::kNoAlter:
      return "no-alter";
  }
  return "?";
}

void RunReport::save_log(const std::string& path) const {
  std::ofstream out(path);
  if (!out) {
    fail(strf("cannot write training log: %s", path.c_str()));
  }
  out << "# variant " << variant << "\n";
  out << "# seed " << seed << "\n";
  out << "# config " << config_digest << "\n";
  out << "cycle\tphase\tepoch\tl_token\tl_rec\tl_soda\tl_combined\n";
  for (const EpochLog& e : curve) {
    out << e.cycle << '\t' << e.phase << '\t' << e.epoch << '\t'
        << strf("%.17g\t%.17g\t%.17g\t%.17g", e.l_token, e.l_rec, e.l_soda,
                e.l_combined)
        << "\n";
  }
  if (!out) {
    fail(strf("write failed: %s", path.c_str()));
  }
}

std::vector<EpochLog> RunReport::load_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    fail(strf("cannot open training log: %s", path.c_str()));
  }
  std::vector<EpochLog> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.rfind("cycle\t", 0) == 0) {
      continue;
    }
    std::istringstream ls(line);
    EpochLog e;
    if (!(ls >> e.cycle >> e.phase >> e.epoch >> e.l_token >> e.l_rec >> e.l_soda >>
          e.l_combined)) {
      fail(strf("%s:%d: malformed log row", path.c_str(), lineno));
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<double> pretrain_tokenizer(RqVae<float>& rq, const MatF& embeddings,
                                       int epochs, int batch, float lr, uint64_t seed) {
  require(embeddings.rows() > 0, "pretrain: empty embedding table");
  require(batch >= 1, "pretrain: batch must be at least 1");
  require(epochs >= 0, "pretrain: epochs must be non-negative");

  rq.init_codebooks(rq.encode(embeddings));

  std::vector<double> curve;
  curve.push_back(static_cast<double>(mean_tokenizer_loss(rq, embeddings)));

  auto named = rq.named_params();
  Adam<float> opt(param_ptrs(named), lr);
  Rng rng(Rng::derive(seed, 600));
  const size_t n = static_cast<size_t>(embeddings.rows());
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), size_t{0});
  Tape<float> tape;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    rng.shuffle(perm);
    double total = 0.0;
    for (const auto& [a, b] : batch_ranges(n, static_cast<size_t>(batch))) {
      tape.reset();
      opt.zero_grad();
      typename Tape<float>::Var sum;
      for (size_t i = a; i < b; ++i) {
        const MatF z = embeddings.row(static_cast<Eigen::Index>(perm[i]));
        const auto l = rq.tokenizer_loss(tape, z);
        sum = sum.valid() ? tape.add(sum, l) : l;
      }
      const auto mean = tape.scale(sum, 1.0f / static_cast<float>(b - a));
      const float v = tape.val(mean)(0, 0);
      if (!std::isfinite(v)) {
        fail(strf("pretrain: non-finite loss at epoch %d", epoch));
      }
      total += static_cast<double>(v) * static_cast<double>(b - a);
      tape.backward(mean);
      opt.step();
    }
    curve.push_back(total / static_cast<double>(n));
  }
  return curve;
}

template <typename T>
SemanticIdMap dataset_semantic_ids(const RqVae<T>& rq, const EmbeddingTable& items) {
  require(items.count() > 0, "semantic ids: empty item table");
  std::vector<int> order(static_cast<size_t>(items.count()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return items.ids[static_cast<size_t>(a)] <
                                       items.ids[static_cast<size_t>(b)]; });
  const MatX<T> embs = items.vectors.template cast<T>();
  const std::vector<CodeSeq> seqs = rq.assign_semantic_ids(embs, order);
  SemanticIdMap out;
  for (int i = 0; i < items.count(); ++i) {
    out.emplace(items.ids[static_cast<size_t>(i)], seqs[static_cast<size_t>(i)]);
  }
  return out;
}

template SemanticIdMap dataset_semantic_ids<float>(const RqVae<float>&,
                                                   const EmbeddingTable&);
template SemanticIdMap dataset_semantic_ids<double>(const RqVae<double>&,
                                                    const EmbeddingTable&);

RunReport train_alternating(RqVae<float>& rq, SeqRec<float>& model, const Dataset& ds,
                            const TrainConfig& cfg, Ablation ab, SemanticIdMap* ids_out) {
  cfg.validate();
  require(!ds.split.train.empty(), "train: empty train split");
  require(model.vocab().layers == rq.layers() &&
              model.vocab().codebook_size == rq.codebook_size(),
          "train: model vocabulary does not match the tokenizer");
  const auto t0 = std::chrono::steady_clock::now();

  const float lam = ab == Ablation::kNoLoss ? 0.0f : static_cast<float>(cfg.lambda);
  const float beta = static_cast<float>(cfg.beta);
  const float tau = static_cast<float>(cfg.tau);
  const float eps = static_cast<float>(cfg.epsilon);
  const bool use_align = lam > 0.0f;
  const VocabLayout& vocab = model.vocab();

  auto rec_named = model.named_params();
  auto tok_named = rq.named_params();
  const auto rec_ptrs = param_ptrs(rec_named);
  const auto tok_ptrs = param_ptrs(tok_named);
  Adam<float> opt_rec(rec_ptrs, static_cast<float>(cfg.rec_lr));
  Adam<float> opt_tok(tok_ptrs, static_cast<float>(cfg.tok_lr));

  SemanticIdMap ids = dataset_semantic_ids(rq, ds.items);

  struct Example {
    TokenizedSeq hist;
    std::vector<int> target;
    int target_row = 0;
  };
  std::vector<Example> train_ex(ds.split.train.size());
  const auto retokenize = [&]() {
    for (size_t i = 0; i < ds.split.train.size(); ++i) {
      const UserSequence& u = ds.split.train[i];
      Example& ex = train_ex[i];
      ex.hist = tokenize_history(u.history, ids, vocab, cfg.max_len);
      ex.target = vocab.item_tokens(ids.at(u.target));
      ex.target_row = ds.items.row_of(u.target);
    }
  };
  retokenize();

  // Soft target distributions per item, refreshed with the tokenizer.
  std::vector<MatF> tdist(static_cast<size_t>(ds.items.count()));
  const auto refresh_tdist = [&]() {
    for (int i = 0; i < ds.items.count(); ++i) {
      tdist[static_cast<size_t>(i)] =
          target_distribution<float>(ds.items.vectors.row(i), rq, tau);
    }
  };

  RunReport rep;
  rep.seed = cfg.seed;
  rep.config_digest = cfg.digest();
  rep.variant = ablation_name(ab);

  double last_tok = static_cast<double>(mean_tokenizer_loss(rq, ds.items.vectors));
  double last_rec = 0.0, last_soda = 0.0, last_comb = 0.0;

  Rng rng(Rng::derive(cfg.seed, 500));
  Tape<float> tape;
  const size_t n_train = train_ex.size();
  std::vector<size_t> perm(n_train);
  std::iota(perm.begin(), perm.end(), size_t{0});

  for (int cycle = 0; cycle < cfg.cycles; ++cycle) {
    // ---- recommender phase: tokenizer frozen ----
    const uint64_t tok_sum = params_checksum(tok_ptrs);
    if (use_align) {
      refresh_tdist();
    }
    for (int epoch = 0; epoch < cfg.rec_epochs_per_cycle; ++epoch) {
      rng.shuffle(perm);
      double ep_rec = 0.0, ep_soda = 0.0, ep_comb = 0.0;
      for (const auto& [a, b] : batch_ranges(n_train, static_cast<size_t>(cfg.batch))) {
        const int bn = static_cast<int>(b - a);
        std::vector<TokenizedSeq> hists(static_cast<size_t>(bn));
        std::vector<std::vector<int>> targets(static_cast<size_t>(bn));
        for (int e = 0; e < bn; ++e) {
          const Example& ex = train_ex[perm[a + static_cast<size_t>(e)]];
          hists[static_cast<size_t>(e)] = ex.hist;
          targets[static_cast<size_t>(e)] = ex.target;
        }
        tape.reset();
        opt_rec.zero_grad();
        auto fwd = model.forward_batch(tape, hists, targets, use_align);
        auto total = fwd.loss_mean;
        float soda_val = 0.0f;
        if (use_align) {
          require(bn >= 2 || ab == Ablation::kNoNeg,
                  "train: ranking negatives need a batch of at least 2");
          std::vector<typename Tape<float>::Var> hx(static_cast<size_t>(bn));
          std::vector<typename Tape<float>::Var> hy(static_cast<size_t>(bn));
          for (int e = 0; e < bn; ++e) {
            const Example& ex = train_ex[perm[a + static_cast<size_t>(e)]];
            hx[static_cast<size_t>(e)] = history_distribution(
                tape, rq, tape.slice_rows(fwd.projected, e, 1), tau);
            hy[static_cast<size_t>(e)] =
                tape.constant(tdist[static_cast<size_t>(ex.target_row)]);
          }
          typename Tape<float>::Var sum_hx;
          if (ab != Ablation::kNoNeg) {
            sum_hx = hx[0];
            for (int e = 1; e < bn; ++e) {
              sum_hx = tape.add(sum_hx, hx[static_cast<size_t>(e)]);
            }
          }
          typename Tape<float>::Var loss_sum;
          for (int e = 0; e < bn; ++e) {
            const auto sp = distribution_score(tape, hx[static_cast<size_t>(e)],
                                               hy[static_cast<size_t>(e)], eps);
            typename Tape<float>::Var le;
            if (ab == Ablation::kNoNeg) {
              le = pointwise_variant(tape, sp, beta);
            } else {
              const auto hneg =
                  tape.scale(tape.sub(sum_hx, hx[static_cast<size_t>(e)]),
                             1.0f / static_cast<float>(bn - 1));
              const auto sn = distribution_score(tape, hneg,
                                                 hy[static_cast<size_t>(e)], eps);
              le = soda_loss(tape, sp, sn, beta);
            }
            loss_sum = loss_sum.valid() ? tape.add(loss_sum, le) : le;
          }
          const auto l_soda = tape.scale(loss_sum, 1.0f / static_cast<float>(bn));
          soda_val = tape.val(l_soda)(0, 0);
          total = tape.add(total, tape.scale(l_soda, lam));
        }
        const float rec_val = tape.val(fwd.loss_mean)(0, 0);
        const float comb_val = tape.val(total)(0, 0);
        if (!std::isfinite(comb_val)) {
          fail(strf("train: non-finite loss (cycle %d, rec epoch %d)", cycle, epoch));
        }
        tape.backward(total);
        opt_rec.step();
        ep_rec += static_cast<double>(rec_val) * bn;
        ep_soda += static_cast<double>(soda_val) * bn;
        ep_comb += static_cast<double>(comb_val) * bn;
      }
      last_rec = ep_rec / static_cast<double>(n_train);
      last_soda = ep_soda / static_cast<double>(n_train);
      last_comb = ep_comb / static_cast<double>(n_train);
      rep.curve.push_back(
          EpochLog{cycle, "rec", epoch, last_tok, last_rec, last_soda, last_comb});
    }
    require(params_checksum(tok_ptrs) == tok_sum,
            "internal: tokenizer parameters changed during the recommender phase");

    // ---- tokenizer phase + ID refresh, between cycles only ----
    if (ab == Ablation::kNoAlter || cycle + 1 >= cfg.cycles ||
        cfg.tok_epochs_per_cycle == 0) {
      continue;
    }
    const uint64_t rec_sum = params_checksum(rec_ptrs);
    const size_t n_items = static_cast<size_t>(ds.items.count());
    std::vector<size_t> item_perm(n_items);
    std::iota(item_perm.begin(), item_perm.end(), size_t{0});
    for (int epoch = 0; epoch < cfg.tok_epochs_per_cycle; ++epoch) {
      rng.shuffle(item_perm);
      double total = 0.0;
      for (const auto& [a, b] : batch_ranges(n_items, static_cast<size_t>(cfg.tok_batch))) {
        tape.reset();
        opt_tok.zero_grad();
        typename Tape<float>::Var sum;
        for (size_t i = a; i < b; ++i) {
          const MatF z = ds.items.vectors.row(static_cast<Eigen::Index>(item_perm[i]));
          const auto l = rq.tokenizer_loss(tape, z);
          sum = sum.valid() ? tape.add(sum, l) : l;
        }
        const auto mean = tape.scale(sum, 1.0f / static_cast<float>(b - a));
        const float v = tape.val(mean)(0, 0);
        if (!std::isfinite(v)) {
          fail(strf("train: non-finite tokenizer loss (cycle %d, tok epoch %d)", cycle,
                    epoch));
        }
        total += static_cast<double>(v) * static_cast<double>(b - a);
        tape.backward(mean);
        opt_tok.step();
      }
      last_tok = total / static_cast<double>(n_items);
      rep.curve.push_back(
          EpochLog{cycle, "tok", epoch, last_tok, last_rec, last_soda, last_comb});
    }
    require(params_checksum(rec_ptrs) == rec_sum,
            "internal: recommender parameters changed during the tokenizer phase");

    ids = dataset_semantic_ids(rq, ds.items);
    retokenize();
  }

  if (!ds.split.validation.empty()) {
    rep.validation = evaluate(model, ids, ds.split.validation, cfg.eval_ks, cfg.beam);
    rep.validation.seed = cfg.seed;
    rep.validation.config_digest = rep.config_digest;
  }
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (ids_out != nullptr) {
    *ids_out = ids;
  }
  return rep;
}

RunResult run_training(const Dataset& ds, const TrainConfig& cfg, Ablation ab) {
  cfg.validate();
  RunResult r{RqVae<float>(cfg.tokenizer_config<float>(ds.items.dim())),
              SeqRec<float>(cfg.vocab_layout(), cfg.model_config()),
              SemanticIdMap{},
              RunReport{},
              {}};
  r.pretrain_curve =
      pretrain_tokenizer(r.quantizer, ds.items.vectors, cfg.tok_pretrain_epochs,
                         cfg.tok_batch, static_cast<float>(cfg.tok_lr), cfg.seed);
  r.report = train_alternating(r.quantizer, r.model, ds, cfg, ab, &r.ids);
  return r;
}

double grad_check(const std::vector<Parameter<double>*>& params,
                  const std::function<double()>& loss_value,
                  const std::function<void()>& compute_grads) {
  for (Parameter<double>* p : params) {
    p->grad.setZero();
  }
  compute_grads();
  double worst = 0.0;
  for (Parameter<double>* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& theta = p->value.data()[i];
      const double base = theta;
      const double h = 1e-5 * std::max(1.0, std::fabs(base));
      theta = base + h;
      const double f1 = loss_value();
      theta = base - h;
      const double f2 = loss_value();
      theta = base;
      const double fd = (f1 - f2) / (2.0 * h);
      const double an = p->grad.data()[i];
      const double rel =
          std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

double grad_check_tokenizer_loss(uint64_t seed) {
  TokenizerConfig<double> tc;
  tc.d_in = 5;
  tc.d_code = 3;
  tc.layers = 2;
  tc.codebook_size = 3;
  tc.hidden = 4;
  tc.alpha = 0.25;
  tc.seed = seed;
  tc.kmeans_iters = 10;
  RqVae<double> rq(tc);

  Rng rng(Rng::derive(seed, 900));
  MatD samples(8, tc.d_in);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    samples.data()[i] = rng.normal();
  }
  rq.init_codebooks(rq.encode(samples));
  MatD z(1, tc.d_in);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    z.data()[i] = rng.normal();
  }

  const auto ctx = rq.freeze(z);
  auto named = rq.named_params();
  return grad_check(
      param_ptrs(named), [&]() { return rq.tokenizer_loss_frozen(z, ctx); },
      [&]() {
        Tape<double> t;
        t.backward(rq.tokenizer_loss(t, z));
      });
}

namespace {

// Tiny random model instance shared by the generation-loss and alignment-path
// checks.
struct TinyRecInstance {
  VocabLayout vocab{2, 3, 4};
  SeqRec<double> model;
  std::vector<TokenizedSeq> hists;
  std::vector<std::vector<int>> targets;

  TinyRecInstance(uint64_t seed, int batch)
      : model(vocab, [&] {
          ModelConfig mc;
          mc.d_model = 8;
          mc.enc_layers = 1;
          mc.dec_layers = 1;
          mc.heads = 2;
          mc.ffn = 12;
          mc.d_code = 3;
          mc.max_items = 2;
          mc.seed = seed;
          return mc;
        }()) {
    Rng rng(Rng::derive(seed, 910));
    for (int e = 0; e < batch; ++e) {
      // One or two valid items per history.
      const int items = 1 + static_cast<int>(rng.uniform_int(0, 1));
      TokenizedSeq s;
      s.tokens.assign(static_cast<size_t>(model.enc_capacity()), VocabLayout::kPad);
      s.mask.assign(static_cast<size_t>(model.enc_capacity()), 0);
      size_t at = 0;
      for (int it = 0; it < items; ++it) {
        for (int tok : vocab.item_tokens(random_id(rng))) {
          s.tokens[at] = tok;
          s.mask[at] = 1;
          ++at;
        }
      }
      hists.push_back(std::move(s));
      targets.push_back(vocab.item_tokens(random_id(rng)));
    }
  }

  CodeSeq random_id(Rng& rng) const {
    CodeSeq id;
    for (int l = 0; l < vocab.layers; ++l) {
      id.codes.push_back(static_cast<int>(rng.uniform_int(0, vocab.codebook_size - 1)));
    }
    id.disamb = static_cast<int>(rng.uniform_int(0, vocab.disamb_capacity - 1));
    return id;
  }
};

}  // namespace

double grad_check_rec_loss(uint64_t seed) {
  TinyRecInstance inst(seed, 2);
  auto named = inst.model.named_params();
  return grad_check(
      param_ptrs(named),
      [&]() {
        Tape<double> t;
        auto f = inst.model.forward_batch(t, inst.hists, inst.targets, false);
        return t.val(f.loss_mean)(0, 0);
      },
      [&]() {
        Tape<double> t;
        auto f = inst.model.forward_batch(t, inst.hists, inst.targets, false);
        t.backward(f.loss_mean);
      });
}

double grad_check_align_path(uint64_t seed) {
  const int batch = 3;
  TinyRecInstance inst(seed, batch);

  TokenizerConfig<double> tc;
  tc.d_in = 6;
  tc.d_code = 3;
  tc.layers = 2;
  tc.codebook_size = 3;
  tc.hidden = 4;
  tc.seed = seed + 1;
  RqVae<double> rq(tc);
  Rng rng(Rng::derive(seed, 920));
  MatD samples(9, tc.d_in);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    samples.data()[i] = rng.normal();
  }
  rq.init_codebooks(rq.encode(samples));

  const double tau = 0.5, beta = 2.0, eps = 1e-10;
  std::vector<MatD> hy(static_cast<size_t>(batch));
  for (int e = 0; e < batch; ++e) {
    MatD z(1, tc.d_in);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      z.data()[i] = rng.normal();
    }
    hy[static_cast<size_t>(e)] = target_distribution(z, rq, tau);
  }

  const auto build = [&](Tape<double>& t) {
    auto fwd = inst.model.forward_batch(t, inst.hists, inst.targets, true);
    std::vector<typename Tape<double>::Var> hx(static_cast<size_t>(batch));
    for (int e = 0; e < batch; ++e) {
      hx[static_cast<size_t>(e)] =
          history_distribution(t, rq, t.slice_rows(fwd.projected, e, 1), tau);
    }
    auto sum_hx = hx[0];
    for (int e = 1; e < batch; ++e) {
      sum_hx = t.add(sum_hx, hx[static_cast<size_t>(e)]);
    }
    typename Tape<double>::Var loss_sum;
    for (int e = 0; e < batch; ++e) {
      const auto hy_c = t.constant(hy[static_cast<size_t>(e)]);
      const auto sp = distribution_score(t, hx[static_cast<size_t>(e)], hy_c, eps);
      const auto hneg = t.scale(t.sub(sum_hx, hx[static_cast<size_t>(e)]),
                                1.0 / static_cast<double>(batch - 1));
      const auto sn = distribution_score(t, hneg, hy_c, eps);
      const auto le = soda_loss(t, sp, sn, beta);
      loss_sum = loss_sum.valid() ? t.add(loss_sum, le) : le;
    }
    return t.scale(loss_sum, 1.0 / static_cast<double>(batch));
  };

  auto named = inst.model.named_params();
  return grad_check(
      param_ptrs(named),
      [&]() {
        Tape<double> t;
        return t.val(build(t))(0, 0);
      },
      [&]() {
        Tape<double> t;
        t.backward(build(t));
      });
}

}  // namespace sodarec
