#include "doctest.h"

#include "sodarec/checkpoint.hpp"
#include "sodarec/pipeline.hpp"

#include "test_util.hpp"

#include <cmath>
#include <string>
#include <vector>

using namespace sodarec;
using namespace sodarec::testutil;

namespace {

// Small planted-cluster dataset shared by the training tests.
const Dataset& fixture() {
  static const Dataset ds = [] {
    SynthConfig sc;
    sc.n_users = 24;
    sc.n_items = 16;
    sc.n_clusters = 3;
    sc.d_in = 8;
    sc.min_events = 5;
    sc.max_events = 9;
    sc.seed = 5;
    const SynthCorpus corpus = synth_corpus(sc);
    return prepare_dataset(corpus.log, corpus.items, 2, 6);
  }();
  return ds;
}

TrainConfig base_cfg(uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.max_len = 6;
  cfg.core_k = 2;
  cfg.d_code = 4;
  cfg.layers = 2;
  cfg.codebook_size = 4;
  cfg.hidden = 8;
  cfg.kmeans_iters = 10;
  cfg.tok_pretrain_epochs = 4;
  cfg.tok_batch = 8;
  cfg.tok_lr = 1e-2;
  cfg.d_model = 16;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.heads = 2;
  cfg.ffn = 32;
  cfg.disamb_capacity = 8;
  cfg.lambda = 0.1;
  cfg.beta = 2.0;
  cfg.tau = 0.2;
  cfg.rec_lr = 1e-3;
  cfg.batch = 16;
  cfg.rec_epochs_per_cycle = 1;
  cfg.tok_epochs_per_cycle = 1;
  cfg.cycles = 2;
  cfg.eval_ks = {5, 10};
  cfg.beam = 12;
  return cfg;
}

// One full-variant run reused by several inspection tests.
RunResult& full_run() {
  static RunResult r = run_training(fixture(), base_cfg(3), Ablation::kFull);
  return r;
}

std::vector<MatF> codebook_stack(const RqVae<float>& rq) {
  std::vector<MatF> books(static_cast<size_t>(rq.layers()));
  for (int l = 0; l < rq.layers(); ++l) {
    books[static_cast<size_t>(l)] = rq.codebook(l);
  }
  return books;
}

std::vector<const EpochLog*> rows_of_phase(const RunReport& rep, const std::string& ph) {
  std::vector<const EpochLog*> out;
  for (const EpochLog& e : rep.curve) {
    if (e.phase == ph) {
      out.push_back(&e);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("ablation names parse and print both spelling styles") {
  CHECK(parse_ablation("full") == Ablation::kFull);
  CHECK(parse_ablation("no_neg") == Ablation::kNoNeg);
  CHECK(parse_ablation("no-neg") == Ablation::kNoNeg);
  CHECK(parse_ablation("no_loss") == Ablation::kNoLoss);
  CHECK(parse_ablation("no-loss") == Ablation::kNoLoss);
  CHECK(parse_ablation("no_alter") == Ablation::kNoAlter);
  CHECK(parse_ablation("no-alter") == Ablation::kNoAlter);
  CHECK(std::string(ablation_name(Ablation::kFull)) == "full");
  CHECK(std::string(ablation_name(Ablation::kNoNeg)) == "no-neg");
  CHECK(std::string(ablation_name(Ablation::kNoLoss)) == "no-loss");
  CHECK(std::string(ablation_name(Ablation::kNoAlter)) == "no-alter");
  for (Ablation ab : {Ablation::kFull, Ablation::kNoNeg, Ablation::kNoLoss,
                      Ablation::kNoAlter}) {
    CHECK(parse_ablation(ablation_name(ab)) == ab);
  }
  CHECK_THROWS_AS(parse_ablation("nope"), std::invalid_argument);
  CHECK_THROWS_AS(parse_ablation(""), std::invalid_argument);
}

TEST_CASE("training log round-trips through text without losing precision") {
  RunReport rep;
  rep.seed = 42;
  rep.variant = "full";
  rep.config_digest = "fnv1a64:deadbeef";
  rep.curve.push_back(EpochLog{0, "rec", 0, 1.0 / 3.0, 2.718281828459045, 1e-17, 0.25});
  rep.curve.push_back(EpochLog{0, "tok", 1, 0.1234567890123456789, 0.0, 3.5, -1.75});
  rep.curve.push_back(EpochLog{7, "rec", 3, 5e-324, 1e308, 0.0, 123456.789});

  TempDir tmp("runlog");
  const std::string path = tmp.file("train_log.tsv");
  rep.save_log(path);
  const std::vector<EpochLog> back = RunReport::load_log(path);
  REQUIRE(back.size() == rep.curve.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].cycle == rep.curve[i].cycle);
    CHECK(back[i].phase == rep.curve[i].phase);
    CHECK(back[i].epoch == rep.curve[i].epoch);
    CHECK(back[i].l_token == rep.curve[i].l_token);
    CHECK(back[i].l_rec == rep.curve[i].l_rec);
    CHECK(back[i].l_soda == rep.curve[i].l_soda);
    CHECK(back[i].l_combined == rep.curve[i].l_combined);
  }
}

TEST_CASE("tokenizer pretraining lowers the objective and is seed-deterministic") {
  const Dataset& ds = fixture();
  TrainConfig cfg = base_cfg(11);
  cfg.tok_pretrain_epochs = 30;
  cfg.tok_lr = 1e-3;

  RqVae<float> a(cfg.tokenizer_config<float>(ds.items.dim()));
  const std::vector<double> curve_a =
      pretrain_tokenizer(a, ds.items.vectors, cfg.tok_pretrain_epochs, cfg.tok_batch,
                         static_cast<float>(cfg.tok_lr), cfg.seed);
  REQUIRE(static_cast<int>(curve_a.size()) == cfg.tok_pretrain_epochs + 1);
  for (double v : curve_a) {
    CHECK(std::isfinite(v));
  }
  // The decoder starts from random weights, so descent has plenty to gain.
  CHECK(curve_a.back() < curve_a.front());

  RqVae<float> b(cfg.tokenizer_config<float>(ds.items.dim()));
  const std::vector<double> curve_b =
      pretrain_tokenizer(b, ds.items.vectors, cfg.tok_pretrain_epochs, cfg.tok_batch,
                         static_cast<float>(cfg.tok_lr), cfg.seed);
  CHECK(curve_a == curve_b);

  TempDir tmp("pretrain");
  const std::string pa = tmp.file("a.cb");
  const std::string pb = tmp.file("b.cb");
  save_codebooks(pa, codebook_stack(a));
  save_codebooks(pb, codebook_stack(b));
  CHECK(files_identical(pa, pb));
}

TEST_CASE("alternating training rejects unusable inputs") {
  const Dataset& ds = fixture();
  const TrainConfig cfg = base_cfg(1);

  RqVae<float> rq(cfg.tokenizer_config<float>(ds.items.dim()));
  SeqRec<float> model(cfg.vocab_layout(), cfg.model_config());

  Dataset empty = ds;
  empty.split.train.clear();
  CHECK_THROWS_AS(train_alternating(rq, model, empty, cfg, Ablation::kFull, nullptr),
                  std::invalid_argument);

  TrainConfig other = cfg;
  other.codebook_size = 8;  // vocabulary no longer matches the tokenizer
  SeqRec<float> mismatched(other.vocab_layout(), other.model_config());
  CHECK_THROWS_AS(train_alternating(rq, mismatched, ds, cfg, Ablation::kFull, nullptr),
                  std::invalid_argument);
}

TEST_CASE("identical seeds reproduce every artifact bit for bit") {
  const Dataset& ds = fixture();
  const TrainConfig cfg = base_cfg(21);

  RunResult r1 = run_training(ds, cfg, Ablation::kFull);
  RunResult r2 = run_training(ds, cfg, Ablation::kFull);

  TempDir tmp("repro");
  const auto dump = [&](RunResult& r, const std::string& tag) {
    save_checkpoint(tmp.file(tag + ".cp"), r.model.named_params());
    save_codebooks(tmp.file(tag + ".cb"), codebook_stack(r.quantizer));
    save_semantic_ids(r.ids, tmp.file(tag + ".ids"));
    r.report.save_log(tmp.file(tag + ".log"));
  };
  dump(r1, "one");
  dump(r2, "two");
  CHECK(files_identical(tmp.file("one.cp"), tmp.file("two.cp")));
  CHECK(files_identical(tmp.file("one.cb"), tmp.file("two.cb")));
  CHECK(files_identical(tmp.file("one.ids"), tmp.file("two.ids")));
  CHECK(files_identical(tmp.file("one.log"), tmp.file("two.log")));
  CHECK(r1.pretrain_curve == r2.pretrain_curve);
  CHECK(r1.report.validation.to_lines() == r2.report.validation.to_lines());

  // A different seed must actually reach different weights.
  TrainConfig other = cfg;
  other.seed = 22;
  RunResult r3 = run_training(ds, other, Ablation::kFull);
  save_checkpoint(tmp.file("three.cp"), r3.model.named_params());
  CHECK_FALSE(files_identical(tmp.file("one.cp"), tmp.file("three.cp")));
}

TEST_CASE("full variant with zero weight is update-for-update the ablated one") {
  const Dataset& ds = fixture();
  TrainConfig zero = base_cfg(31);
  zero.lambda = 0.0;
  TrainConfig nonzero = base_cfg(31);
  nonzero.lambda = 0.25;  // ignored by the no_loss variant

  RunResult a = run_training(ds, zero, Ablation::kFull);
  RunResult b = run_training(ds, nonzero, Ablation::kNoLoss);

  TempDir tmp("lcont");
  save_checkpoint(tmp.file("a.cp"), a.model.named_params());
  save_checkpoint(tmp.file("b.cp"), b.model.named_params());
  save_codebooks(tmp.file("a.cb"), codebook_stack(a.quantizer));
  save_codebooks(tmp.file("b.cb"), codebook_stack(b.quantizer));
  CHECK(files_identical(tmp.file("a.cp"), tmp.file("b.cp")));
  CHECK(files_identical(tmp.file("a.cb"), tmp.file("b.cb")));
  CHECK(a.ids == b.ids);

  for (const EpochLog& e : b.report.curve) {
    CHECK(e.l_soda == 0.0);
    if (e.phase == "rec") {
      CHECK(e.l_combined == e.l_rec);
    }
  }
}

TEST_CASE("alignment loss is live in the full variant and changes the updates") {
  RunResult& full = full_run();
  for (const EpochLog* e : rows_of_phase(full.report, "rec")) {
    CHECK(e->l_soda > 0.0);  // -log sigmoid is strictly positive
    CHECK(std::fabs(e->l_combined - (e->l_rec + 0.1 * e->l_soda)) < 1e-4);
  }

  RunResult ablated = run_training(fixture(), base_cfg(3), Ablation::kNoLoss);
  TempDir tmp("live");
  save_checkpoint(tmp.file("full.cp"), full.model.named_params());
  save_checkpoint(tmp.file("ablated.cp"), ablated.model.named_params());
  CHECK_FALSE(files_identical(tmp.file("full.cp"), tmp.file("ablated.cp")));
}

TEST_CASE("no_alter freezes the tokenizer while full training moves it") {
  const Dataset& ds = fixture();
  TrainConfig cfg = base_cfg(41);
  cfg.cycles = 3;
  cfg.rec_epochs_per_cycle = 2;

  RqVae<float> pre(cfg.tokenizer_config<float>(ds.items.dim()));
  pretrain_tokenizer(pre, ds.items.vectors, cfg.tok_pretrain_epochs, cfg.tok_batch,
                     static_cast<float>(cfg.tok_lr), cfg.seed);
  TempDir tmp("alter");
  save_codebooks(tmp.file("pre.cb"), codebook_stack(pre));

  RqVae<float> rq_na = pre;
  SeqRec<float> model_na(cfg.vocab_layout(), cfg.model_config());
  SemanticIdMap ids_na;
  const RunReport rep_na =
      train_alternating(rq_na, model_na, ds, cfg, Ablation::kNoAlter, &ids_na);
  save_codebooks(tmp.file("na.cb"), codebook_stack(rq_na));
  CHECK(files_identical(tmp.file("pre.cb"), tmp.file("na.cb")));
  CHECK(rows_of_phase(rep_na, "tok").empty());
  CHECK(static_cast<int>(rep_na.curve.size()) == cfg.cycles * cfg.rec_epochs_per_cycle);
  CHECK(ids_na == dataset_semantic_ids(rq_na, ds.items));

  RqVae<float> rq_full = pre;
  SeqRec<float> model_full(cfg.vocab_layout(), cfg.model_config());
  SemanticIdMap ids_full;
  const RunReport rep_full =
      train_alternating(rq_full, model_full, ds, cfg, Ablation::kFull, &ids_full);
  save_codebooks(tmp.file("full.cb"), codebook_stack(rq_full));
  CHECK_FALSE(files_identical(tmp.file("pre.cb"), tmp.file("full.cb")));

  // Tokenizer phases run between cycles only, never after the last one.
  const auto tok_rows = rows_of_phase(rep_full, "tok");
  REQUIRE(static_cast<int>(tok_rows.size()) ==
          (cfg.cycles - 1) * cfg.tok_epochs_per_cycle);
  for (const EpochLog* e : tok_rows) {
    CHECK(e->cycle < cfg.cycles - 1);
  }
  CHECK(rep_full.curve.back().phase == "rec");
  CHECK(rep_full.curve.back().cycle == cfg.cycles - 1);

  // Tokenizer rows carry the most recent recommender losses forward.
  for (size_t i = 1; i < rep_full.curve.size(); ++i) {
    if (rep_full.curve[i].phase == "tok") {
      CHECK(rep_full.curve[i].l_rec == rep_full.curve[i - 1].l_rec);
      CHECK(rep_full.curve[i].l_combined == rep_full.curve[i - 1].l_combined);
    }
  }
}

TEST_CASE("shipped semantic ids match the shipped tokenizer") {
  RunResult& r = full_run();
  CHECK(r.ids == dataset_semantic_ids(r.quantizer, fixture().items));
  CHECK(static_cast<int>(r.ids.size()) == fixture().items.count());
}

TEST_CASE("a run reports validation metrics for the requested cutoffs") {
  RunResult& r = full_run();
  const MetricsReport& v = r.report.validation;
  REQUIRE_FALSE(v.metrics.empty());
  for (int k : {5, 10}) {
    const double rec = v.get("recall", k);
    const double ndcg = v.get("ndcg", k);
    CHECK(rec >= 0.0);
    CHECK(rec <= 1.0);
    CHECK(ndcg >= 0.0);
    CHECK(ndcg <= rec + 1e-12);
  }
  CHECK(v.seed == 3);
  CHECK(v.config_digest == r.report.config_digest);
  CHECK(r.report.variant == "full");
  CHECK(r.report.wall_seconds > 0.0);
}

TEST_CASE("analytic gradients of the three training objectives pass differencing") {
  CHECK(grad_check_tokenizer_loss(51) < 1e-4);
  CHECK(grad_check_rec_loss(52) < 1e-4);
  CHECK(grad_check_align_path(53) < 1e-4);
}
