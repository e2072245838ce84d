#include "sodarec/config.hpp"

#include <doctest.h>

#include <fstream>
#include <string>

#include "test_util.hpp"

using namespace sodarec;
using testutil::TempDir;

TEST_CASE("config: documented defaults") {
  const TrainConfig cfg;
  CHECK(cfg.seed == 1);
  CHECK(cfg.max_len == 20);
  CHECK(cfg.core_k == 5);
  CHECK(cfg.layers == 3);
  CHECK(cfg.codebook_size == 16);
  CHECK(cfg.alpha == 0.25);
  CHECK(cfg.d_model == 64);
  CHECK(cfg.heads == 4);
  CHECK(cfg.lambda == 1e-3);
  CHECK(cfg.beta == 100.0);
  CHECK(cfg.tau == 0.1);
  CHECK(cfg.epsilon == 1e-10);
  CHECK(cfg.rec_epochs_per_cycle == 5);
  CHECK(cfg.tok_epochs_per_cycle == 1);
  CHECK(cfg.cycles == 10);
  CHECK(cfg.eval_ks == std::vector<int>{10, 20});
  CHECK(cfg.beam == 30);
  cfg.validate();  // defaults must be coherent
}

TEST_CASE("config: canonical text round-trips through the loader") {
  TrainConfig cfg;
  cfg.seed = 99;
  cfg.lambda = 0.002;
  cfg.eval_ks = {5, 10, 20};
  cfg.beam = 25;

  TempDir tmp("cfg");
  std::ofstream(tmp.file("run.cfg")) << cfg.canonical();
  const TrainConfig back = load_config(tmp.file("run.cfg"));
  CHECK(back.canonical() == cfg.canonical());
  CHECK(back.digest() == cfg.digest());
  CHECK(back.seed == 99);
  CHECK(back.eval_ks == std::vector<int>{5, 10, 20});
}

TEST_CASE("config: comments, blanks, and spacing are tolerated") {
  TempDir tmp("cfg");
  std::ofstream(tmp.file("run.cfg")) << "# experiment setup\n"
                                        "\n"
                                        "seed = 7\n"
                                        "align.lambda=0.01\n"
                                        "  eval.ks = 10,20 \n"
                                        "model.d_model = 32\n";
  const TrainConfig cfg = load_config(tmp.file("run.cfg"));
  CHECK(cfg.seed == 7);
  CHECK(cfg.lambda == 0.01);
  CHECK(cfg.eval_ks == std::vector<int>{10, 20});
  CHECK(cfg.d_model == 32);
}

TEST_CASE("config: malformed input errors name the offending line") {
  TempDir tmp("cfg");

  std::ofstream(tmp.file("unknown.cfg")) << "seed=1\nnot.a.key=5\n";
  CHECK_THROWS_WITH_AS(static_cast<void>(load_config(tmp.file("unknown.cfg"))),
                       doctest::Contains(":2"), std::runtime_error);

  std::ofstream(tmp.file("noeq.cfg")) << "seed 1\n";
  CHECK_THROWS(static_cast<void>(load_config(tmp.file("noeq.cfg"))));

  std::ofstream(tmp.file("badnum.cfg")) << "align.tau=warm\n";
  CHECK_THROWS(static_cast<void>(load_config(tmp.file("badnum.cfg"))));

  CHECK_THROWS(static_cast<void>(load_config(tmp.file("absent.cfg"))));
}

TEST_CASE("config: overrides hit every value kind and reject junk") {
  TrainConfig cfg;
  apply_overrides(cfg, {"seed=123", "align.beta=50", "model.heads=2",
                        "eval.ks=1,5,25", "tokenizer.alpha=0.5"});
  CHECK(cfg.seed == 123);
  CHECK(cfg.beta == 50.0);
  CHECK(cfg.heads == 2);
  CHECK(cfg.eval_ks == std::vector<int>{1, 5, 25});
  CHECK(cfg.alpha == 0.5);

  CHECK_THROWS(set_config_key(cfg, "nope", "1"));
  CHECK_THROWS(set_config_key(cfg, "seed", "abc"));
  CHECK_THROWS(apply_overrides(cfg, {"missing_equals"}));
}

TEST_CASE("config: validation rejects incoherent settings") {
  const auto broken = [](auto&& mutate) {
    TrainConfig cfg;
    mutate(cfg);
    return cfg;
  };
  CHECK_THROWS(broken([](TrainConfig& c) { c.tau = 0.0; }).validate());
  CHECK_THROWS(broken([](TrainConfig& c) { c.beta = -1.0; }).validate());
  CHECK_THROWS(broken([](TrainConfig& c) { c.lambda = -0.5; }).validate());
  CHECK_THROWS(broken([](TrainConfig& c) { c.epsilon = 0.0; }).validate());
  CHECK_THROWS(broken([](TrainConfig& c) { c.epsilon = 1e-3; }).validate());
  CHECK_THROWS(broken([](TrainConfig& c) { c.cycles = -1; }).validate());
  CHECK_THROWS(broken([](TrainConfig& c) { c.batch = 0; }).validate());
  CHECK_THROWS(broken([](TrainConfig& c) { c.codebook_size = 1; }).validate());
  CHECK_THROWS(broken([](TrainConfig& c) { c.eval_ks.clear(); }).validate());
  CHECK_THROWS(broken([](TrainConfig& c) { c.beam = 0; }).validate());
}

TEST_CASE("config: digest tracks content") {
  TrainConfig a, b;
  CHECK(a.digest() == b.digest());
  CHECK(a.digest().rfind("fnv1a64:", 0) == 0);
  b.lambda = 0.5;
  CHECK(a.digest() != b.digest());
}
