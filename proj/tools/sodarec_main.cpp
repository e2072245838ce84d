// Command-line front end: corpus synthesis, tokenizer pretraining, alternating
// training with ablations, full-ranking evaluation, and report rendering.

#include "sodarec/checkpoint.hpp"
#include "sodarec/config.hpp"
#include "sodarec/corpus.hpp"
#include "sodarec/metrics.hpp"
#include "sodarec/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace sodarec;

namespace {

// Shared options for every command that starts from a TrainConfig.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value assignments
  uint64_t seed = 0;
  bool seed_given = false;

  TrainConfig resolve() const {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config(config_path);
    apply_overrides(cfg, overrides);
    if (seed_given) {
      cfg.seed = seed;
    }
    cfg.validate();
    return cfg;
  }
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides,
                  "override one configuration key, e.g. --set align.lambda=0.005");
  auto* seed = cmd->add_option("--seed", args.seed, "random seed (overrides the file)");
  cmd->callback([&args, seed] { args.seed_given = seed->count() > 0; });
}

Dataset load_dataset_dir(const std::string& dir, int core_k, int max_len) {
  const fs::path d(dir);
  const InteractionLog log = load_interactions((d / "interactions.tsv").string());
  const EmbeddingTable table =
      load_embeddings((d / "embeddings.txt").string(), (d / "item_map.tsv").string());
  return prepare_dataset(log, table, core_k, max_len);
}

std::vector<MatF> codebook_stack(const RqVae<float>& rq, int layers) {
  std::vector<MatF> books;
  books.reserve(static_cast<size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    books.push_back(rq.codebook(l));
  }
  return books;
}

void write_curve(const std::vector<double>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    fail(strf("cannot write curve file: %s", path.c_str()));
  }
  out << "epoch\tloss\n";
  for (size_t i = 0; i < curve.size(); ++i) {
    out << i << '\t' << strf("%.17g", curve[i]) << '\n';
  }
}

void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    fail(strf("cannot write file: %s", path.c_str()));
  }
  out << text;
}

// ---- synth ----

struct SynthArgs {
  SynthConfig cfg;
  std::string out_dir = "data";
};

int cmd_synth(const SynthArgs& a) {
  const SynthCorpus corpus = synth_corpus(a.cfg);
  fs::create_directories(a.out_dir);
  const fs::path d(a.out_dir);
  save_interactions(corpus.log, (d / "interactions.tsv").string());
  save_embeddings(corpus.items, (d / "embeddings.txt").string(),
                  (d / "item_map.tsv").string());
  std::printf("wrote %s: %d users, %d items, %zu interactions, %d clusters\n",
              a.out_dir.c_str(), a.cfg.n_users, a.cfg.n_items, corpus.log.size(),
              a.cfg.n_clusters);
  return 0;
}

// ---- tokenize ----

struct TokenizeArgs {
  ConfigArgs config;
  std::string data_dir = "data";
  std::string out_dir = "tok";
};

int cmd_tokenize(const TokenizeArgs& a) {
  const TrainConfig cfg = a.config.resolve();
  const Dataset ds = load_dataset_dir(a.data_dir, cfg.core_k, cfg.max_len);

  RqVae<float> rq(cfg.tokenizer_config<float>(ds.items.dim()));
  const std::vector<double> curve =
      pretrain_tokenizer(rq, ds.items.vectors, cfg.tok_pretrain_epochs, cfg.tok_batch,
                         static_cast<float>(cfg.tok_lr), cfg.seed);
  const SemanticIdMap ids = dataset_semantic_ids(rq, ds.items);

  fs::create_directories(a.out_dir);
  const fs::path d(a.out_dir);
  save_codebooks((d / "codebooks.cb").string(), codebook_stack(rq, cfg.layers));
  save_semantic_ids(ids, (d / "semantic_ids.tsv").string());
  write_curve(curve, (d / "pretrain_curve.tsv").string());
  write_text(cfg.canonical(), (d / "config.txt").string());

  std::set<std::vector<int>> distinct;
  for (const auto& [item, id] : ids) {
    distinct.insert(id.codes);
  }
  std::printf("pretrain loss %.4f -> %.4f over %d epochs\n", curve.front(),
              curve.back(), cfg.tok_pretrain_epochs);
  std::printf("%zu items, %zu distinct code prefixes, wrote %s\n", ids.size(),
              distinct.size(), a.out_dir.c_str());
  return 0;
}

// ---- train ----

struct TrainArgs {
  ConfigArgs config;
  std::string ablation = "full";
  std::string data_dir = "data";
  std::string out_dir = "run";
};

int cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = a.config.resolve();
  const Ablation ab = parse_ablation(a.ablation);
  const Dataset ds = load_dataset_dir(a.data_dir, cfg.core_k, cfg.max_len);

  RunResult res = run_training(ds, cfg, ab);

  fs::create_directories(a.out_dir);
  const fs::path d(a.out_dir);
  save_checkpoint((d / "checkpoint.cp").string(), res.model.named_params());
  save_codebooks((d / "codebooks.cb").string(), codebook_stack(res.quantizer, cfg.layers));
  save_semantic_ids(res.ids, (d / "semantic_ids.tsv").string());
  res.report.save_log((d / "train_log.tsv").string());
  res.report.validation.save((d / "metrics.txt").string());
  write_curve(res.pretrain_curve, (d / "pretrain_curve.tsv").string());
  write_text(cfg.canonical(), (d / "config.txt").string());

  std::printf("variant %s, seed %llu, %.1f s\n", res.report.variant.c_str(),
              static_cast<unsigned long long>(res.report.seed),
              res.report.wall_seconds);
  std::printf("validation metrics:\n%s", res.report.validation.to_table().c_str());
  std::printf("wrote %s\n", a.out_dir.c_str());
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string run_dir = "run";
  std::string data_dir = "data";
  std::string split = "test";
  std::vector<int> ks;
  int beam = 0;
  std::string out_path;
};

int cmd_eval(const EvalArgs& a) {
  const fs::path run(a.run_dir);
  TrainConfig cfg = load_config((run / "config.txt").string());
  const Dataset ds = load_dataset_dir(a.data_dir, cfg.core_k, cfg.max_len);

  SeqRec<float> model(cfg.vocab_layout(), cfg.model_config());
  load_checkpoint((run / "checkpoint.cp").string(), model.named_params());
  const SemanticIdMap ids = load_semantic_ids((run / "semantic_ids.tsv").string());

  const std::vector<UserSequence>* split = nullptr;
  if (a.split == "train") {
    split = &ds.split.train;
  } else if (a.split == "validation") {
    split = &ds.split.validation;
  } else if (a.split == "test") {
    split = &ds.split.test;
  } else {
    fail_arg(strf("unknown split \"%s\" (expected train, validation, or test)",
                  a.split.c_str()));
  }

  const std::vector<int>& ks = a.ks.empty() ? cfg.eval_ks : a.ks;
  const int beam = a.beam > 0 ? a.beam : cfg.beam;
  MetricsReport rep = evaluate(model, ids, *split, ks, beam);
  rep.config_digest = cfg.digest();
  rep.seed = cfg.seed;

  std::printf("%s split, %zu users, beam %d:\n%s", a.split.c_str(), split->size(), beam,
              rep.to_table().c_str());
  if (!a.out_path.empty()) {
    rep.save(a.out_path);
    std::printf("wrote %s\n", a.out_path.c_str());
  }
  return 0;
}

// ---- report ----

// Fixed-size ASCII chart of a series; rows top-down from max to min.
std::string ascii_curve(const std::vector<double>& v, int width, int height) {
  if (v.empty()) {
    return "  (no data)\n";
  }
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  const double span = hi > lo ? hi - lo : 1.0;
  const int w = std::min<int>(width, static_cast<int>(v.size()));

  std::vector<std::string> grid(static_cast<size_t>(height), std::string(w, ' '));
  for (int x = 0; x < w; ++x) {
    // Bucket mean so long runs still fit the width.
    const size_t a = static_cast<size_t>(x) * v.size() / w;
    const size_t b = std::max(a + 1, static_cast<size_t>(x + 1) * v.size() / w);
    double m = 0.0;
    for (size_t i = a; i < b; ++i) {
      m += v[i];
    }
    m /= static_cast<double>(b - a);
    const int y = static_cast<int>(std::lround((hi - m) / span * (height - 1)));
    grid[static_cast<size_t>(std::clamp(y, 0, height - 1))][x] = '*';
  }

  std::string out;
  for (int r = 0; r < height; ++r) {
    const double label = hi - span * r / (height - 1);
    out += strf("  %10.4f |", label) + grid[static_cast<size_t>(r)] + "\n";
  }
  out += "             +" + std::string(w, '-') + strf("  (%zu epochs)\n", v.size());
  return out;
}

struct ReportArgs {
  std::vector<std::string> run_dirs;
};

int cmd_report(const ReportArgs& a) {
  for (const std::string& dir : a.run_dirs) {
    const fs::path d(dir);
    const std::vector<EpochLog> curve = RunReport::load_log((d / "train_log.tsv").string());

    std::printf("== %s ==\n", dir.c_str());
    const std::vector<std::pair<const char*, double EpochLog::*>> columns = {
        {"tokenizer loss", &EpochLog::l_token},
        {"generation loss", &EpochLog::l_rec},
        {"alignment loss", &EpochLog::l_soda},
        {"combined loss", &EpochLog::l_combined},
    };
    for (const auto& [title, member] : columns) {
      std::vector<double> series;
      series.reserve(curve.size());
      for (const EpochLog& e : curve) {
        series.push_back(e.*member);
      }
      std::printf("%s\n%s", title, ascii_curve(series, 64, 10).c_str());
    }

    const fs::path metrics = d / "metrics.txt";
    if (fs::exists(metrics)) {
      const MetricsReport rep = MetricsReport::load(metrics.string());
      std::printf("validation metrics:\n%s", rep.to_table().c_str());
    }
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"residual-quantized generative recommender with distribution-level "
               "alignment"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a planted-cluster corpus");
  synth_cmd->add_option("--users", synth.cfg.n_users, "number of users");
  synth_cmd->add_option("--items", synth.cfg.n_items, "number of items");
  synth_cmd->add_option("--clusters", synth.cfg.n_clusters, "number of planted clusters");
  synth_cmd->add_option("--dim", synth.cfg.d_in, "embedding dimension");
  synth_cmd->add_option("--min-events", synth.cfg.min_events, "minimum events per user");
  synth_cmd->add_option("--max-events", synth.cfg.max_events, "maximum events per user");
  synth_cmd->add_option("--within-p", synth.cfg.within_cluster_p,
                        "probability a pick stays in the user's cluster");
  synth_cmd->add_option("--center-scale", synth.cfg.center_scale,
                        "cluster center magnitude");
  synth_cmd->add_option("--seed", synth.cfg.seed, "random seed");
  synth_cmd->add_option("--out", synth.out_dir, "output directory");

  TokenizeArgs tok;
  auto* tok_cmd =
      app.add_subcommand("tokenize", "pretrain the tokenizer and export semantic IDs");
  add_config_options(tok_cmd, tok.config);
  tok_cmd->add_option("--data", tok.data_dir, "corpus directory")
      ->check(CLI::ExistingDirectory);
  tok_cmd->add_option("--out", tok.out_dir, "output directory");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "alternating training with ablations");
  add_config_options(train_cmd, train.config);
  train_cmd->add_option("--ablation", train.ablation,
                        "variant: full, no-neg, no-loss, or no-alter");
  train_cmd->add_option("--data", train.data_dir, "corpus directory")
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", train.out_dir, "output directory");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "full-ranking evaluation of a run");
  eval_cmd->add_option("--run", eval.run_dir, "training output directory")
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--data", eval.data_dir, "corpus directory")
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", eval.split, "train, validation, or test");
  eval_cmd->add_option("--ks", eval.ks, "cutoffs (default: the run's eval.ks)");
  eval_cmd->add_option("--beam", eval.beam, "beam width (default: the run's eval.beam)");
  eval_cmd->add_option("--out", eval.out_path, "also save the metrics file here");

  ReportArgs report;
  auto* report_cmd =
      app.add_subcommand("report", "render loss curves and metric tables");
  report_cmd->add_option("runs", report.run_dirs, "training output directories")
      ->required()
      ->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      return cmd_synth(synth);
    }
    if (tok_cmd->parsed()) {
      return cmd_tokenize(tok);
    }
    if (train_cmd->parsed()) {
      return cmd_train(train);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval);
    }
    if (report_cmd->parsed()) {
      return cmd_report(report);
    }
  } catch (const std::exception& e) {
    std::cerr << "sodarec: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
