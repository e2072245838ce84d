// Microbenchmarks for the training and inference hot paths: residual
// quantization, tokenizer and recommender training steps, history encoding,
// and trie-constrained beam search.

#include "sodarec/decode.hpp"
#include "sodarec/pipeline.hpp"
#include "sodarec/quantizer.hpp"
#include "sodarec/rng.hpp"
#include "sodarec/seqmodel.hpp"
#include "sodarec/trie.hpp"

#include <benchmark/benchmark.h>

#include <vector>

using namespace sodarec;

namespace {

MatF random_rows(int n, int d, uint64_t seed) {
  Rng rng(seed);
  MatF m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<float>(rng.normal());
  }
  return m;
}

RqVae<float> make_tokenizer(int k, const MatF& embeddings) {
  TokenizerConfig<float> cfg;
  cfg.d_in = static_cast<int>(embeddings.cols());
  cfg.d_code = 16;
  cfg.layers = 3;
  cfg.codebook_size = k;
  cfg.hidden = 64;
  cfg.seed = 7;
  RqVae<float> rq(cfg);
  rq.init_codebooks(rq.encode(embeddings));
  return rq;
}

// 200 items with distinct two-layer code pairs; enough structure for a
// realistic trie without training a tokenizer first.
SemanticIdMap grid_ids(int n_items, int k) {
  SemanticIdMap ids;
  for (int i = 0; i < n_items; ++i) {
    CodeSeq id;
    id.codes = {i % k, (i / k) % k, 0};
    id.disamb = i / (k * k);
    ids[strf("i%04d", i)] = id;
  }
  return ids;
}

struct RecBench {
  VocabLayout vocab;
  SeqRec<float> model;
  SemanticIdMap ids;
  PrefixTrie trie;
  std::vector<TokenizedSeq> histories;
  std::vector<std::vector<int>> targets;

  static RecBench& instance() {
    static RecBench b;
    return b;
  }

 private:
  RecBench()
      : vocab(3, 16, 64),
        model(vocab, make_model_config()),
        ids(grid_ids(200, 16)),
        trie(PrefixTrie::build(ids, vocab)) {
    Rng rng(41);
    for (int u = 0; u < 64; ++u) {
      std::vector<std::string> items;
      for (int j = 0; j < 10; ++j) {
        items.push_back(strf("i%04d", static_cast<int>(rng.uniform_int(0, 199))));
      }
      histories.push_back(tokenize_history(items, ids, vocab, 20));
      targets.push_back(
          vocab.item_tokens(ids.at(strf("i%04d", static_cast<int>(rng.uniform_int(0, 199))))));
    }
  }

  static ModelConfig make_model_config() {
    ModelConfig m;
    m.d_model = 64;
    m.enc_layers = 2;
    m.dec_layers = 2;
    m.heads = 4;
    m.ffn = 128;
    m.d_code = 16;
    m.max_items = 20;
    m.seed = 11;
    return m;
  }
};

void BM_QuantizeHard(benchmark::State& state) {
  const MatF emb = random_rows(256, 32, 3);
  const RqVae<float> rq = make_tokenizer(static_cast<int>(state.range(0)), emb);
  const MatF latents = rq.encode(emb);
  int i = 0;
  for (auto _ : state) {
    const QuantTrace<float> trace = rq.quantize_hard(latents.row(i));
    benchmark::DoNotOptimize(trace.codes.data());
    i = (i + 1) % static_cast<int>(latents.rows());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_QuantizeHard)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_TokenizerStep(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const MatF emb = random_rows(256, 32, 3);
  RqVae<float> rq = make_tokenizer(16, emb);
  Tape<float> tape;
  int start = 0;
  for (auto _ : state) {
    tape.reset();
    auto loss = rq.tokenizer_loss(tape, emb.row(start % 256));
    for (int b = 1; b < batch; ++b) {
      loss = tape.add(loss, rq.tokenizer_loss(tape, emb.row((start + b) % 256)));
    }
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.val(loss).data());
    start = (start + batch) % 256;
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_TokenizerStep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_RecTrainStep(benchmark::State& state) {
  RecBench& b = RecBench::instance();
  const int batch = static_cast<int>(state.range(0));
  const std::vector<TokenizedSeq> hist(b.histories.begin(), b.histories.begin() + batch);
  const std::vector<std::vector<int>> tgt(b.targets.begin(), b.targets.begin() + batch);
  Tape<float> tape;
  for (auto _ : state) {
    tape.reset();
    auto fwd = b.model.forward_batch(tape, hist, tgt, true);
    tape.backward(fwd.loss_mean);
    benchmark::DoNotOptimize(fwd.per_example.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_RecTrainStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_EncodeHistory(benchmark::State& state) {
  RecBench& b = RecBench::instance();
  int i = 0;
  for (auto _ : state) {
    const auto enc = b.model.encode_history(b.histories[static_cast<size_t>(i)]);
    benchmark::DoNotOptimize(enc.states.data());
    i = (i + 1) % static_cast<int>(b.histories.size());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_EncodeHistory)->Unit(benchmark::kMicrosecond);

void BM_BeamSearch(benchmark::State& state) {
  RecBench& b = RecBench::instance();
  const auto enc = b.model.encode_history(b.histories[0]);
  const int beam = static_cast<int>(state.range(0));
  for (auto _ : state) {
    const RankedList ranked = constrained_beam_search(b.model, enc, b.trie, beam);
    benchmark::DoNotOptimize(ranked.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_BeamSearch)->Arg(10)->Arg(30)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
