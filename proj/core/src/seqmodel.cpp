#include "sodarec/seqmodel.hpp"

#include <cmath>

namespace sodarec {

namespace {

constexpr double kMaskBias = -1e9;  // underflows to exact zero attention weight
constexpr double kLnEps = 1e-5;

template <typename T>
void softmax_rows_inplace(MatX<T>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i).array();
    row -= row.maxCoeff();
    row = row.exp();
    row /= row.sum();
  }
}

template <typename T>
MatX<T> causal_bias(int n) {
  MatX<T> m = MatX<T>::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      m(i, j) = static_cast<T>(kMaskBias);
    }
  }
  return m;
}

template <typename T>
MatX<T> mask_bias_row(const std::vector<char>& mask) {
  MatX<T> row(1, static_cast<Eigen::Index>(mask.size()));
  for (size_t i = 0; i < mask.size(); ++i) {
    row(0, static_cast<Eigen::Index>(i)) = mask[i] ? T(0) : static_cast<T>(kMaskBias);
  }
  return row;
}

}  // namespace

std::vector<int> VocabLayout::item_tokens(const CodeSeq& id) const {
  require(static_cast<int>(id.codes.size()) == layers,
          "vocab: semantic ID layer count mismatch");
  std::vector<int> out;
  out.reserve(static_cast<size_t>(layers) + 1);
  for (int l = 0; l < layers; ++l) {
    out.push_back(code_token(l, id.codes[static_cast<size_t>(l)]));
  }
  out.push_back(disamb_token(id.disamb));
  return out;
}

int TokenizedSeq::valid_count() const {
  int n = 0;
  for (char m : mask) {
    n += m != 0;
  }
  return n;
}

TokenizedSeq tokenize_history(const std::vector<std::string>& items,
                              const SemanticIdMap& id_map, const VocabLayout& vocab,
                              int max_items) {
  require(max_items >= 1, "tokenize_history: max_items must be at least 1");
  const int per = vocab.tokens_per_item();
  TokenizedSeq seq;
  seq.tokens.assign(static_cast<size_t>(max_items * per), VocabLayout::kPad);
  seq.mask.assign(static_cast<size_t>(max_items * per), 0);

  const size_t keep = std::min(items.size(), static_cast<size_t>(max_items));
  const size_t first = items.size() - keep;
  size_t at = 0;
  for (size_t i = first; i < items.size(); ++i) {
    const auto it = id_map.find(items[i]);
    if (it == id_map.end()) {
      fail(strf("tokenize_history: item %s has no semantic ID", items[i].c_str()));
    }
    for (int tok : vocab.item_tokens(it->second)) {
      seq.tokens[at] = tok;
      seq.mask[at] = 1;
      ++at;
    }
  }
  return seq;
}

template <typename T>
void AttnWeights<T>::setup(int d) {
  wq.setup(d, d);
  wk.setup(d, d);
  wv.setup(d, d);
  wo.setup(d, d);
}

template <typename T>
void AttnWeights<T>::init(Rng& rng) {
  glorot_init(wq, rng);
  glorot_init(wk, rng);
  glorot_init(wv, rng);
  glorot_init(wo, rng);
}

template <typename T>
void AttnWeights<T>::collect(const std::string& prefix, NamedParams<T>& out) {
  out.emplace_back(prefix + ".wq", &wq);
  out.emplace_back(prefix + ".wk", &wk);
  out.emplace_back(prefix + ".wv", &wv);
  out.emplace_back(prefix + ".wo", &wo);
}

template <typename T>
void LayerNormAffine<T>::setup(int d) {
  g.setup(1, d);
  b.setup(1, d);
  g.value.setOnes();
}

template <typename T>
void LayerNormAffine<T>::collect(const std::string& prefix, NamedParams<T>& out) {
  out.emplace_back(prefix + ".g", &g);
  out.emplace_back(prefix + ".b", &b);
}

template <typename T>
SeqRec<T>::SeqRec(VocabLayout vocab, ModelConfig cfg)
    : vocab_(vocab), cfg_(cfg) {
  require(cfg_.d_model > 0 && cfg_.heads > 0, "model: d_model and heads must be positive");
  require(cfg_.d_model % cfg_.heads == 0, "model: d_model must divide evenly into heads");
  require(cfg_.enc_layers > 0 && cfg_.dec_layers > 0, "model: need at least one layer each");
  require(cfg_.max_items > 0, "model: max_items must be positive");

  const int d = cfg_.d_model;
  const int v = vocab_.vocab_size();
  tok_emb_.setup(v, d);
  pos_enc_.setup(enc_capacity(), d);
  pos_dec_.setup(vocab_.tokens_per_item() + 1, d);

  Rng emb_rng(Rng::derive(cfg_.seed, 10));
  normal_init(tok_emb_, emb_rng, 0.05);
  Rng pe_rng(Rng::derive(cfg_.seed, 11));
  normal_init(pos_enc_, pe_rng, 0.02);
  Rng pd_rng(Rng::derive(cfg_.seed, 12));
  normal_init(pos_dec_, pd_rng, 0.02);

  enc_.resize(static_cast<size_t>(cfg_.enc_layers));
  for (int i = 0; i < cfg_.enc_layers; ++i) {
    EncoderLayer<T>& l = enc_[static_cast<size_t>(i)];
    l.ln1.setup(d);
    l.ln2.setup(d);
    l.attn.setup(d);
    l.ffn.setup(d, cfg_.ffn, d);
    Rng r(Rng::derive(cfg_.seed, 20 + static_cast<uint64_t>(i)));
    l.attn.init(r);
    l.ffn.init(r);
  }
  dec_.resize(static_cast<size_t>(cfg_.dec_layers));
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    DecoderLayer<T>& l = dec_[static_cast<size_t>(i)];
    l.ln1.setup(d);
    l.ln2.setup(d);
    l.ln3.setup(d);
    l.self_attn.setup(d);
    l.cross_attn.setup(d);
    l.ffn.setup(d, cfg_.ffn, d);
    Rng r(Rng::derive(cfg_.seed, 40 + static_cast<uint64_t>(i)));
    l.self_attn.init(r);
    l.cross_attn.init(r);
    l.ffn.init(r);
  }
  enc_lnf_.setup(d);
  dec_lnf_.setup(d);
  head_w_.setup(d, v);
  head_b_.setup(1, v);
  Rng head_rng(Rng::derive(cfg_.seed, 60));
  glorot_init(head_w_, head_rng);
  proj_.setup(d, d, cfg_.d_code);
  Rng proj_rng(Rng::derive(cfg_.seed, 61));
  proj_.init(proj_rng);
}

template <typename T>
MatX<T> SeqRec<T>::embed_(const std::vector<int>& tokens, const Parameter<T>& pos) const {
  MatX<T> out(static_cast<Eigen::Index>(tokens.size()), cfg_.d_model);
  for (size_t i = 0; i < tokens.size(); ++i) {
    require(tokens[i] >= 0 && tokens[i] < vocab_.vocab_size(),
            strf("model: token %d outside vocabulary", tokens[i]));
    out.row(static_cast<Eigen::Index>(i)) =
        tok_emb_.value.row(tokens[i]) + pos.value.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

template <typename T>
MatX<T> SeqRec<T>::ln_(const LayerNormAffine<T>& ln, const MatX<T>& x) const {
  MatX<T> y(x.rows(), x.cols());
  const T n = static_cast<T>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().sum() / n;
    y.row(i) = (x.row(i).array() - mu) / std::sqrt(var + static_cast<T>(kLnEps));
  }
  y.array().rowwise() *= ln.g.value.row(0).array();
  y.rowwise() += ln.b.value.row(0);
  return y;
}

template <typename T>
MatX<T> SeqRec<T>::attend_(const AttnWeights<T>& w, const MatX<T>& q_in,
                           const MatX<T>& k_in, const MatX<T>& bias_row,
                           const MatX<T>* causal) const {
  const int dh = cfg_.d_model / cfg_.heads;
  const T inv = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
  const MatX<T> q = q_in * w.wq.value;
  const MatX<T> k = k_in * w.wk.value;
  const MatX<T> v = k_in * w.wv.value;
  MatX<T> out(q_in.rows(), cfg_.d_model);
  for (int h = 0; h < cfg_.heads; ++h) {
    MatX<T> scores =
        (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * inv;
    scores.rowwise() += bias_row.row(0);
    if (causal != nullptr) {
      scores += *causal;
    }
    softmax_rows_inplace(scores);
    out.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
  }
  return out * w.wo.value;
}

template <typename T>
MatX<T> SeqRec<T>::encode_rows_(const MatX<T>& emb, const MatX<T>& bias_row) const {
  MatX<T> x = emb;
  for (const EncoderLayer<T>& l : enc_) {
    const MatX<T> h = ln_(l.ln1, x);
    x += attend_(l.attn, h, h, bias_row, nullptr);
    x += l.ffn.forward(ln_(l.ln2, x));
  }
  return ln_(enc_lnf_, x);
}

template <typename T>
MatX<T> SeqRec<T>::decode_rows_(const MatX<T>& emb, const MatX<T>& enc_states,
                                const MatX<T>& enc_bias_row) const {
  const int n = static_cast<int>(emb.rows());
  const MatX<T> causal = causal_bias<T>(n);
  const MatX<T> self_bias = MatX<T>::Zero(1, n);
  MatX<T> x = emb;
  for (const DecoderLayer<T>& l : dec_) {
    MatX<T> h = ln_(l.ln1, x);
    x += attend_(l.self_attn, h, h, self_bias, &causal);
    h = ln_(l.ln2, x);
    x += attend_(l.cross_attn, h, enc_states, enc_bias_row, nullptr);
    x += l.ffn.forward(ln_(l.ln3, x));
  }
  x = ln_(dec_lnf_, x);
  return ((x * head_w_.value).rowwise() + head_b_.value.row(0));
}

template <typename T>
typename SeqRec<T>::EncodedHistory SeqRec<T>::encode_history(const TokenizedSeq& x) const {
  require(x.capacity() == enc_capacity(),
          strf("encode_history: expected %d positions, got %d", enc_capacity(),
               x.capacity()));
  EncodedHistory out;
  out.mask = x.mask;
  out.states = encode_rows_(embed_(x.tokens, pos_enc_), mask_bias_row<T>(x.mask));
  return out;
}

template <typename T>
MatX<T> SeqRec<T>::pool_history(const EncodedHistory& enc) const {
  int n = 0;
  MatX<T> sum = MatX<T>::Zero(1, cfg_.d_model);
  for (size_t i = 0; i < enc.mask.size(); ++i) {
    if (enc.mask[i]) {
      sum.row(0) += enc.states.row(static_cast<Eigen::Index>(i));
      ++n;
    }
  }
  require(n > 0, "pool_history: history is all padding");
  return sum / static_cast<T>(n);
}

template <typename T>
MatX<T> SeqRec<T>::project_to_codespace(const MatX<T>& pooled) const {
  return proj_.forward(pooled);
}

template <typename T>
MatX<T> SeqRec<T>::decoder_logits(const EncodedHistory& enc,
                                  const std::vector<int>& dec_input) const {
  require(!dec_input.empty(), "decoder_logits: empty decoder input");
  require(static_cast<int>(dec_input.size()) <= vocab_.tokens_per_item() + 1,
          "decoder_logits: input longer than one item's token budget");
  return decode_rows_(embed_(dec_input, pos_dec_), enc.states,
                      mask_bias_row<T>(enc.mask));
}

template <typename T>
MatX<T> SeqRec<T>::next_token_logits(const EncodedHistory& enc,
                                     const std::vector<int>& prefix) const {
  std::vector<int> dec_input;
  dec_input.reserve(prefix.size() + 1);
  dec_input.push_back(VocabLayout::kBos);
  dec_input.insert(dec_input.end(), prefix.begin(), prefix.end());
  const MatX<T> logits = decoder_logits(enc, dec_input);
  return logits.bottomRows(1);
}

template <typename T>
T SeqRec<T>::rec_loss_value(const TokenizedSeq& x, const std::vector<int>& target) const {
  require(!target.empty(), "rec_loss: empty target");
  const EncodedHistory enc = encode_history(x);
  std::vector<int> dec_input;
  dec_input.reserve(target.size());
  dec_input.push_back(VocabLayout::kBos);
  dec_input.insert(dec_input.end(), target.begin(), target.end() - 1);
  const MatX<T> logits = decoder_logits(enc, dec_input);
  T loss = T(0);
  for (size_t i = 0; i < target.size(); ++i) {
    const auto row = logits.row(static_cast<Eigen::Index>(i)).array();
    const T m = row.maxCoeff();
    const T lse = m + std::log((row - m).exp().sum());
    loss += lse - logits(static_cast<Eigen::Index>(i), target[i]);
  }
  return loss;
}

template <typename T>
typename SeqRec<T>::Var SeqRec<T>::t_ln_(Tape<T>& t, LayerNormAffine<T>& ln, Var x) {
  return t.add_row(t.mul_row(t.layer_norm_rows(x, static_cast<T>(kLnEps)), t.param(ln.g)),
                   t.param(ln.b));
}

template <typename T>
typename SeqRec<T>::Var SeqRec<T>::t_attend_(Tape<T>& t, AttnWeights<T>& w, Var q_in,
                                             Var k_in, Var bias_row, Var causal) {
  const int dh = cfg_.d_model / cfg_.heads;
  const T inv = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
  const Var q = t.matmul(q_in, t.param(w.wq));
  const Var k = t.matmul(k_in, t.param(w.wk));
  const Var v = t.matmul(k_in, t.param(w.wv));
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    const Var qs = t.slice_cols(q, h * dh, dh);
    const Var ks = t.slice_cols(k, h * dh, dh);
    const Var vs = t.slice_cols(v, h * dh, dh);
    Var scores = t.add_row(t.scale(t.matmul_nt(qs, ks), inv), bias_row);
    if (causal.valid()) {
      scores = t.add(scores, causal);
    }
    heads.push_back(t.matmul(t.softmax_rows(scores), vs));
  }
  return t.matmul(t.concat_cols(heads), t.param(w.wo));
}

template <typename T>
typename SeqRec<T>::BatchForward SeqRec<T>::forward_batch(
    Tape<T>& t, const std::vector<TokenizedSeq>& histories,
    const std::vector<std::vector<int>>& targets, bool need_projection) {
  const int b = static_cast<int>(histories.size());
  require(b > 0, "forward_batch: empty batch");
  require(targets.size() == histories.size(),
          "forward_batch: history/target count mismatch");
  const int cap = enc_capacity();
  const int n = vocab_.tokens_per_item();

  // ---- encoder over all histories, concatenated along rows ----
  std::vector<int> flat_tokens, flat_pos;
  flat_tokens.reserve(static_cast<size_t>(b * cap));
  flat_pos.reserve(static_cast<size_t>(b * cap));
  std::vector<MatX<T>> bias_rows(static_cast<size_t>(b));
  for (int e = 0; e < b; ++e) {
    const TokenizedSeq& h = histories[static_cast<size_t>(e)];
    require(h.capacity() == cap, "forward_batch: history capacity mismatch");
    flat_tokens.insert(flat_tokens.end(), h.tokens.begin(), h.tokens.end());
    for (int p = 0; p < cap; ++p) {
      flat_pos.push_back(p);
    }
    bias_rows[static_cast<size_t>(e)] = mask_bias_row<T>(h.mask);
  }
  Var x = t.add(t.gather_rows(t.param(tok_emb_), flat_tokens),
                t.gather_rows(t.param(pos_enc_), flat_pos));
  std::vector<Var> bias_vars(static_cast<size_t>(b));
  for (int e = 0; e < b; ++e) {
    bias_vars[static_cast<size_t>(e)] = t.constant(bias_rows[static_cast<size_t>(e)]);
  }
  const Var no_causal{};
  for (EncoderLayer<T>& l : enc_) {
    const Var h = t_ln_(t, l.ln1, x);
    std::vector<Var> blocks;
    blocks.reserve(static_cast<size_t>(b));
    for (int e = 0; e < b; ++e) {
      const Var hb = t.slice_rows(h, e * cap, cap);
      blocks.push_back(
          t_attend_(t, l.attn, hb, hb, bias_vars[static_cast<size_t>(e)], no_causal));
    }
    x = t.add(x, t.concat_rows(blocks));
    x = t.add(x, l.ffn.forward(t, t_ln_(t, l.ln2, x)));
  }
  const Var enc_final = t_ln_(t, enc_lnf_, x);
  std::vector<Var> enc_blocks(static_cast<size_t>(b));
  for (int e = 0; e < b; ++e) {
    enc_blocks[static_cast<size_t>(e)] = t.slice_rows(enc_final, e * cap, cap);
  }

  // ---- decoder, teacher-forced on the L+1 target tokens ----
  std::vector<int> dec_tokens, dec_pos;
  dec_tokens.reserve(static_cast<size_t>(b * n));
  dec_pos.reserve(static_cast<size_t>(b * n));
  for (int e = 0; e < b; ++e) {
    const std::vector<int>& tgt = targets[static_cast<size_t>(e)];
    require(static_cast<int>(tgt.size()) == n,
            "forward_batch: target must be one full semantic ID");
    dec_tokens.push_back(VocabLayout::kBos);
    for (int i = 0; i + 1 < n; ++i) {
      dec_tokens.push_back(tgt[static_cast<size_t>(i)]);
    }
    for (int p = 0; p < n; ++p) {
      dec_pos.push_back(p);
    }
  }
  Var y = t.add(t.gather_rows(t.param(tok_emb_), dec_tokens),
                t.gather_rows(t.param(pos_dec_), dec_pos));
  const Var causal = t.constant(causal_bias<T>(n));
  const Var self_bias = t.constant(MatX<T>::Zero(1, n));
  for (DecoderLayer<T>& l : dec_) {
    Var h = t_ln_(t, l.ln1, y);
    std::vector<Var> blocks;
    blocks.reserve(static_cast<size_t>(b));
    for (int e = 0; e < b; ++e) {
      const Var hb = t.slice_rows(h, e * n, n);
      blocks.push_back(t_attend_(t, l.self_attn, hb, hb, self_bias, causal));
    }
    y = t.add(y, t.concat_rows(blocks));
    h = t_ln_(t, l.ln2, y);
    blocks.clear();
    for (int e = 0; e < b; ++e) {
      const Var hb = t.slice_rows(h, e * n, n);
      blocks.push_back(t_attend_(t, l.cross_attn, hb, enc_blocks[static_cast<size_t>(e)],
                                 bias_vars[static_cast<size_t>(e)], no_causal));
    }
    y = t.add(y, t.concat_rows(blocks));
    y = t.add(y, l.ffn.forward(t, t_ln_(t, l.ln3, y)));
  }
  y = t_ln_(t, dec_lnf_, y);
  const Var logits = t.add_row(t.matmul(y, t.param(head_w_)), t.param(head_b_));
  const Var lsm = t.log_softmax_rows(logits);

  MatX<T> onehot = MatX<T>::Zero(b * n, vocab_.vocab_size());
  for (int e = 0; e < b; ++e) {
    for (int i = 0; i < n; ++i) {
      onehot(e * n + i, targets[static_cast<size_t>(e)][static_cast<size_t>(i)]) = T(1);
    }
  }
  const Var picked = t.mul(lsm, t.constant(std::move(onehot)));

  BatchForward out;
  out.loss_mean = t.scale(t.sum(picked), T(-1) / static_cast<T>(b));
  out.per_example.assign(static_cast<size_t>(b), T(0));
  const MatX<T>& lsm_v = t.val(lsm);
  for (int e = 0; e < b; ++e) {
    T s = T(0);
    for (int i = 0; i < n; ++i) {
      s -= lsm_v(e * n + i, targets[static_cast<size_t>(e)][static_cast<size_t>(i)]);
    }
    out.per_example[static_cast<size_t>(e)] = s;
  }

  if (need_projection) {
    std::vector<Var> pooled(static_cast<size_t>(b));
    for (int e = 0; e < b; ++e) {
      const TokenizedSeq& h = histories[static_cast<size_t>(e)];
      const int valid = h.valid_count();
      require(valid > 0, "forward_batch: cannot pool an all-padding history");
      MatX<T> w = MatX<T>::Zero(1, cap);
      for (int p = 0; p < cap; ++p) {
        if (h.mask[static_cast<size_t>(p)]) {
          w(0, p) = T(1) / static_cast<T>(valid);
        }
      }
      pooled[static_cast<size_t>(e)] =
          t.matmul(t.constant(std::move(w)), enc_blocks[static_cast<size_t>(e)]);
    }
    out.projected = proj_.forward(t, t.concat_rows(pooled));
  }
  return out;
}

template <typename T>
NamedParams<T> SeqRec<T>::named_params() {
  NamedParams<T> out;
  out.emplace_back("rec.tok_emb", &tok_emb_);
  out.emplace_back("rec.pos_enc", &pos_enc_);
  out.emplace_back("rec.pos_dec", &pos_dec_);
  for (size_t i = 0; i < enc_.size(); ++i) {
    const std::string p = strf("rec.enc.%zu", i);
    enc_[i].ln1.collect(p + ".ln1", out);
    enc_[i].attn.collect(p + ".attn", out);
    enc_[i].ln2.collect(p + ".ln2", out);
    enc_[i].ffn.collect(p + ".ffn", out);
  }
  for (size_t i = 0; i < dec_.size(); ++i) {
    const std::string p = strf("rec.dec.%zu", i);
    dec_[i].ln1.collect(p + ".ln1", out);
    dec_[i].self_attn.collect(p + ".self", out);
    dec_[i].ln2.collect(p + ".ln2", out);
    dec_[i].cross_attn.collect(p + ".cross", out);
    dec_[i].ln3.collect(p + ".ln3", out);
    dec_[i].ffn.collect(p + ".ffn", out);
  }
  enc_lnf_.collect("rec.enc_lnf", out);
  dec_lnf_.collect("rec.dec_lnf", out);
  out.emplace_back("rec.head_w", &head_w_);
  out.emplace_back("rec.head_b", &head_b_);
  proj_.collect("rec.proj", out);
  return out;
}

template struct AttnWeights<float>;
template struct AttnWeights<double>;
template struct LayerNormAffine<float>;
template struct LayerNormAffine<double>;
template class SeqRec<float>;
template class SeqRec<double>;

}  // namespace sodarec
