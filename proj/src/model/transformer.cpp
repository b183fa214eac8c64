#include "canids/model/transformer.hpp"

#include <algorithm>

namespace canids::model {

using nn::Mat;
using text::Arch;
using text::TokenSequence;
using text::Vocab;

namespace {

Mat gather_rows(nn::ConstRef x, const std::vector<std::size_t>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

void scatter_add(Mat& dst, const std::vector<std::size_t>& rows, nn::ConstRef src) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    dst.row(static_cast<Eigen::Index>(rows[i])) += src.row(static_cast<Eigen::Index>(i));
}

// Inverted dropout; keep receives the scaled mask when dropout is active.
void dropout(Mat& m, double p, const nn::ForwardContext& ctx, Mat* keep) {
  if (!ctx.train || p <= 0.0) return;
  if (!ctx.rng) throw std::logic_error("train-mode dropout needs an rng");
  Mat mask(m.rows(), m.cols());
  const double inv = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = ctx.rng->bernoulli(p) ? 0.0 : inv;
  m.array() *= mask.array();
  if (keep) *keep = std::move(mask);
}

void dropout_backward(Mat& d, const Mat& keep) {
  if (keep.size() > 0) d.array() *= keep.array();
}

QuerySet all_queries(const std::vector<Segment>& segs) {
  QuerySet qs;
  for (const auto& s : segs) {
    qs.start.push_back(qs.rows.size());
    qs.count.push_back(s.length);
    for (std::size_t p = 0; p < s.length; ++p) {
      qs.rows.push_back(s.offset + p);
      qs.positions.push_back(p);
    }
  }
  return qs;
}

QuerySet pooled_queries(const std::vector<Segment>& segs) {
  QuerySet qs;
  for (const auto& s : segs) {
    qs.start.push_back(qs.rows.size());
    qs.count.push_back(1);
    qs.rows.push_back(s.offset + s.pool);
    qs.positions.push_back(s.pool);
  }
  return qs;
}

Mat randn(std::size_t rows, std::size_t cols, Rng& rng, double std) {
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, std);
  return m;
}

}  // namespace

std::size_t argmax(std::span<const double> probs) {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

TransformerModel::TransformerModel(const ModelConfig& config)
    : config_(config), tokenizer_(config.arch, config.max_len, config.text) {
  config_.validate();
  if (tokenizer_.vocab().size() != config_.vocab_size)
    throw ModelError("vocab_size " + std::to_string(config_.vocab_size) + " does not match the vocabulary (" +
                     std::to_string(tokenizer_.vocab().size()) + ")");
  const bool enc = config_.arch == Arch::Encoder;
  const std::size_t d = config_.d_model;
  const double std = config_.init_std;
  Rng rng(Rng::derive(config_.seed, 0x10de1));

  tokens_ = store_.add("embed.tokens", nn::Tensor::from_matrix(randn(config_.vocab_size, d, rng, std)));
  if (enc) {
    positions_ = store_.add("embed.positions", nn::Tensor::from_matrix(randn(config_.max_len, d, rng, std)));
    embed_norm_ = nn::make_norm(store_, "embed.norm", d, nn::NormKind::LayerNorm, config_.norm_eps);
  }
  const auto norm_kind = enc ? nn::NormKind::LayerNorm : nn::NormKind::RmsNorm;
  const auto ffn_kind = enc ? nn::FfnKind::GeluMlp : nn::FfnKind::SwiGlu;
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    Block b;
    b.q = nn::make_linear(store_, p + "attn.q", d, d, enc, rng, std);
    b.k = nn::make_linear(store_, p + "attn.k", d, config_.kv_dim(), enc, rng, std);
    b.v = nn::make_linear(store_, p + "attn.v", d, config_.kv_dim(), enc, rng, std);
    b.o = nn::make_linear(store_, p + "attn.o", d, d, enc, rng, std);
    b.norm1 = nn::make_norm(store_, p + "norm1", d, norm_kind, config_.norm_eps);
    b.ffn = nn::make_ffn(store_, p + "ffn", ffn_kind, d, config_.ffn_hidden(), rng, std);
    b.norm2 = nn::make_norm(store_, p + "norm2", d, norm_kind, config_.norm_eps);
    blocks_.push_back(std::move(b));
  }
  if (!enc) final_norm_ = nn::make_norm(store_, "final_norm", d, nn::NormKind::RmsNorm, config_.norm_eps);
  head_hidden_ = nn::make_linear(store_, "head.hidden", d, config_.head_width(), true, rng, std);
  head_out_ = nn::make_linear(store_, "head.out", config_.head_width(), config_.n_classes, true, rng, std);
}

Mat TransformerModel::run(std::span<const TokenSequence> batch, const nn::ForwardContext& ctx, Tape* tape) const {
  const bool enc = config_.arch == Arch::Encoder;
  const text::TokenId opener = enc ? Vocab::kCls : Vocab::kBos;
  const text::TokenId closer = enc ? Vocab::kSep : Vocab::kEos;
  const int n_heads = static_cast<int>(config_.n_heads);
  const int n_kv = static_cast<int>(config_.n_kv_heads);

  std::vector<Segment> segs;
  std::vector<text::TokenId> ids;
  std::vector<std::size_t> positions;
  segs.reserve(batch.size());
  for (const auto& seq : batch) {
    if (seq.length < 2 || seq.length > config_.max_len || seq.ids.size() < seq.length)
      throw ModelError("sequence length outside [2, max_len]");
    if (seq.ids[0] != opener || seq.ids[seq.length - 1] != closer)
      throw ModelError(std::string("sequence was not tokenized for the ") + std::string(text::arch_name(config_.arch)));
    const std::size_t expected_pool = enc ? 0 : seq.length - 1;
    if (seq.pool_index != expected_pool) throw ModelError("pooling index does not match the architecture");
    segs.push_back({ids.size(), seq.length, seq.pool_index});
    for (std::size_t p = 0; p < seq.length; ++p) {
      const auto id = seq.ids[p];
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) throw ModelError("token id out of range");
      ids.push_back(id);
      positions.push_back(p);
    }
  }
  if (segs.empty()) return Mat(0, static_cast<Eigen::Index>(config_.d_model));

  const auto tok = store_.value(tokens_).mat();
  Mat x(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(config_.d_model));
  for (std::size_t r = 0; r < ids.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = tok.row(ids[r]);
  if (enc) {
    const auto pos = store_.value(*positions_).mat();
    for (std::size_t r = 0; r < ids.size(); ++r)
      x.row(static_cast<Eigen::Index>(r)) += pos.row(static_cast<Eigen::Index>(positions[r]));
    x = nn::norm_forward(store_, *embed_norm_, x, tape ? &tape->embed_norm : nullptr);
  }
  if (tape) tape->blocks.assign(blocks_.size(), BlockTape());

  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    const bool last = l + 1 == blocks_.size();
    QuerySet qs = last ? pooled_queries(segs) : all_queries(segs);
    BlockTape local;
    BlockTape& bt = tape ? tape->blocks[l] : local;
    const bool keep = tape != nullptr;

    Mat kv_src, q_src;
    if (enc) {
      q_src = last ? gather_rows(x, qs.rows) : x;
      kv_src = x;
    } else {
      kv_src = nn::norm_forward(store_, b.norm1, x, keep ? &bt.n1 : nullptr);
      q_src = last ? gather_rows(kv_src, qs.rows) : kv_src;
    }
    Mat q = nn::linear_forward(store_, b.q, q_src, ctx, keep ? &bt.cq : nullptr);
    Mat k = nn::linear_forward(store_, b.k, kv_src, ctx, keep ? &bt.ck : nullptr);
    Mat v = nn::linear_forward(store_, b.v, kv_src, ctx, keep ? &bt.cv : nullptr);
    if (!enc) {
      nn::rope_rows(q, n_heads, qs.positions, config_.rope_base);
      nn::rope_rows(k, n_kv, positions, config_.rope_base);
    }
    Mat attn(q.rows(), q.cols());
    if (keep) bt.attn.assign(segs.size(), nn::AttentionCache());
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const auto qs0 = static_cast<Eigen::Index>(qs.start[s]);
      const auto qn = static_cast<Eigen::Index>(qs.count[s]);
      const auto ko = static_cast<Eigen::Index>(segs[s].offset);
      const auto kn = static_cast<Eigen::Index>(segs[s].length);
      nn::AttentionMask mask;
      mask.causal = !enc;
      mask.query_offset = qs.positions[qs.start[s]];
      mask.key_length = segs[s].length;
      attn.middleRows(qs0, qn) = nn::attention(q.middleRows(qs0, qn), k.middleRows(ko, kn), v.middleRows(ko, kn),
                                               mask, n_heads, n_kv, keep ? &bt.attn[s] : nullptr);
    }
    Mat a = nn::linear_forward(store_, b.o, attn, ctx, keep ? &bt.co : nullptr);
    dropout(a, config_.dropout, ctx, keep ? &bt.drop_attn : nullptr);

    if (enc) {
      Mat h = nn::norm_forward(store_, b.norm1, q_src + a, keep ? &bt.n1 : nullptr);
      Mat f = nn::ffn_forward(store_, b.ffn, h, ctx, keep ? &bt.ffn : nullptr);
      dropout(f, config_.dropout, ctx, keep ? &bt.drop_ffn : nullptr);
      x = nn::norm_forward(store_, b.norm2, h + f, keep ? &bt.n2 : nullptr);
    } else {
      Mat h = (last ? gather_rows(x, qs.rows) : x) + a;
      Mat f = nn::ffn_forward(store_, b.ffn, nn::norm_forward(store_, b.norm2, h, keep ? &bt.n2 : nullptr), ctx,
                              keep ? &bt.ffn : nullptr);
      dropout(f, config_.dropout, ctx, keep ? &bt.drop_ffn : nullptr);
      x = h + f;
    }
    if (keep) {
      bt.q = std::move(q);
      bt.k = std::move(k);
      bt.v = std::move(v);
      bt.queries = std::move(qs);
    }
  }
  if (!enc) x = nn::norm_forward(store_, *final_norm_, x, tape ? &tape->final_norm : nullptr);
  if (tape) {
    tape->segments = std::move(segs);
    tape->ids = std::move(ids);
    tape->positions = std::move(positions);
  }
  return x;
}

Mat TransformerModel::head_forward(nn::ConstRef pooled, const nn::ForwardContext& ctx, Tape* tape) const {
  const auto act = config_.arch == Arch::Encoder ? nn::Activation::Tanh : nn::Activation::Silu;
  Mat pre = nn::linear_forward(store_, head_hidden_, pooled, ctx, tape ? &tape->head1 : nullptr);
  Mat out = nn::linear_forward(store_, head_out_, nn::activate(pre, act), ctx, tape ? &tape->head2 : nullptr);
  if (tape) tape->head_pre = std::move(pre);
  return out;
}

Mat TransformerModel::forward(std::span<const TokenSequence> batch, const nn::ForwardContext& ctx) const {
  return run(batch, ctx, nullptr);
}

Mat TransformerModel::logits(nn::ConstRef pooled, const nn::ForwardContext& ctx) const {
  return head_forward(pooled, ctx, nullptr);
}

Mat TransformerModel::classify(nn::ConstRef pooled) const { return nn::softmax(logits(pooled)); }

Mat TransformerModel::forward_train(std::span<const TokenSequence> batch, const nn::ForwardContext& ctx,
                                    Tape& tape) const {
  tape = Tape();
  const Mat pooled = run(batch, ctx, &tape);
  return head_forward(pooled, ctx, &tape);
}

void TransformerModel::backward(const Tape& tape, nn::ConstRef dlogits) {
  const bool enc = config_.arch == Arch::Encoder;
  const auto act = enc ? nn::Activation::Tanh : nn::Activation::Silu;
  const int n_heads = static_cast<int>(config_.n_heads);
  const int n_kv = static_cast<int>(config_.n_kv_heads);
  if (tape.blocks.size() != blocks_.size()) throw ModelError("backward: tape does not match the model");

  const Mat dact = nn::linear_backward(store_, head_out_, tape.head2, dlogits);
  Mat dx = nn::linear_backward(store_, head_hidden_, tape.head1, nn::activate_backward(tape.head_pre, dact, act));
  if (!enc) dx = nn::norm_backward(store_, *final_norm_, tape.final_norm, dx);

  const auto total_rows = static_cast<Eigen::Index>(tape.ids.size());
  for (std::size_t l = blocks_.size(); l-- > 0;) {
    const Block& b = blocks_[l];
    const BlockTape& bt = tape.blocks[l];
    const QuerySet& qs = bt.queries;

    Mat dxq, da;
    if (enc) {
      Mat du = nn::norm_backward(store_, b.norm2, bt.n2, dx);
      Mat df = du;
      dropout_backward(df, bt.drop_ffn);
      Mat dh = du + nn::ffn_backward(store_, b.ffn, bt.ffn, df);
      dxq = nn::norm_backward(store_, b.norm1, bt.n1, dh);
      da = dxq;
    } else {
      Mat df = dx;
      dropout_backward(df, bt.drop_ffn);
      dxq = dx + nn::norm_backward(store_, b.norm2, bt.n2, nn::ffn_backward(store_, b.ffn, bt.ffn, df));
      da = dxq;
    }
    dropout_backward(da, bt.drop_attn);
    const Mat dattn = nn::linear_backward(store_, b.o, bt.co, da);

    Mat dq = Mat::Zero(bt.q.rows(), bt.q.cols());
    Mat dk = Mat::Zero(bt.k.rows(), bt.k.cols());
    Mat dv = Mat::Zero(bt.v.rows(), bt.v.cols());
    for (std::size_t s = 0; s < tape.segments.size(); ++s) {
      const auto qs0 = static_cast<Eigen::Index>(qs.start[s]);
      const auto qn = static_cast<Eigen::Index>(qs.count[s]);
      const auto ko = static_cast<Eigen::Index>(tape.segments[s].offset);
      const auto kn = static_cast<Eigen::Index>(tape.segments[s].length);
      nn::AttentionGrads g = nn::attention_backward(bt.q.middleRows(qs0, qn), bt.k.middleRows(ko, kn),
                                                    bt.v.middleRows(ko, kn), bt.attn[s],
                                                    dattn.middleRows(qs0, qn), n_heads, n_kv);
      dq.middleRows(qs0, qn) = g.dq;
      dk.middleRows(ko, kn) = g.dk;
      dv.middleRows(ko, kn) = g.dv;
    }
    if (!enc) {
      nn::rope_rows(dq, n_heads, qs.positions, config_.rope_base, /*inverse=*/true);
      nn::rope_rows(dk, n_kv, tape.positions, config_.rope_base, /*inverse=*/true);
    }
    const Mat dq_src = nn::linear_backward(store_, b.q, bt.cq, dq);
    Mat dkv_src = nn::linear_backward(store_, b.k, bt.ck, dk);
    dkv_src += nn::linear_backward(store_, b.v, bt.cv, dv);

    const bool full = static_cast<Eigen::Index>(qs.rows.size()) == total_rows && bt.q.rows() == total_rows &&
                      l + 1 != blocks_.size();
    if (enc) {
      Mat next = std::move(dkv_src);
      if (full) {
        next += dq_src + dxq;
      } else {
        scatter_add(next, qs.rows, dq_src + dxq);
      }
      dx = std::move(next);
    } else {
      Mat dnorm = std::move(dkv_src);
      if (full) dnorm += dq_src; else scatter_add(dnorm, qs.rows, dq_src);
      Mat next = nn::norm_backward(store_, b.norm1, bt.n1, dnorm);
      if (full) next += dxq; else scatter_add(next, qs.rows, dxq);
      dx = std::move(next);
    }
  }

  if (enc) {
    dx = nn::norm_backward(store_, *embed_norm_, tape.embed_norm, dx);
    if (!store_.frozen(*positions_)) {
      auto gpos = store_.grad(*positions_).mat();
      for (std::size_t r = 0; r < tape.positions.size(); ++r)
        gpos.row(static_cast<Eigen::Index>(tape.positions[r])) += dx.row(static_cast<Eigen::Index>(r));
    }
  }
  if (!store_.frozen(tokens_)) {
    auto gtok = store_.grad(tokens_).mat();
    for (std::size_t r = 0; r < tape.ids.size(); ++r) gtok.row(tape.ids[r]) += dx.row(static_cast<Eigen::Index>(r));
  }
}

std::vector<Prediction> TransformerModel::predict_batch(std::span<const TokenSequence> batch) const {
  const Mat probs = classify(forward(batch));
  std::vector<Prediction> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& p = out[i];
    p.probabilities.assign(probs.row(static_cast<Eigen::Index>(i)).data(),
                           probs.row(static_cast<Eigen::Index>(i)).data() + probs.cols());
    const std::size_t best = argmax(p.probabilities);
    p.label = best < can::kNumClasses ? can::class_from_index(best) : can::AttackClass::Normal;
  }
  return out;
}

Prediction TransformerModel::predict(const can::CanFrame& frame) const {
  const TokenSequence seq = tokenizer_.encode(can::validate_frame(frame));
  return predict_batch(std::span<const TokenSequence>(&seq, 1)).front();
}

std::vector<nn::Linear*> TransformerModel::linears() {
  std::vector<nn::Linear*> out;
  for (auto& b : blocks_) {
    for (nn::Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.ffn.w1}) out.push_back(l);
    if (b.ffn.w3) out.push_back(&*b.ffn.w3);
    out.push_back(&b.ffn.w2);
  }
  out.push_back(&head_hidden_);
  out.push_back(&head_out_);
  return out;
}

std::vector<const nn::Linear*> TransformerModel::linears() const {
  auto mut = const_cast<TransformerModel*>(this)->linears();
  return {mut.begin(), mut.end()};
}

nn::Linear& TransformerModel::linear(const std::string& name) {
  for (nn::Linear* l : linears())
    if (l->name == name) return *l;
  throw ModelError("no linear layer named " + name);
}

void TransformerModel::reinit_head(std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x4ead));
  for (nn::Linear* l : {&head_hidden_, &head_out_}) {
    for (auto& v : store_[l->weight].value.values()) v = rng.normal(0.0, config_.init_std);
    if (l->bias) store_[*l->bias].value.fill(0.0);
  }
}

}  // namespace canids::model
