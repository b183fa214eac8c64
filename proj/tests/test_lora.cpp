#include <gtest/gtest.h>

#include "canids/lora/lora.hpp"
#include "canids/model/checkpoint.hpp"
#include "canids/nn/grad_check.hpp"
#include "canids/nn/layers.hpp"
#include "support.hpp"

using namespace canids;
using model::ModelConfig;
using model::TransformerModel;

namespace {

ModelConfig tiny(text::Arch arch) {
  ModelConfig c;
  c.arch = arch;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_kv_heads = arch == text::Arch::Decoder ? 1 : 2;
  c.ffn_mult = 2;
  c.max_len = 28;
  c.init_std = 0.2;
  c.seed = 5;
  return c;
}

lora::LoraConfig lcfg(std::size_t rank, std::vector<std::string> targets = lora::kDefaultTargets) {
  lora::LoraConfig c;
  c.rank = rank;
  c.targets = std::move(targets);
  c.dropout = 0.0;
  c.seed = 3;
  return c;
}

std::vector<can::CanFrame> frames(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<can::CanFrame> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(fixture::random_frame(rng));
  return out;
}

// Gives every adapter factor non-zero values so the update is visible.
void randomize_adapters(TransformerModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : m.params().all())
    if (p.name.ends_with(".lora_up") || p.name.ends_with(".lora_down"))
      for (auto& v : p.value.values()) v = 0.1 * rng.normal();
}

nn::Mat rmat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  nn::Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(Lora, FreshAdaptersLeaveOutputsBitwiseUnchanged) {
  for (auto arch : {text::Arch::Encoder, text::Arch::Decoder}) {
    const TransformerModel base(tiny(arch));
    TransformerModel adapted = base;
    lora::attach_adapters(adapted, lcfg(4));
    for (const auto& f : frames(50, 1)) EXPECT_EQ(adapted.predict(f).probabilities, base.predict(f).probabilities);
  }
}

TEST(Lora, AdapterShapesAndParameterCount) {
  nn::ParamStore store;
  Rng rng(1);
  auto layer = nn::make_linear(store, "w", 64, 64, false, rng, 0.02);
  const auto before = store.element_count();
  nn::attach_adapter(store, layer, 8, 16.0, 0.0, rng);
  EXPECT_EQ(store.element_count() - before, 1024u);
  const auto& up = store.value(layer.adapter->up);
  EXPECT_EQ(up.shape(), (std::vector<std::size_t>{64, 8}));
  for (double v : up.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(store.value(layer.adapter->down).shape(), (std::vector<std::size_t>{8, 64}));
  EXPECT_TRUE(store.contains("w.lora_up"));
  EXPECT_TRUE(store.contains("w.lora_down"));
}

TEST(Lora, InvalidAttachmentsAreRejected) {
  nn::ParamStore store;
  Rng rng(1);
  auto layer = nn::make_linear(store, "w", 6, 4, true, rng, 0.02);
  EXPECT_THROW(nn::attach_adapter(store, layer, 5, 8.0, 0.0, rng), lora::LoraError);
  EXPECT_THROW(nn::attach_adapter(store, layer, 0, 8.0, 0.0, rng), lora::LoraError);
  EXPECT_THROW(nn::attach_adapter(store, layer, 2, 0.0, 0.0, rng), lora::LoraError);
  EXPECT_THROW(nn::attach_adapter(store, layer, 2, 8.0, 1.0, rng), lora::LoraError);
  nn::attach_adapter(store, layer, 4, 8.0, 0.0, rng);
  EXPECT_THROW(nn::attach_adapter(store, layer, 4, 8.0, 0.0, rng), lora::LoraError);

  TransformerModel m(tiny(text::Arch::Encoder));
  lora::attach_adapters(m, lcfg(2));
  EXPECT_THROW(lora::attach_adapters(m, lcfg(2)), lora::LoraError);
  TransformerModel fresh(tiny(text::Arch::Encoder));
  EXPECT_THROW(lora::attach_adapters(fresh, lcfg(2, {"nothing.*"})), lora::LoraError);
  EXPECT_THROW(lora::attach_adapters(fresh, lcfg(2, {})), lora::LoraError);
  // The head is never a target even when the glob would match it.
  EXPECT_THROW(lora::attach_adapters(fresh, lcfg(2, {"head.*"})), lora::LoraError);
}

TEST(Lora, DenseOracleWithZeroBase) {
  nn::ParamStore store;
  Rng rng(2);
  auto layer = nn::make_linear(store, "w", 5, 3, false, rng, 0.02);
  store[layer.weight].value.fill(0.0);
  nn::attach_adapter(store, layer, 2, 2.0, 0.0, rng);  // alpha == rank: scale 1
  const nn::Mat u = rmat(rng, 3, 2), v = rmat(rng, 2, 5), x = rmat(rng, 4, 5);
  store[layer.adapter->up].value.mat() = u;
  store[layer.adapter->down].value.mat() = v;
  const nn::Mat y = nn::linear_forward(store, layer, x, nn::ForwardContext{});
  EXPECT_LE((y - x * (u * v).transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lora, FactorGradientsWithFrozenBase) {
  nn::ParamStore store;
  Rng rng(3);
  auto layer = nn::make_linear(store, "w", 6, 4, true, rng, 0.5);
  nn::attach_adapter(store, layer, 3, 12.0, 0.0, rng);
  for (auto& v : store[layer.adapter->up].value.values()) v = rng.normal();
  store[layer.weight].frozen = true;
  store[*layer.bias].frozen = true;
  const nn::Mat w0 = store.value(layer.weight).mat();
  const nn::Mat x = rmat(rng, 3, 6), r = rmat(rng, 3, 4);
  nn::LinearCache cache;
  nn::linear_forward(store, layer, x, nn::ForwardContext{}, &cache);
  store.zero_grad();
  nn::linear_backward(store, layer, cache, r);
  auto loss = [&] { return (nn::linear_forward(store, layer, x, nn::ForwardContext{}).array() * r.array()).sum(); };
  const auto targets = nn::targets_from(store);
  ASSERT_EQ(targets.size(), 2u);
  const auto rep = nn::grad_check(loss, targets);
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.summary();
  for (double g : store[layer.weight].grad.values()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(store.value(layer.weight).mat(), w0);
}

TEST(Lora, MergeMatchesAdaptedModel) {
  for (auto arch : {text::Arch::Encoder, text::Arch::Decoder}) {
    TransformerModel m(tiny(arch));
    lora::attach_adapters(m, lcfg(4));
    randomize_adapters(m, 9);
    const auto merged = lora::merge_adapters(m);
    EXPECT_EQ(merged.params().element_count(), model::expected_param_count(merged.config()));
    double worst = 0;
    for (const auto& f : frames(100, 2)) {
      const auto a = m.predict(f).probabilities, b = merged.predict(f).probabilities;
      for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    EXPECT_LE(worst, 1e-9);
    // The merged model is an ordinary checkpoint.
    const auto back = model::deserialize_checkpoint(model::serialize_checkpoint(merged));
    EXPECT_EQ(model::serialize_checkpoint(back), model::serialize_checkpoint(merged));
  }
}

TEST(Lora, MergingZeroAdaptersIsBitwiseIdentity) {
  const TransformerModel base(tiny(text::Arch::Encoder));
  TransformerModel m = base;
  lora::attach_adapters(m, lcfg(4));
  const auto merged = lora::merge_adapters(m);
  EXPECT_EQ(model::serialize_checkpoint(merged), model::serialize_checkpoint(base));
}

TEST(Lora, TrainableCountClosedForm) {
  const auto cfg = tiny(text::Arch::Decoder);
  TransformerModel m(cfg);
  const std::size_t r = 4;
  const auto names = lora::attach_adapters(m, lcfg(r));
  std::size_t expect = 0;
  for (const auto* l : std::as_const(m).linears()) {
    if (l->adapter) expect += r * (l->in + l->out);
    if (l->name.starts_with("head.")) expect += l->in * l->out + (l->bias ? l->out : 0);
  }
  // 2 layers x (q, k, v, o, w1, w3, w2).
  EXPECT_EQ(names.size(), 14u);
  const auto c = lora::count_trainable(m);
  EXPECT_EQ(c.trainable, expect);
  EXPECT_EQ(c.total, model::expected_param_count(cfg) + [&] {
    std::size_t a = 0;
    for (const auto* l : std::as_const(m).linears())
      if (l->adapter) a += r * (l->in + l->out);
    return a;
  }());
  for (const auto& p : m.params().all()) {
    const bool trainable = p.name.starts_with("head.") || p.name.find(".lora_") != std::string::npos;
    EXPECT_EQ(p.frozen, !trainable) << p.name;
  }
  EXPECT_NEAR(lora::fraction_of(40'000'000, 7'000'000'000).fraction, 0.0057, 1e-4);
}

TEST(Lora, GlobMatching) {
  EXPECT_TRUE(lora::glob_match("layers.*.attn.v", "layers.0.attn.v"));
  EXPECT_TRUE(lora::glob_match("layers.*.attn.*", "layers.12.attn.q"));
  EXPECT_FALSE(lora::glob_match("layers.*.attn.v", "layers.0.attn.o"));
  EXPECT_TRUE(lora::glob_match("layers.?.ffn.w1", "layers.3.ffn.w1"));
  EXPECT_FALSE(lora::glob_match("layers.?.ffn.w1", "layers.13.ffn.w1"));
}

TEST(Lora, AdapterFileRoundTripAndFingerprint) {
  const TransformerModel base(tiny(text::Arch::Encoder));
  TransformerModel m = base;
  lora::attach_adapters(m, lcfg(4, {"layers.*.attn.v"}));
  randomize_adapters(m, 4);
  m.reinit_head(77);
  const auto fp = model::checkpoint_fingerprint(base);
  const auto dir = fixture::scratch_dir("adapters");
  lora::save_adapters(m, fp, dir / "a.lora");
  const auto back = lora::load_adapters(base, dir / "a.lora");
  for (const auto& f : frames(30, 3)) EXPECT_EQ(back.predict(f).probabilities, m.predict(f).probabilities);
  EXPECT_EQ(model::serialize_checkpoint(back), model::serialize_checkpoint(m));

  TransformerModel other = base;
  other.reinit_head(5);
  try {
    lora::load_adapters(other, dir / "a.lora");
    ADD_FAILURE() << "fingerprint mismatch not detected";
  } catch (const model::CheckpointError& e) {
    EXPECT_EQ(e.kind(), model::CheckpointErrorKind::Config);
  }
}
