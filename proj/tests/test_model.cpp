#include <gtest/gtest.h>

#include "canids/model/checkpoint.hpp"
#include "canids/model/transformer.hpp"
#include "canids/nn/grad_check.hpp"
#include "support.hpp"

using namespace canids;
using model::ModelConfig;
using model::TransformerModel;
using text::Arch;

namespace {

ModelConfig small_config(Arch arch) {
  ModelConfig c;
  c.arch = arch;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_kv_heads = arch == Arch::Decoder ? 1 : 2;
  c.ffn_mult = 2;
  c.max_len = 28;
  c.init_std = 0.3;
  c.seed = 11;
  return c;
}

std::vector<text::TokenSequence> sample_batch(const TransformerModel& m) {
  std::vector<text::TokenSequence> out;
  const std::vector<std::pair<std::uint32_t, std::vector<std::uint8_t>>> frames = {
      {0x316, {0x05, 0x20}}, {0x000, {}}, {0x43f, {0x01, 0x45, 0x60}}};
  for (const auto& [id, bytes] : frames) {
    can::CanFrame f;
    f.can_id = id;
    f.dlc = static_cast<std::uint8_t>(bytes.size());
    for (auto b : bytes) f.data.push_back(b);
    out.push_back(m.tokenizer().encode(f));
  }
  return out;
}

// Linear functional of the logits: its gradient w.r.t. the logits is R.
void check_gradients(TransformerModel& m) {
  const auto batch = sample_batch(m);
  Rng rng(3);
  nn::Mat r(static_cast<Eigen::Index>(batch.size()), 5);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.normal();
  auto loss = [&] { return (m.logits(m.forward(batch)).array() * r.array()).sum(); };

  m.params().zero_grad();
  model::Tape tape;
  m.forward_train(batch, nn::ForwardContext::eval(), tape);
  m.backward(tape, r);
  const auto targets = nn::targets_from(m.params());
  const auto report = nn::grad_check(loss, targets);
  EXPECT_TRUE(report.passed) << report.summary();
}

}  // namespace

TEST(Model, EncoderGradientsMatchFiniteDifferences) {
  TransformerModel m(small_config(Arch::Encoder));
  check_gradients(m);
}

TEST(Model, DecoderGradientsMatchFiniteDifferences) {
  TransformerModel m(small_config(Arch::Decoder));
  check_gradients(m);
}

TEST(Model, ParameterCountMatchesClosedForm) {
  for (auto arch : {Arch::Encoder, Arch::Decoder}) {
    for (std::size_t kv : {1, 2}) {
      auto c = small_config(arch);
      c.n_kv_heads = kv;
      c.head_hidden = 5;
      const TransformerModel m(c);
      EXPECT_EQ(m.params().element_count(), model::expected_param_count(c));
    }
    ModelConfig def;
    def.arch = arch;
    EXPECT_EQ(TransformerModel(def).params().element_count(), model::expected_param_count(def));
  }
}

TEST(Model, ZeroHeadGivesUniformProbabilities) {
  for (auto arch : {Arch::Encoder, Arch::Decoder}) {
    TransformerModel m(small_config(arch));
    for (const auto* name : {"head.out"})
      for (auto& p : m.params().all())
        if (p.name.starts_with(name)) p.value.fill(0.0);
    const auto preds = m.predict_batch(sample_batch(m));
    for (const auto& p : preds) {
      for (double x : p.probabilities) EXPECT_NEAR(x, 0.2, 1e-15);
      EXPECT_EQ(p.label, can::AttackClass::Normal);  // tie → lowest index
    }
  }
}

TEST(Model, ClassifierHeadOracle) {
  auto c = small_config(Arch::Encoder);
  c.n_classes = 2;
  c.d_model = 2;
  c.n_heads = 1;
  c.n_kv_heads = 1;
  TransformerModel m(c);
  auto& ps = m.params();
  auto set = [&](const std::string& name, std::vector<double> v) {
    auto vals = ps[ps.find(name)].value.values();
    ASSERT_EQ(vals.size(), v.size());
    std::copy(v.begin(), v.end(), vals.begin());
  };
  set("head.hidden.weight", {1, 0, 0, 1});
  set("head.hidden.bias", {0, 0});
  set("head.out.weight", {1, 0, 0, 1});
  set("head.out.bias", {0, 0});
  const nn::Mat z = (nn::Mat(1, 2) << 1.0, 0.0).finished();
  const nn::Mat p = m.classify(z);
  const double a = std::exp(std::tanh(1.0)), b = 1.0;
  EXPECT_NEAR(p(0, 0), a / (a + b), 1e-12);
  EXPECT_NEAR(p(0, 1), b / (a + b), 1e-12);
}

TEST(Model, ArgmaxTiesGoToLowestIndex) {
  EXPECT_EQ(model::argmax(std::vector<double>{0.1, 0.4, 0.4, 0.1}), 1u);
  EXPECT_EQ(model::argmax(std::vector<double>{0.2, 0.2, 0.2}), 0u);
  EXPECT_EQ(model::argmax(std::vector<double>{0.0, 0.0, 1.0}), 2u);
}

TEST(Model, BatchCompanionsDoNotMatter) {
  Rng rng(4);
  for (auto arch : {Arch::Encoder, Arch::Decoder}) {
    TransformerModel m(small_config(arch));
    const auto batch = sample_batch(m);
    const nn::Mat together = m.forward(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const nn::Mat alone = m.forward(std::span(batch).subspan(i, 1));
      EXPECT_LE((alone.row(0) - together.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Model, PaddingContentIsIgnored) {
  for (auto arch : {Arch::Encoder, Arch::Decoder}) {
    TransformerModel m(small_config(arch));
    auto batch = sample_batch(m);
    const nn::Mat base = m.forward(batch);
    for (auto& s : batch)
      for (std::size_t i = s.length; i < s.ids.size(); ++i) s.ids[i] = 7;
    EXPECT_EQ(m.forward(batch), base);
  }
}

TEST(Model, PredictMatchesTokenizedPath) {
  TransformerModel m(small_config(Arch::Decoder));
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto f = fixture::random_frame(rng);
    const auto seq = m.tokenizer().encode(f);
    const auto a = m.predict(f);
    const auto b = m.predict_batch(std::span(&seq, 1))[0];
    EXPECT_EQ(a.probabilities, b.probabilities);
    EXPECT_EQ(a.label, b.label);
  }
}

TEST(Model, DecoderPoolsTheEosPosition) {
  TransformerModel m(small_config(Arch::Decoder));
  const auto batch = sample_batch(m);
  // Causality: the pooled [EOS] state sees every real token, so perturbing any
  // earlier token changes it, while tokens after it (padding) never do.
  const nn::Mat base = m.forward(batch);
  auto changed = batch;
  changed[0].ids[1] = m.tokenizer().vocab().id("7");
  EXPECT_NE(m.forward(changed).row(0), base.row(0));
  EXPECT_EQ(m.forward(changed).row(1), base.row(1));
}

TEST(Model, WrongArchitectureSequenceIsRejected) {
  TransformerModel enc(small_config(Arch::Encoder)), dec(small_config(Arch::Decoder));
  const auto enc_batch = sample_batch(enc);
  const auto dec_batch = sample_batch(dec);
  EXPECT_THROW(dec.forward(enc_batch), model::ModelError);
  EXPECT_THROW(enc.forward(dec_batch), model::ModelError);
  auto bad = enc_batch;
  bad[0].ids[2] = 1000;
  EXPECT_THROW(enc.forward(bad), model::ModelError);
}

TEST(Model, CheckpointRoundTripIsBitwise) {
  Rng rng(12);
  std::vector<can::CanFrame> frames;
  for (int i = 0; i < 100; ++i) frames.push_back(fixture::random_frame(rng));
  for (auto arch : {Arch::Encoder, Arch::Decoder}) {
    const TransformerModel m(small_config(arch));
    const auto dir = fixture::scratch_dir("ckpt");
    model::save_checkpoint(m, dir / "m.ckpt");
    const auto back = model::load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(back.config(), m.config());
    EXPECT_EQ(model::serialize_checkpoint(back), model::serialize_checkpoint(m));
    for (const auto& f : frames) EXPECT_EQ(back.predict(f).probabilities, m.predict(f).probabilities);
  }
}

TEST(Model, CheckpointErrorsAreTyped) {
  const TransformerModel m(small_config(Arch::Encoder));
  const std::string bytes = model::serialize_checkpoint(m);
  auto kind_of = [](std::string_view b) {
    try {
      model::deserialize_checkpoint(b);
    } catch (const model::CheckpointError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return model::CheckpointErrorKind::Io;
  };
  using K = model::CheckpointErrorKind;
  EXPECT_EQ(kind_of(bytes.substr(0, bytes.size() - 100)), K::Truncated);
  EXPECT_EQ(kind_of(""), K::Truncated);
  EXPECT_EQ(kind_of("GARBAGE\n" + bytes), K::BadMagic);
  std::string v2 = bytes;
  v2.replace(v2.find("CHECKPOINT 1"), 12, "CHECKPOINT 2");
  EXPECT_EQ(kind_of(v2), K::Version);
  std::string vocab = bytes;
  const auto at = vocab.find("vocab 1 ") + 8;
  vocab[at] = vocab[at] == '0' ? '1' : '0';
  EXPECT_EQ(kind_of(vocab), K::Vocab);
  EXPECT_THROW(model::load_checkpoint(fixture::scratch_dir("missing") / "none.ckpt"), model::CheckpointError);
}
