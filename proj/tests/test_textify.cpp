#include <gtest/gtest.h>

#include <set>

#include "canids/text/tokenizer.hpp"
#include "support.hpp"

using namespace canids;
using namespace canids::text;
using fixture::make_frame;

TEST(Textify, SerializeExamples) {
  EXPECT_EQ(serialize_frame(make_frame(0x316, {0x05, 0x21})), "ID 3 1 6 DLC 2 D 0 5 2 1");
  EXPECT_EQ(serialize_frame(make_frame(0x000, {})), "ID 0 0 0 DLC 0 D");
  TextOptions ts;
  ts.include_timestamp = true;
  EXPECT_EQ(serialize_frame(make_frame(0x7FF, {0xFF}, 0x1234), ts), "ID 7 f f DLC 1 D f f | 0 0 0 0 1 2 3 4");
}

TEST(Textify, EncoderTokenLayout) {
  const Tokenizer tok(Arch::Encoder, 9);
  const Vocab& v = tok.vocab();
  const auto seq = tok.tokenize("ID 0 0 0 DLC 0 D");
  const std::vector<TokenId> expect = {Vocab::kCls, v.id("ID"), v.id("0"), v.id("0"), v.id("0"),
                                       v.id("DLC"), v.id("0"), v.id("D"), Vocab::kSep};
  EXPECT_EQ(seq.ids, expect);
  EXPECT_EQ(seq.length, 9u);
  EXPECT_EQ(seq.pool_index, 0u);
  EXPECT_EQ(seq.mask, std::vector<std::uint8_t>(9, 1));
  // Truncation is never allowed.
  EXPECT_THROW(Tokenizer(Arch::Encoder, 8).tokenize("ID 0 0 0 DLC 0 D"), TokenizeError);
}

TEST(Textify, PaddingAndDecoderPool) {
  const Tokenizer enc(Arch::Encoder, 12), dec(Arch::Decoder, 12);
  const auto e = enc.tokenize("ID 0 0 0 DLC 0 D");
  EXPECT_EQ(e.ids.size(), 12u);
  EXPECT_EQ(e.ids[8], Vocab::kSep);
  for (std::size_t i = 9; i < 12; ++i) {
    EXPECT_EQ(e.ids[i], Vocab::kPad);
    EXPECT_EQ(e.mask[i], 0);
  }
  const auto d = dec.tokenize("ID 0 0 0 DLC 0 D");
  EXPECT_EQ(d.ids[0], Vocab::kBos);
  EXPECT_EQ(d.pool_index, 8u);
  EXPECT_EQ(d.ids[d.pool_index], Vocab::kEos);
  EXPECT_EQ(d.length, 9u);
}

TEST(Textify, UnknownTokenIsAnError) {
  const Tokenizer tok(Arch::Encoder);
  EXPECT_THROW(tok.tokenize("ID 3 1 G DLC 0 D"), TokenizeError);
  EXPECT_THROW(tok.tokenize("ID 3 1 6 DLC 0 D zz"), TokenizeError);
}

TEST(Textify, DetokenizeRoundTripAndErrors) {
  for (auto arch : {Arch::Encoder, Arch::Decoder}) {
    const Tokenizer tok(arch);
    const std::string s = "ID 3 1 6 DLC 2 D 0 5 2 1";
    EXPECT_EQ(tok.detokenize(tok.tokenize(s)), s);
    auto seq = tok.tokenize(s);
    seq.ids[3] = static_cast<TokenId>(tok.vocab().size() + 3);
    EXPECT_THROW(tok.detokenize(seq), TokenizeError);
    seq = tok.tokenize(s);
    seq.ids[2] = -1;
    EXPECT_THROW(tok.detokenize(seq), TokenizeError);
  }
}

TEST(Textify, RoundTripProperty) {
  Rng rng(21);
  const Tokenizer enc(Arch::Encoder), dec(Arch::Decoder);
  for (int i = 0; i < 2000; ++i) {
    const auto f = fixture::random_frame(rng);
    const auto s = serialize_frame(f);
    EXPECT_EQ(enc.detokenize(enc.encode(f)), s);
    EXPECT_EQ(dec.detokenize(dec.encode(f)), s);
    EXPECT_LE(enc.encode(f).length, kDefaultMaxLen);
  }
}

TEST(Textify, SerializationIsInjective) {
  // Every id with every dlc in 0..2 and a coarse byte grid.
  std::set<std::string> seen;
  std::size_t n = 0;
  const std::vector<std::uint8_t> grid = {0x00, 0x01, 0x10, 0xFF};
  for (std::uint32_t id = 0; id <= 0x7FF; ++id) {
    seen.insert(serialize_frame(make_frame(id, {})));
    ++n;
    for (auto a : grid) {
      seen.insert(serialize_frame(make_frame(id, {a})));
      ++n;
      for (auto b : grid) {
        seen.insert(serialize_frame(make_frame(id, {a, b})));
        ++n;
      }
    }
  }
  EXPECT_EQ(seen.size(), n);
  // Same bytes, different dlc.
  EXPECT_NE(serialize_frame(make_frame(0x10, {0, 0})), serialize_frame(make_frame(0x10, {0, 0, 0})));
}

TEST(Textify, EncodeBatchIsElementwise) {
  Rng rng(5);
  std::vector<can::LabeledRecord> recs;
  for (int i = 0; i < 4; ++i) recs.push_back(fixture::random_record(rng));
  const Tokenizer tok(Arch::Decoder);
  const auto batch = tok.encode_batch(recs);
  ASSERT_EQ(batch.sequences.size(), 4u);
  ASSERT_EQ(batch.labels.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(batch.sequences[i], tok.encode(recs[i].frame));
    EXPECT_EQ(batch.labels[i], static_cast<int>(can::index_of(recs[i].label)));
  }
  EXPECT_TRUE(tok.encode_batch({}).sequences.empty());
}

TEST(Textify, VocabFileRoundTrip) {
  const Vocab v;
  EXPECT_EQ(Vocab::from_text(v.to_text()), v);
  EXPECT_EQ(Vocab::from_text(v.to_text()).hash(), v.hash());
  const auto dir = fixture::scratch_dir("vocab");
  write_vocab(dir / "vocab.txt", v);
  EXPECT_EQ(read_vocab(dir / "vocab.txt"), v);
  EXPECT_THROW(Vocab::from_text("#canids-vocab v9\n"), TokenizeError);
  EXPECT_THROW(Vocab::from_text("nonsense"), TokenizeError);
  EXPECT_LT(v.size(), 40u);
}
