#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "cvlp/errors.hpp"
#include "cvlp/negtext.hpp"
#include "cvlp/ops.hpp"
#include "test_paths.hpp"

using namespace cvlp;
using ad::Tensor;

namespace {

struct Fixture {
  model::DualEncoder model;
  std::vector<stream::PairSample> batch;
  model::TokenEmbeddings text;
};

Fixture make_fixture(std::size_t b = 6) {
  Fixture f{model::DualEncoder(model::ModelDims{}, 21).copy(false), {}, {}};
  f.batch = stream::generate_dataset(stream::GeneratorSpec{}, std::max<std::size_t>(b, 8));
  f.batch.resize(b);
  f.text = f.model.embed_tokens(model::TokenBatch::of(f.batch));
  return f;
}

}  // namespace

TEST(InitPseudo, Endpoints) {
  const auto a = Tensor::matrix({{1, 2}, {3, 4}});
  const auto b = Tensor::matrix({{5, 6}, {7, 8}});
  const auto i = negtext::init_pseudo(a, b, 1.0);
  const auto j = negtext::init_pseudo(a, b, 0.0);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(i.data()[k], a.data()[k]);
    EXPECT_EQ(j.data()[k], b.data()[k]);
  }
}

TEST(InitPseudo, Midpoint) {
  const auto m = negtext::init_pseudo(Tensor::zeros({3, 2}), Tensor::full({3, 2}, 1.0), 0.5);
  for (double x : m.data()) EXPECT_EQ(x, 0.5);
}

TEST(InitPseudo, ShapeAndBetaChecked) {
  EXPECT_THROW(negtext::init_pseudo(Tensor::zeros({3, 2}), Tensor::zeros({2, 2}), 0.5), DimensionError);
  EXPECT_THROW(negtext::init_pseudo(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), 1.5), ContractError);
}

TEST(GenLoss, Examples) {
  const std::vector<double> inside(4, 0.5);
  EXPECT_EQ(negtext::gen_loss(inside, 0.3, 0.7), 0.0);
  const std::vector<double> below{0.1};
  EXPECT_NEAR(negtext::gen_loss(below, 0.3, 0.7), 0.2, 1e-15);
  const std::vector<double> mixed{0.9, 0.5};
  EXPECT_NEAR(negtext::gen_loss(mixed, 0.3, 0.7), 0.1, 1e-15);
}

TEST(GenLoss, ZeroExactlyInsideBand) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 1000; ++t) {
    const double s = u(rng);
    const std::vector<double> v{s};
    EXPECT_EQ(negtext::gen_loss(v, 0.2, 0.6) == 0.0, s >= 0.2 && s <= 0.6);
  }
}

TEST(GenLoss, RowTensorMatchesScalar) {
  const auto s = Tensor::matrix({{0.9, 0.5}, {0.1, 0.3}});
  const auto rows = negtext::gen_loss_rows(s, 0.3, 0.7);
  EXPECT_NEAR(rows.at(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(rows.at(1, 0), 0.1, 1e-15);
}

TEST(GenConfig, Validation) {
  negtext::GenConfig g;
  EXPECT_NO_THROW(g.validate());
  g.s_min = 0.7;
  EXPECT_THROW(g.validate(), ConfigError);
  g = {};
  g.gen_lr = 0.0;
  EXPECT_THROW(g.validate(), ConfigError);
  g = {};
  g.s_max = 1.5;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(FitLength, PadsAndTruncates) {
  model::TokenEmbeddings emb{Tensor::matrix({{1, 1}, {2, 2}, {3, 3}}), {0, 1, 3}};
  const std::vector<double> pad{9, 9};
  const auto padded = negtext::fit_length(emb, 0, 3, pad);
  EXPECT_EQ(padded.at(0, 0), 1.0);
  EXPECT_EQ(padded.at(2, 1), 9.0);
  const auto cut = negtext::fit_length(emb, 1, 1, pad);
  EXPECT_EQ(cut.rows(), 1u);
  EXPECT_EQ(cut.at(0, 0), 2.0);
  EXPECT_EQ(negtext::median_length(emb), 1u);
}

TEST(Generate, ZeroIterationsReturnInit) {
  auto f = make_fixture();
  negtext::GenConfig g;
  g.gen_iters = 0;
  g.num_pseudo = 4;
  const auto r = negtext::generate_batch(f.model, model::image_matrix(f.batch), f.text, g, 3);
  ASSERT_EQ(r.texts.size(), 4u);
  const auto len = negtext::median_length(f.text);
  const auto table = f.model.embedding_table().data();
  const std::span<const double> pad(table.data(), static_cast<std::size_t>(f.model.dims().d_tok));
  for (const auto& t : r.texts) {
    const auto want = negtext::init_pseudo(negtext::fit_length(f.text, t.anchor, len, pad),
                                           negtext::fit_length(f.text, t.partner, len, pad), t.beta);
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_EQ(t.embeddings.data()[k], want.data()[k]);
    EXPECT_EQ(t.init_loss, t.final_loss);
  }
}

TEST(Generate, FrozenModelUntouched) {
  auto f = make_fixture();
  const auto before = f.model.copy(false);
  negtext::GenConfig g;
  g.num_pseudo = 4;
  negtext::generate_batch(f.model, model::image_matrix(f.batch), f.text, g, 4);
  EXPECT_TRUE(f.model.same_weights(before));
  for (const auto& p : f.model.parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
}

TEST(Generate, TrainableGeneratorRejected) {
  const model::DualEncoder live(model::ModelDims{}, 1);
  auto f = make_fixture();
  EXPECT_THROW(negtext::generate_batch(live, model::image_matrix(f.batch), f.text, {}, 1), ContractError);
}

TEST(Generate, LossNeverIncreases) {
  auto f = make_fixture(8);
  negtext::GenConfig g;
  g.num_pseudo = 8;
  g.gen_lr = 50.0;  // large enough to overshoot and exercise the retry path
  const auto r = negtext::generate_batch(f.model, model::image_matrix(f.batch), f.text, g, 5);
  for (const auto& t : r.texts) EXPECT_LE(t.final_loss, t.init_loss);
  EXPECT_LE(r.mean_final_loss, r.mean_init_loss);
}

TEST(Generate, ScoresAndLossAgree) {
  auto f = make_fixture();
  negtext::GenConfig g;
  g.num_pseudo = 3;
  const auto r = negtext::generate_batch(f.model, model::image_matrix(f.batch), f.text, g, 6);
  const auto stacked = negtext::stack(r.texts);
  const auto s = model::similarity(f.model.encode_images(f.batch),
                                   f.model.encode_text_from_embeddings(stacked));
  for (std::size_t k = 0; k < r.texts.size(); ++k) {
    const auto& t = r.texts[k];
    ASSERT_EQ(t.scores.size(), f.batch.size());
    for (std::size_t i = 0; i < f.batch.size(); ++i) EXPECT_NEAR(s.at(i, k), t.scores[i], 1e-9);
    EXPECT_NEAR(negtext::gen_loss(t.scores, g.s_min, g.s_max), t.final_loss, 1e-9);
    EXPECT_EQ(t.anchor_score, t.scores[t.anchor]);
  }
}

TEST(Generate, DeterministicPerSeed) {
  auto f = make_fixture();
  negtext::GenConfig g;
  g.num_pseudo = 3;
  const auto a = negtext::generate_batch(f.model, model::image_matrix(f.batch), f.text, g, 7);
  const auto b = negtext::generate_batch(f.model, model::image_matrix(f.batch), f.text, g, 7);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(a.texts[k].anchor, b.texts[k].anchor);
    EXPECT_EQ(a.texts[k].scores, b.texts[k].scores);
  }
  // Text k depends only on (seed, k), not on how many are generated.
  g.num_pseudo = 1;
  const auto c = negtext::generate_batch(f.model, model::image_matrix(f.batch), f.text, g, 7);
  EXPECT_EQ(c.texts[0].anchor, a.texts[0].anchor);
  EXPECT_EQ(c.texts[0].beta, a.texts[0].beta);
}

TEST(Generate, InBandTextsNeverBeatAStrongPositive) {
  auto f = make_fixture();
  negtext::GenConfig g;
  g.num_pseudo = 6;
  g.gen_lr = 10.0;
  const auto r = negtext::generate_batch(f.model, model::image_matrix(f.batch), f.text, g, 8);
  const auto real = model::similarity(f.model.encode_images(f.batch), f.model.encode_text(model::TokenBatch::of(f.batch)));
  for (const auto& t : r.texts) {
    for (std::size_t i = 0; i < f.batch.size(); ++i) {
      if (real.at(i, i) > g.s_max && t.scores[i] <= g.s_max) EXPECT_LT(t.scores[i], real.at(i, i));
    }
  }
}

TEST(Trace, RoundTrip) {
  auto f = make_fixture();
  negtext::GenConfig g;
  g.num_pseudo = 2;
  const auto r = negtext::generate_batch(f.model, model::image_matrix(f.batch), f.text, g, 9);
  const auto file = tsupport::scratch_dir("negtext_trace") / "t.bin";
  negtext::save_trace(file, 3, r.texts);
  std::uint32_t step = 0;
  const auto back = negtext::load_trace(file, &step);
  EXPECT_EQ(step, 3u);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back[k].anchor, r.texts[k].anchor);
    EXPECT_EQ(back[k].scores, r.texts[k].scores);
    EXPECT_EQ(std::vector<double>(back[k].embeddings.data().begin(), back[k].embeddings.data().end()),
              std::vector<double>(r.texts[k].embeddings.data().begin(), r.texts[k].embeddings.data().end()));
  }
}
