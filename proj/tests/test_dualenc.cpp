#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cvlp/dual_encoder.hpp"
#include "cvlp/errors.hpp"
#include "cvlp/ops.hpp"
#include "cvlp/optim.hpp"
#include "fd_oracle.hpp"
#include "test_paths.hpp"

using namespace cvlp;
using model::DualEncoder;
using model::ModelDims;
using model::TokenBatch;

namespace {

std::vector<stream::PairSample> samples(std::size_t n, std::uint64_t seed = 0) {
  stream::GeneratorSpec spec;
  spec.seed = seed;
  auto d = stream::generate_dataset(spec, std::max<std::size_t>(n, 8));
  d.resize(n);
  return d;
}

void expect_unit_rows(const ad::Tensor& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double n = 0;
    for (std::size_t c = 0; c < t.cols(); ++c) n += t.at(r, c) * t.at(r, c);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

}  // namespace

TEST(DualEncoder, EmbeddingsAreUnitNormWithWidthDEmb) {
  const ModelDims dims;
  const DualEncoder m(dims, 1);
  for (std::size_t b : {1u, 3u, 17u}) {
    const auto d = samples(b);
    const auto u = m.encode_images(d);
    const auto v = m.encode_text(TokenBatch::of(d));
    EXPECT_EQ(u.cols(), static_cast<std::size_t>(dims.d_emb));
    EXPECT_EQ(v.cols(), static_cast<std::size_t>(dims.d_emb));
    EXPECT_EQ(u.rows(), b);
    expect_unit_rows(u);
    expect_unit_rows(v);
  }
}

TEST(DualEncoder, DuplicateRowsGiveDuplicateOutputs) {
  const DualEncoder m(ModelDims{}, 2);
  auto d = samples(2);
  d[1] = d[0];
  const auto u = m.encode_images(d);
  const auto v = m.encode_text(TokenBatch::of(d));
  for (std::size_t c = 0; c < u.cols(); ++c) {
    EXPECT_EQ(u.at(0, c), u.at(1, c));
    EXPECT_EQ(v.at(0, c), v.at(1, c));
  }
}

TEST(DualEncoder, TextFactorsThroughTokenEmbeddings) {
  const DualEncoder m(ModelDims{}, 3);
  const auto tb = TokenBatch::of(samples(5));
  const auto a = m.encode_text(tb);
  const auto b = m.encode_text_from_embeddings(m.embed_tokens(tb));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST(DualEncoder, MeanPoolIgnoresTokenOrder) {
  const DualEncoder m(ModelDims{}, 4);
  TokenBatch a, b;
  a.push(std::vector<std::int32_t>{5, 9, 30, 2});
  b.push(std::vector<std::int32_t>{30, 2, 5, 9});
  const auto va = m.encode_text(a), vb = m.encode_text(b);
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_NEAR(va.data()[i], vb.data()[i], 1e-12);
}

TEST(DualEncoder, SameTokenSequencePoolsToItsRow) {
  const DualEncoder m(ModelDims{}, 5);
  TokenBatch tb;
  tb.push(std::vector<std::int32_t>{7, 7, 7});
  const auto pooled = m.pooled(m.embed_tokens(tb));
  const auto& table = m.embedding_table();
  for (std::size_t c = 0; c < pooled.cols(); ++c) EXPECT_NEAR(pooled.at(0, c), table.at(7, c), 1e-12);
}

TEST(DualEncoder, OutOfVocabularyRejected) {
  const DualEncoder m(ModelDims{}, 6);
  TokenBatch tb;
  tb.push(std::vector<std::int32_t>{1, 200});
  EXPECT_THROW(m.embed_tokens(tb), OutOfVocabularyError);
  TokenBatch neg;
  neg.push(std::vector<std::int32_t>{-1});
  EXPECT_THROW(m.embed_tokens(neg), OutOfVocabularyError);
}

TEST(DualEncoder, WrongImageWidthRejected) {
  const DualEncoder m(ModelDims{}, 7);
  EXPECT_THROW(m.encode_images(ad::Tensor::zeros({2, 5})), DimensionError);
}

TEST(DualEncoder, NonFiniteInputRejected) {
  const DualEncoder m(ModelDims{}, 7);
  auto x = ad::Tensor::zeros({1, 32});
  x.mutable_data()[3] = std::nan("");
  EXPECT_THROW(m.encode_images(x), NumericError);
}

TEST(DualEncoder, InvalidTemperatureRejected) {
  ModelDims dims;
  dims.init_tau = 0.5;
  EXPECT_THROW(DualEncoder(dims, 0), ConfigError);
  dims = {};
  dims.d_emb = 0;
  EXPECT_THROW(DualEncoder(dims, 0), ConfigError);
}

TEST(DualEncoder, TemperatureClamp) {
  DualEncoder m(ModelDims{}, 8);
  EXPECT_NEAR(m.tau(), 0.07, 1e-12);
  auto& ls = m.parameters().back().tensor;
  ls.mutable_data()[0] = std::log(1.0 / 0.001);
  m.clamp_temperature();
  EXPECT_NEAR(m.tau(), 0.01, 1e-12);
  ls.mutable_data()[0] = 0.0;
  m.clamp_temperature();
  EXPECT_NEAR(m.tau(), 0.1, 1e-12);
}

TEST(DualEncoder, InitNormsCoverMatricesOnly) {
  const DualEncoder m(ModelDims{}, 9);
  const auto& p = m.parameters();
  ASSERT_EQ(p.size(), m.init_norms().size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].is_weight_matrix) {
      EXPECT_NEAR(m.init_norms()[i], ad::frobenius_norm(p[i].tensor), 1e-12) << p[i].name;
    } else {
      EXPECT_EQ(m.init_norms()[i], 0.0) << p[i].name;
    }
  }
}

TEST(DualEncoder, GradientsMatchFiniteDifferences) {
  ModelDims dims;
  dims.d_img = 4;
  dims.d_tok = 3;
  dims.hidden = 5;
  dims.d_emb = 3;
  dims.vocab_size = 40;
  stream::GeneratorSpec spec;
  spec.d_img = 4;
  spec.vocab_size = 40;
  spec.tokens_per_class = 2;
  spec.shared_tokens = 3;
  const auto d = stream::generate_dataset(spec, 8);
  const DualEncoder m(dims, 10);
  std::vector<ad::Tensor> params;
  for (const auto& p : m.parameters()) params.push_back(p.tensor);
  auto f = [&] {
    const auto s = model::similarity(m.encode_images(d), m.encode_text(TokenBatch::of(d)));
    return ad::sum(ad::mul(ad::mul(s, s), m.logit_scale()));
  };
  const auto rep = tsupport::check_gradients(f, params);
  EXPECT_LT(rep.max_rel, 1e-5) << rep.worst;
}

TEST(Similarity, IdentityOrthogonalAntipodal) {
  auto u = ad::Tensor::matrix({{1, 0}, {0, 1}});
  auto v = ad::Tensor::matrix({{1, 0}, {-1, 0}});
  const auto s = model::similarity(u, v);
  EXPECT_DOUBLE_EQ(s.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.at(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.at(0, 1), -1.0);
}

TEST(Snapshot, FrozenAgainstLiveUpdates) {
  DualEncoder m(ModelDims{}, 11);
  const model::ModelSnapshot snap(m, 0);
  const auto d = samples(6);
  const auto before = snap.model().encode_images(d);
  ad::Sgd opt(m.parameters(), {});
  for (int i = 0; i < 10; ++i) {
    opt.zero_grad();
    ad::sum(m.encode_images(d)).backward();
    opt.step(0.1);
  }
  const auto after = snap.model().encode_images(d);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before.data()[i], after.data()[i]);
  EXPECT_FALSE(m.same_weights(snap.model()));
}

TEST(Snapshot, NoGradientsReachSnapshot) {
  const DualEncoder m(ModelDims{}, 12);
  const model::ModelSnapshot snap(m, 0);
  const auto d = samples(4);
  auto x = ad::Tensor::scalar(1.0, true);
  ad::sum(ad::mul(snap.model().encode_images(d), x)).backward();
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(snap.model().trainable());
  for (const auto& p : snap.model().parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
}

TEST(Snapshot, SnapshotOfSnapshotEqual) {
  const DualEncoder m(ModelDims{}, 13);
  const model::ModelSnapshot a(m, 2);
  const auto b = a.snapshot();
  EXPECT_TRUE(a.model().same_weights(b.model()));
  EXPECT_EQ(b.step(), 2u);
}

TEST(ModelIo, RoundTrip) {
  ModelDims dims;
  dims.activation = model::Activation::relu;
  dims.fan_in_init = false;
  const DualEncoder m(dims, 14);
  const auto file = tsupport::scratch_dir("model_rt") / "m.bin";
  m.save(file);
  const auto back = DualEncoder::load(file);
  EXPECT_EQ(back.dims(), dims);
  EXPECT_TRUE(back.same_weights(m));
  EXPECT_EQ(back.init_norms(), m.init_norms());
}

TEST(ModelIo, CorruptFileRejected) {
  const DualEncoder m(ModelDims{}, 15);
  const auto file = tsupport::scratch_dir("model_bad") / "m.bin";
  m.save(file);
  std::filesystem::resize_file(file, 20);
  EXPECT_THROW(DualEncoder::load(file), FormatError);
}
