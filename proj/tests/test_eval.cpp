#include <gtest/gtest.h>

#include <random>

#include "cvlp/errors.hpp"
#include "cvlp/eval.hpp"
#include "cvlp/ops.hpp"

using namespace cvlp;
using ad::Tensor;

TEST(Prompts, ContentTokensPlusVariants) {
  stream::GeneratorSpec spec;
  const auto p = eval::make_prompts(spec, 4);
  ASSERT_EQ(p.num_classes(), 8u);
  for (std::int32_t c = 0; c < 8; ++c) {
    ASSERT_EQ(p.prompts[c].size(), 4u);
    for (std::size_t v = 0; v < 4; ++v) {
      EXPECT_EQ(p.prompts[c][v].size(), static_cast<std::size_t>(spec.tokens_per_class) + v);
      EXPECT_EQ(p.prompts[c][v].front(), spec.content_token(c, 0));
    }
  }
  EXPECT_THROW(eval::make_prompts(spec, 0), ConfigError);
}

TEST(ZeroShot, ArgmaxTiesGoLow) {
  const auto s = Tensor::matrix({{0.2, 0.9, 0.9}, {0.5, 0.5, 0.1}});
  EXPECT_EQ(eval::argmax_classes(s), (std::vector<std::int32_t>{1, 0}));
}

TEST(ZeroShot, PerfectAlignmentScoresOne) {
  // Image embeddings equal to their class embedding: argmax of u_i . c_k is the true class.
  const auto classes = ad::normalize_rows(Tensor::matrix({{1, 0.2, 0}, {0, 1, 0.3}, {0.1, 0, 1}}));
  const auto images = ad::gather_rows(classes, std::vector<std::int32_t>{2, 0, 1, 1});
  EXPECT_EQ(eval::argmax_classes(model::similarity(images, classes)),
            (std::vector<std::int32_t>{2, 0, 1, 1}));
}

TEST(ZeroShot, SingleClassAlwaysRight) {
  stream::GeneratorSpec spec;
  spec.num_classes = 1;
  const model::DualEncoder m(model::ModelDims{}, 1);
  const auto d = stream::generate_dataset(spec, 20, 1);
  EXPECT_EQ(eval::zero_shot_classify(m, d, eval::make_prompts(spec)).accuracy, 1.0);
}

// 5 sigma of Binomial(2000, 0.1) / 2000 is 0.034.
TEST(ZeroShot, UntrainedModelAtChance) {
  stream::GeneratorSpec spec;
  spec.num_classes = 10;
  const auto d = stream::generate_balanced(spec, 200, 1);
  double mean = 0.0;
  const int models = 5;
  for (int s = 0; s < models; ++s) {
    const model::DualEncoder m(model::ModelDims{}, 100 + static_cast<std::uint64_t>(s));
    const double acc = eval::zero_shot_classify(m, d, eval::make_prompts(spec)).accuracy;
    mean += acc / models;
  }
  EXPECT_NEAR(mean, 0.1, 0.04);
}

TEST(Recall, PerfectMatchAndExhaustive) {
  const auto s = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const std::vector<std::int32_t> ks{1, 3};
  const auto r = eval::recall_from_scores(s, ks);
  EXPECT_EQ(r.i2t, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(r.t2i, (std::vector<double>{1.0, 1.0}));

  const auto flipped = Tensor::matrix({{0, 1, 0}, {1, 0, 0}, {0, 0, 1}});
  const auto f = eval::recall_from_scores(flipped, ks);
  EXPECT_NEAR(f.i2t[0], 1.0 / 3, 1e-15);
  EXPECT_EQ(f.i2t[1], 1.0);
}

TEST(Recall, TiesCountAgainstLaterIndex) {
  const auto s = Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}});
  const std::vector<std::int32_t> ks{1};
  const auto r = eval::recall_from_scores(s, ks);
  EXPECT_EQ(r.i2t[0], 0.5);
  EXPECT_EQ(r.t2i[0], 0.5);
}

TEST(Recall, NestedTopKOnRandomModels) {
  stream::GeneratorSpec spec;
  const auto d = stream::generate_dataset(spec, 60, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const model::DualEncoder m(model::ModelDims{}, seed);
    const auto r = eval::retrieval_recall(m, d);
    EXPECT_LE(r.i2t[0], r.i2t[1]);
    EXPECT_LE(r.i2t[1], r.i2t[2]);
    EXPECT_LE(r.t2i[0], r.t2i[1]);
    EXPECT_LE(r.t2i[1], r.t2i[2]);
  }
}

TEST(Recall, InvalidInputs) {
  const std::vector<std::int32_t> big{5};
  EXPECT_THROW(eval::recall_from_scores(Tensor::zeros({3, 3}), big), ContractError);
  const std::vector<std::int32_t> one{1};
  EXPECT_THROW(eval::recall_from_scores(Tensor::zeros({3, 4}), one), DimensionError);
}

TEST(Bwt, ExamplesAndSigns) {
  EXPECT_NEAR(eval::bwt({{0.40}, {0.30, 0.50}}), -0.05, 1e-15);
  EXPECT_EQ(eval::bwt({{0.5}, {0.5, 0.7}, {0.5, 0.7, 0.2}}), 0.0);
  EXPECT_GT(eval::bwt({{0.5}, {0.6, 0.4}, {0.6, 0.5, 0.3}}), 0.0);
  EXPECT_THROW(eval::bwt({{0.5}}), ContractError);
}

TEST(AccuracyMatrix, LowerTriangularAndDeterministic) {
  stream::GeneratorSpec spec;
  const auto suite = eval::build_eval_suite(spec, eval::SplitKind::class_incremental, 4, {});
  std::vector<model::ModelSnapshot> snaps;
  for (std::uint32_t t = 0; t < 3; ++t) snaps.emplace_back(model::DualEncoder(model::ModelDims{}, t), t);
  std::vector<const model::ModelSnapshot*> ptrs;
  for (const auto& s : snaps) ptrs.push_back(&s);
  const auto a = eval::chunk_accuracy_matrix(ptrs, suite.chunk_eval, suite.prompts);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].size(), i + 1);
  EXPECT_EQ(a, eval::chunk_accuracy_matrix(ptrs, suite.chunk_eval, suite.prompts));
}

TEST(EvalSuite, Layout) {
  stream::GeneratorSpec spec;
  eval::EvalSettings settings;
  const auto suite = eval::build_eval_suite(spec, eval::SplitKind::class_incremental, 4, settings);
  ASSERT_EQ(suite.datasets.size(), 2u);
  EXPECT_EQ(suite.datasets[0].size(), 8u * settings.per_class);
  EXPECT_NE(suite.datasets[0], suite.datasets[1]);
  EXPECT_EQ(suite.retrieval.size(), settings.retrieval_size);
  ASSERT_EQ(suite.chunk_eval.size(), 4u);
  for (std::uint32_t t = 0; t < 4; ++t) {
    const auto owned = stream::class_partition(8, 4, t);
    for (const auto& s : suite.chunk_eval[t]) {
      EXPECT_NE(std::find(owned.begin(), owned.end(), s.class_id), owned.end());
    }
  }
  const auto inst = eval::build_eval_suite(spec, eval::SplitKind::instance_incremental, 4, settings);
  EXPECT_EQ(inst.chunk_eval.size(), 4u);
}

TEST(EvalReport, JsonRoundTrip) {
  eval::EvalReport r;
  r.step = 3;
  r.zero_shot = {0.25, 0.125};
  r.zero_shot_avg = 0.1875;
  r.recall = {{1, 5}, {0.1, 0.4}, {0.2, 0.3}};
  r.chunk_row = {0.1, 0.2, 0.3, 0.4};
  r.bwt = -0.01;
  const auto back = eval::EvalReport::from_json_line(r.to_json_line());
  EXPECT_EQ(back.step, 3u);
  EXPECT_EQ(back.zero_shot, r.zero_shot);
  EXPECT_EQ(back.recall.ks, r.recall.ks);
  EXPECT_EQ(back.recall.t2i, r.recall.t2i);
  EXPECT_EQ(back.chunk_row, r.chunk_row);
  ASSERT_TRUE(back.bwt.has_value());
  EXPECT_EQ(*back.bwt, -0.01);
  EXPECT_EQ(back.to_json_line(), r.to_json_line());
}

TEST(Evaluate, BwtOnlyAtFinalStep) {
  stream::GeneratorSpec spec;
  const auto suite = eval::build_eval_suite(spec, eval::SplitKind::class_incremental, 2, {});
  const model::DualEncoder m(model::ModelDims{}, 4);
  const auto r0 = eval::evaluate(m, suite, 0, {}, false);
  EXPECT_FALSE(r0.bwt.has_value());
  EXPECT_EQ(r0.chunk_row.size(), 1u);
  const auto r1 = eval::evaluate(m, suite, 1, {r0.chunk_row}, true);
  ASSERT_TRUE(r1.bwt.has_value());
  EXPECT_EQ(r1.chunk_row.size(), 2u);
  // The same model twice: no forgetting.
  EXPECT_NEAR(*r1.bwt, 0.0, 1e-15);
  EXPECT_NEAR(r1.zero_shot_avg, (r1.zero_shot[0] + r1.zero_shot[1]) / 2, 1e-15);
}
