#include "cvlp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "cvlp/errors.hpp"
#include "cvlp/ops.hpp"

namespace cvlp::eval {

using nlohmann::json;

void PromptSet::validate() const {
  if (prompts.empty()) throw ContractError("empty prompt set");
  for (std::size_t c = 0; c < prompts.size(); ++c) {
    if (prompts[c].empty()) throw ContractError("class " + std::to_string(c) + " has no prompts");
  }
}

PromptSet make_prompts(const stream::GeneratorSpec& spec, std::int32_t variants) {
  spec.validate();
  if (variants < 1) throw ConfigError("need at least one prompt variant");
  PromptSet set;
  set.prompts.resize(static_cast<std::size_t>(spec.num_classes));
  for (std::int32_t c = 0; c < spec.num_classes; ++c) {
    for (std::int32_t v = 0; v < variants; ++v) {
      std::vector<std::int32_t> seq;
      for (std::int32_t i = 0; i < spec.tokens_per_class; ++i) seq.push_back(spec.content_token(c, i));
      for (std::int32_t i = 0; i < v && spec.shared_tokens > 0; ++i) {
        seq.push_back(spec.shared_token((c + 3 * v + i) % spec.shared_tokens));
      }
      set.prompts[static_cast<std::size_t>(c)].push_back(std::move(seq));
    }
  }
  return set;
}

ad::Tensor class_embeddings(const model::DualEncoder& model, const PromptSet& prompts) {
  prompts.validate();
  model::TokenBatch batch;
  std::vector<std::size_t> owner;
  for (std::size_t c = 0; c < prompts.num_classes(); ++c) {
    for (const auto& p : prompts.prompts[c]) {
      batch.push(p);
      owner.push_back(c);
    }
  }
  const auto emb = model.encode_text(batch).detach();
  const std::size_t d = emb.cols();
  std::vector<double> sums(prompts.num_classes() * d, 0.0);
  const auto ev = emb.data();
  for (std::size_t r = 0; r < owner.size(); ++r)
    for (std::size_t k = 0; k < d; ++k) sums[owner[r] * d + k] += ev[r * d + k];
  for (std::size_t c = 0; c < prompts.num_classes(); ++c) {
    const double n = static_cast<double>(prompts.prompts[c].size());
    for (std::size_t k = 0; k < d; ++k) sums[c * d + k] /= n;
  }
  return ad::normalize_rows(ad::Tensor::from({prompts.num_classes(), d}, std::move(sums)));
}

std::vector<std::int32_t> argmax_classes(const ad::Tensor& scores) {
  const std::size_t cols = scores.cols();
  const auto v = scores.data();
  std::vector<std::int32_t> out(scores.rows());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (v[r * cols + c] > v[r * cols + best]) best = c;
    }
    out[r] = static_cast<std::int32_t>(best);
  }
  return out;
}

ZeroShotResult zero_shot_classify(const model::DualEncoder& model,
                                  std::span<const stream::PairSample> samples,
                                  const PromptSet& prompts) {
  const auto classes = class_embeddings(model, prompts);
  const auto images = model.encode_images(samples).detach();
  ZeroShotResult r;
  r.predictions = argmax_classes(model::similarity(images, classes));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) hits += r.predictions[i] == samples[i].class_id;
  r.accuracy = static_cast<double>(hits) / static_cast<double>(samples.size());
  return r;
}

RecallResult recall_from_scores(const ad::Tensor& scores, std::span<const std::int32_t> ks) {
  const std::size_t n = scores.rows();
  if (scores.cols() != n) throw DimensionError("retrieval needs a square score matrix");
  for (auto k : ks) {
    if (k < 1 || static_cast<std::size_t>(k) > n) {
      throw ContractError("recall@" + std::to_string(k) + " exceeds the " + std::to_string(n) +
                          " candidates");
    }
  }
  const auto v = scores.data();
  std::vector<std::size_t> rank_i2t(n, 0), rank_t2i(n, 0);
  for (std::size_t q = 0; q < n; ++q) {
    const double pos = v[q * n + q];
    for (std::size_t c = 0; c < n; ++c) {
      if (c == q) continue;
      const double si = v[q * n + c];  // image q vs text c
      if (si > pos || (si == pos && c < q)) ++rank_i2t[q];
      const double st = v[c * n + q];  // text q vs image c
      if (st > pos || (st == pos && c < q)) ++rank_t2i[q];
    }
  }
  RecallResult r;
  r.ks.assign(ks.begin(), ks.end());
  for (auto k : ks) {
    const auto kk = static_cast<std::size_t>(k);
    const auto hits_i = std::count_if(rank_i2t.begin(), rank_i2t.end(), [kk](auto x) { return x < kk; });
    const auto hits_t = std::count_if(rank_t2i.begin(), rank_t2i.end(), [kk](auto x) { return x < kk; });
    r.i2t.push_back(static_cast<double>(hits_i) / static_cast<double>(n));
    r.t2i.push_back(static_cast<double>(hits_t) / static_cast<double>(n));
  }
  return r;
}

RecallResult retrieval_recall(const model::DualEncoder& model,
                              std::span<const stream::PairSample> samples,
                              std::span<const std::int32_t> ks) {
  const auto u = model.encode_images(samples).detach();
  const auto v = model.encode_text(model::TokenBatch::of(samples)).detach();
  return recall_from_scores(model::similarity(u, v), ks);
}

std::vector<double> chunk_accuracy_row(const model::DualEncoder& model,
                                       std::span<const std::vector<stream::PairSample>> chunk_eval,
                                       std::size_t step, const PromptSet& prompts) {
  if (step >= chunk_eval.size()) throw ContractError("no held-out split for step " + std::to_string(step));
  std::vector<double> row;
  for (std::size_t j = 0; j <= step; ++j) {
    row.push_back(zero_shot_classify(model, chunk_eval[j], prompts).accuracy);
  }
  return row;
}

AccuracyMatrix chunk_accuracy_matrix(std::span<const model::ModelSnapshot* const> snapshots,
                                     std::span<const std::vector<stream::PairSample>> chunk_eval,
                                     const PromptSet& prompts) {
  AccuracyMatrix a;
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (snapshots[i] == nullptr) throw ContractError("missing snapshot for step " + std::to_string(i));
    a.push_back(chunk_accuracy_row(snapshots[i]->model(), chunk_eval, i, prompts));
  }
  return a;
}

double bwt(const AccuracyMatrix& a) {
  const std::size_t n = a.size();
  if (n < 2) throw ContractError("BWT needs at least two steps");
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].size() < i + 1) throw DimensionError("accuracy matrix row " + std::to_string(i) + " is short");
  }
  double total = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j <= i; ++j) inner += a[i][j] - a[j][j];
    total += inner / static_cast<double>(i + 1);
  }
  return total / static_cast<double>(n - 1);
}

EvalSuite build_eval_suite(const stream::GeneratorSpec& spec, SplitKind split,
                           std::uint32_t num_steps, const EvalSettings& settings) {
  if (settings.num_datasets < 1) throw ConfigError("need at least one eval dataset");
  EvalSuite suite;
  suite.prompts = make_prompts(spec, settings.prompt_variants);
  for (std::int32_t k = 0; k < settings.num_datasets; ++k) {
    suite.datasets.push_back(
        stream::generate_balanced(spec, settings.per_class, static_cast<std::uint32_t>(k + 1)));
  }
  const auto retrieval = stream::generate_dataset(
      spec, std::max<std::size_t>(settings.retrieval_size, static_cast<std::size_t>(spec.num_classes)),
      static_cast<std::uint32_t>(settings.num_datasets + 1));
  suite.retrieval = retrieval;
  const auto& base = suite.datasets.front();
  const auto chunks = split == SplitKind::class_incremental
                          ? stream::split_class_incremental(base, spec.num_classes, num_steps)
                          : stream::split_instance_incremental(base, num_steps, spec.seed + 17);
  for (const auto& c : chunks) suite.chunk_eval.push_back(c.samples);
  return suite;
}

std::string EvalReport::to_json_line() const {
  json j;
  j["step"] = step;
  j["zero_shot"] = zero_shot;
  j["zero_shot_avg"] = zero_shot_avg;
  j["recall_k"] = recall.ks;
  j["recall_i2t"] = recall.i2t;
  j["recall_t2i"] = recall.t2i;
  j["chunk_row"] = chunk_row;
  if (bwt) j["bwt"] = *bwt;
  return j.dump();
}

EvalReport EvalReport::from_json_line(const std::string& line) {
  const auto j = json::parse(line);
  EvalReport r;
  r.step = j.at("step").get<std::uint32_t>();
  r.zero_shot = j.at("zero_shot").get<std::vector<double>>();
  r.zero_shot_avg = j.at("zero_shot_avg").get<double>();
  r.recall.ks = j.at("recall_k").get<std::vector<std::int32_t>>();
  r.recall.i2t = j.at("recall_i2t").get<std::vector<double>>();
  r.recall.t2i = j.at("recall_t2i").get<std::vector<double>>();
  r.chunk_row = j.at("chunk_row").get<std::vector<double>>();
  if (j.contains("bwt")) r.bwt = j["bwt"].get<double>();
  return r;
}

EvalReport evaluate(const model::DualEncoder& model, const EvalSuite& suite, std::uint32_t step,
                    const AccuracyMatrix& history, bool final_step) {
  EvalReport r;
  r.step = step;
  for (const auto& ds : suite.datasets) {
    r.zero_shot.push_back(zero_shot_classify(model, ds, suite.prompts).accuracy);
  }
  for (double a : r.zero_shot) r.zero_shot_avg += a;
  r.zero_shot_avg /= static_cast<double>(r.zero_shot.size());
  r.recall = retrieval_recall(model, suite.retrieval);
  r.chunk_row = chunk_accuracy_row(model, suite.chunk_eval, step, suite.prompts);
  if (final_step && history.size() + 1 >= 2) {
    AccuracyMatrix a = history;
    a.push_back(r.chunk_row);
    r.bwt = bwt(a);
  }
  return r;
}

}  // namespace cvlp::eval
