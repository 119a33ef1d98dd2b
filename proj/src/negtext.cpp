#include "cvlp/negtext.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cvlp/binary_io.hpp"
#include "cvlp/errors.hpp"
#include "cvlp/ops.hpp"

namespace cvlp::negtext {

namespace {

constexpr char kTraceMagic[] = "CVLP";
constexpr std::uint8_t kTraceVersion = 1;

struct Draw {
  std::size_t i, j;
  double beta;
};

Draw draw_for(std::uint64_t seed, std::size_t k, std::size_t batch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k), 0x6e656732u};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> idx(0, batch - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Draw d;
  d.i = idx(rng);
  d.j = idx(rng);
  d.beta = unit(rng);
  return d;
}

// Band scores of K texts (rows) against all images, or against each text's
// anchor when only anchors count.
ad::Tensor band_scores(const model::DualEncoder& gen, const ad::Tensor& x,
                       const std::vector<std::size_t>& offsets, const ad::Tensor& image_emb,
                       const std::vector<std::size_t>& anchors, bool anchor_only) {
  auto v = gen.encode_text_from_embeddings({x, offsets});
  auto s = model::similarity(v, image_emb);  // (K, B)
  if (!anchor_only) return s;
  std::vector<double> mask(s.size(), 0.0);
  for (std::size_t k = 0; k < anchors.size(); ++k) mask[k * s.cols() + anchors[k]] = 1.0;
  // Row sums of the masked matrix pick the anchor column.
  return ad::sum_axis(ad::mul(s, ad::Tensor::from(s.shape(), std::move(mask))), 1);
}

// Runs `iters` SGD steps on rows of texts [idx...] starting from their inits.
// Returns the optimized (K L, d) values and per-text final losses.
struct RunOut {
  std::vector<double> values;
  std::vector<double> final_loss;
  std::vector<double> final_scores;  // row-major (K, B)
};

RunOut optimize(const model::DualEncoder& gen, const std::vector<double>& init, std::size_t count,
                std::size_t len, std::size_t width, const ad::Tensor& image_emb,
                const std::vector<std::size_t>& anchors, const std::vector<double>& lr,
                const GenConfig& cfg) {
  std::vector<std::size_t> offsets(count + 1);
  for (std::size_t k = 0; k <= count; ++k) offsets[k] = k * len;
  auto x = ad::Tensor::from({count * len, width}, init, true);
  const std::size_t block = len * width;
  for (std::int32_t it = 0; it < cfg.gen_iters; ++it) {
    auto s = band_scores(gen, x, offsets, image_emb, anchors, cfg.anchor_only);
    // Summing the per-text losses keeps each text's gradient equal to that
    // of its own loss.
    auto total = ad::sum(gen_loss_rows(s, cfg.s_min, cfg.s_max));
    x.zero_grad();
    total.backward();
    auto w = x.mutable_data();
    const auto g = x.grad();
    for (std::size_t k = 0; k < count; ++k)
      for (std::size_t e = k * block; e < (k + 1) * block; ++e) w[e] -= lr[k] * g[e];
  }
  RunOut out;
  auto frozen = x.detach();
  auto s = band_scores(gen, frozen, offsets, image_emb, anchors, cfg.anchor_only);
  auto rows = gen_loss_rows(s, cfg.s_min, cfg.s_max);
  out.final_loss.assign(rows.data().begin(), rows.data().end());
  auto full = model::similarity(gen.encode_text_from_embeddings({frozen, offsets}), image_emb);
  out.final_scores.assign(full.data().begin(), full.data().end());
  out.values.assign(frozen.data().begin(), frozen.data().end());
  return out;
}

}  // namespace

void GenConfig::validate() const {
  if (!(s_min >= -1.0 && s_min < s_max && s_max <= 1.0)) {
    throw ConfigError("need -1 <= s_min < s_max <= 1");
  }
  if (gen_iters < 0) throw ConfigError("gen_iters must be >= 0");
  if (!(gen_lr > 0.0)) throw ConfigError("gen_lr must be positive");
  if (num_pseudo < 0) throw ConfigError("num_pseudo must be >= 0");
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
}

ad::Tensor init_pseudo(const ad::Tensor& e_i, const ad::Tensor& e_j, double beta) {
  if (e_i.shape() != e_j.shape()) {
    throw DimensionError("init_pseudo: " + e_i.shape().str() + " vs " + e_j.shape().str());
  }
  if (beta < 0.0 || beta > 1.0) throw ContractError("beta must lie in [0, 1]");
  const auto a = e_i.data(), b = e_j.data();
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = beta * a[i] + (1.0 - beta) * b[i];
  return ad::Tensor::from(e_i.shape(), std::move(v));
}

double gen_loss(std::span<const double> scores, double s_min, double s_max) {
  if (scores.empty()) throw ContractError("gen_loss over no scores");
  double total = 0.0;
  for (double s : scores) total += std::max(0.0, s_min - s) + std::max(0.0, s - s_max);
  return total / static_cast<double>(scores.size());
}

ad::Tensor gen_loss_rows(const ad::Tensor& scores, double s_min, double s_max) {
  auto below = ad::relu(ad::add_scalar(ad::neg(scores), s_min));
  auto above = ad::relu(ad::add_scalar(scores, -s_max));
  return ad::mean_axis(ad::add(below, above), 1);
}

std::size_t median_length(const model::TokenEmbeddings& emb) {
  if (emb.count() == 0) throw ContractError("no sequences");
  std::vector<std::size_t> lens;
  for (std::size_t s = 0; s < emb.count(); ++s) lens.push_back(emb.offsets[s + 1] - emb.offsets[s]);
  std::sort(lens.begin(), lens.end());
  return lens[(lens.size() - 1) / 2];
}

ad::Tensor fit_length(const model::TokenEmbeddings& emb, std::size_t s, std::size_t len,
                      std::span<const double> pad_row) {
  const std::size_t width = emb.rows.cols();
  if (pad_row.size() != width) throw DimensionError("pad row width differs from embeddings");
  const auto src = emb.rows.data();
  const std::size_t begin = emb.offsets.at(s), n = emb.offsets.at(s + 1) - begin;
  std::vector<double> v(len * width);
  for (std::size_t r = 0; r < len; ++r) {
    if (r < n) {
      std::copy_n(src.begin() + (begin + r) * width, width, v.begin() + r * width);
    } else {
      std::copy(pad_row.begin(), pad_row.end(), v.begin() + r * width);
    }
  }
  return ad::Tensor::from({len, width}, std::move(v));
}

GenResult generate_batch(const model::DualEncoder& generator, const ad::Tensor& image_feats,
                         const model::TokenEmbeddings& memory_text, const GenConfig& config,
                         std::uint64_t seed) {
  config.validate();
  if (generator.trainable()) {
    throw ContractError("pseudo-text generation needs a frozen model copy");
  }
  const std::size_t batch = image_feats.rows();
  if (memory_text.count() != batch) {
    throw DimensionError("generation batch has " + std::to_string(batch) + " images but " +
                         std::to_string(memory_text.count()) + " texts");
  }
  GenResult result;
  const std::size_t count = static_cast<std::size_t>(config.num_pseudo);
  if (count == 0) return result;

  const auto image_emb = generator.encode_images(image_feats);
  const std::size_t len = median_length(memory_text);
  const std::size_t width = memory_text.rows.cols();
  const auto table = generator.embedding_table().data();
  const std::span<const double> pad_row(table.data() + stream::GeneratorSpec::pad_token * width,
                                        width);

  std::vector<Draw> draws(count);
  std::vector<double> init(count * len * width);
  std::vector<std::size_t> anchors(count);
  for (std::size_t k = 0; k < count; ++k) {
    draws[k] = draw_for(seed, k, batch);
    anchors[k] = draws[k].i;
    auto e = init_pseudo(fit_length(memory_text, draws[k].i, len, pad_row),
                         fit_length(memory_text, draws[k].j, len, pad_row), draws[k].beta);
    std::copy(e.data().begin(), e.data().end(), init.begin() + k * len * width);
  }

  // Initial losses come from a zero-iteration pass.
  GenConfig probe = config;
  probe.gen_iters = 0;
  const std::vector<double> lr(count, config.gen_lr);
  const RunOut start = optimize(generator, init, count, len, width, image_emb, anchors, lr, probe);
  RunOut best = optimize(generator, init, count, len, width, image_emb, anchors, lr, config);

  // Texts whose loss went up are rerun from their init with a halved step.
  std::vector<double> cur_lr = lr;
  std::vector<bool> retried(count, false);
  for (std::int32_t attempt = 0; attempt < config.max_retries && config.gen_iters > 0; ++attempt) {
    std::vector<std::size_t> bad;
    for (std::size_t k = 0; k < count; ++k) {
      if (best.final_loss[k] > start.final_loss[k]) bad.push_back(k);
    }
    if (bad.empty()) break;
    std::vector<double> sub_init(bad.size() * len * width), sub_lr(bad.size());
    std::vector<std::size_t> sub_anchor(bad.size());
    for (std::size_t b = 0; b < bad.size(); ++b) {
      const std::size_t k = bad[b];
      retried[k] = true;
      cur_lr[k] *= 0.5;
      sub_lr[b] = cur_lr[k];
      sub_anchor[b] = anchors[k];
      std::copy_n(init.begin() + k * len * width, len * width, sub_init.begin() + b * len * width);
    }
    const RunOut again =
        optimize(generator, sub_init, bad.size(), len, width, image_emb, sub_anchor, sub_lr, config);
    for (std::size_t b = 0; b < bad.size(); ++b) {
      const std::size_t k = bad[b];
      best.final_loss[k] = again.final_loss[b];
      std::copy_n(again.values.begin() + b * len * width, len * width,
                  best.values.begin() + k * len * width);
      std::copy_n(again.final_scores.begin() + b * batch, batch,
                  best.final_scores.begin() + k * batch);
    }
  }

  result.texts.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    // Still worse than the start after all retries: fall back to the init.
    const bool keep = best.final_loss[k] <= start.final_loss[k];
    const RunOut& src = keep ? best : start;
    auto& t = result.texts[k];
    t.embeddings = ad::Tensor::from(
        {len, width}, std::vector<double>(src.values.begin() + k * len * width,
                                          src.values.begin() + (k + 1) * len * width));
    t.anchor = draws[k].i;
    t.partner = draws[k].j;
    t.beta = draws[k].beta;
    t.scores.assign(src.final_scores.begin() + k * batch, src.final_scores.begin() + (k + 1) * batch);
    t.anchor_score = t.scores[t.anchor];
    t.init_loss = start.final_loss[k];
    t.final_loss = src.final_loss[k];
    result.mean_init_loss += t.init_loss / static_cast<double>(count);
    result.mean_final_loss += t.final_loss / static_cast<double>(count);
    if (retried[k]) ++result.retried;
  }
  return result;
}

model::TokenEmbeddings stack(std::span<const PseudoText> texts) {
  if (texts.empty()) throw ContractError("no pseudo texts to stack");
  std::vector<ad::Tensor> parts;
  model::TokenEmbeddings out;
  for (const auto& t : texts) {
    parts.push_back(t.embeddings);
    out.offsets.push_back(out.offsets.back() + t.embeddings.rows());
  }
  out.rows = ad::concat(parts, 0);
  return out;
}

void save_trace(const std::filesystem::path& file, std::uint32_t step,
                std::span<const PseudoText> texts) {
  io::ByteWriter w;
  w.magic(kTraceMagic, kTraceVersion);
  w.u32(step);
  w.u32(static_cast<std::uint32_t>(texts.size()));
  for (const auto& t : texts) {
    w.u32(static_cast<std::uint32_t>(t.embeddings.rows()));
    w.u32(static_cast<std::uint32_t>(t.embeddings.cols()));
    for (double x : t.embeddings.data()) w.f64(x);
    w.u64(t.anchor);
    w.u64(t.partner);
    w.f64(t.beta);
    w.f64(t.init_loss);
    w.f64(t.final_loss);
    w.u32(static_cast<std::uint32_t>(t.scores.size()));
    for (double s : t.scores) w.f64(s);
  }
  w.write_file(file);
}

std::vector<PseudoText> load_trace(const std::filesystem::path& file, std::uint32_t* step) {
  auto r = io::ByteReader::from_file(file);
  r.expect_magic(kTraceMagic, kTraceVersion);
  const std::uint32_t st = r.u32();
  if (step) *step = st;
  const std::uint32_t count = r.u32();
  std::vector<PseudoText> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    PseudoText t;
    const std::uint32_t rows = r.u32(), cols = r.u32();
    r.require(static_cast<std::uint64_t>(rows) * cols, 8, "pseudo embedding");
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = r.f64();
    t.embeddings = ad::Tensor::from({rows, cols}, std::move(v));
    t.anchor = r.u64();
    t.partner = r.u64();
    t.beta = r.f64();
    t.init_loss = r.f64();
    t.final_loss = r.f64();
    const std::uint32_t ns = r.u32();
    r.require(ns, 8, "score list");
    t.scores.resize(ns);
    for (double& s : t.scores) s = r.f64();
    t.anchor_score = t.anchor < t.scores.size() ? t.scores[t.anchor] : 0.0;
    out.push_back(std::move(t));
  }
  r.expect_end();
  return out;
}

}  // namespace cvlp::negtext
