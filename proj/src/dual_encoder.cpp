#include "cvlp/dual_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cvlp/binary_io.hpp"
#include "cvlp/errors.hpp"
#include "cvlp/ops.hpp"

namespace cvlp::model {

namespace {

constexpr char kModelMagic[] = "CVLM";
constexpr std::uint8_t kModelVersion = 1;
constexpr double kDegenerateNorm = 1e-12;

ad::NamedParameter gaussian(const std::string& name, ad::Shape shape, double std,
                            std::mt19937_64& rng, bool matrix) {
  std::normal_distribution<double> normal(0.0, std);
  std::vector<double> v(shape.size());
  for (double& x : v) x = normal(rng);
  return {name, ad::Tensor::from(shape, std::move(v), true), matrix};
}

ad::NamedParameter zeros(const std::string& name, ad::Shape shape) {
  return {name, ad::Tensor::zeros(shape, true), false};
}

ad::Tensor checked_normalize(const ad::Tensor& x, const char* what) {
  const std::size_t cols = x.cols();
  const auto v = x.data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += v[r * cols + c] * v[r * cols + c];
    if (!std::isfinite(s)) throw NumericError(std::string(what) + " encoding is not finite");
    if (std::sqrt(s) < kDegenerateNorm) {
      throw NumericError(std::string(what) + " encoding of row " + std::to_string(r) +
                         " has near-zero norm before normalization");
    }
  }
  return ad::normalize_rows(x);
}

}  // namespace

void TokenBatch::push(std::span<const std::int32_t> seq) {
  if (seq.empty()) throw ContractError("empty token sequence");
  ids.insert(ids.end(), seq.begin(), seq.end());
  offsets.push_back(ids.size());
}

TokenBatch TokenBatch::of(std::span<const stream::PairSample> samples) {
  TokenBatch b;
  for (const auto& s : samples) b.push(s.tokens);
  return b;
}

ad::Tensor image_matrix(std::span<const stream::PairSample> samples) {
  if (samples.empty()) throw ContractError("image batch is empty");
  const std::size_t d = samples.front().image_feat.size();
  std::vector<double> v;
  v.reserve(samples.size() * d);
  for (const auto& s : samples) {
    if (s.image_feat.size() != d) throw DimensionError("image features of mixed width");
    v.insert(v.end(), s.image_feat.begin(), s.image_feat.end());
  }
  return ad::Tensor::from({samples.size(), d}, std::move(v));
}

DualEncoder::DualEncoder(const ModelDims& dims, std::uint64_t seed) : dims_(dims) {
  if (dims.d_img < 1 || dims.d_tok < 1 || dims.d_emb < 1 || dims.hidden < 1 ||
      dims.vocab_size < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (!(dims.init_tau > 0.0) || !(dims.min_tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(dims.min_tau <= dims.init_tau && dims.init_tau <= dims.max_tau)) {
    throw ConfigError("init_tau must lie in [min_tau, max_tau]");
  }
  std::mt19937_64 rng(seed);
  const auto u = [](std::int32_t x) { return static_cast<std::size_t>(x); };
  // Fan-in scaling keeps activations O(1) so the output normalization does
  // not amplify bias gradients.
  const auto sd = [&dims](std::int32_t fan_in) {
    return dims.fan_in_init ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : dims.init_std;
  };
  params_.push_back(gaussian("img.w1", {u(dims.d_img), u(dims.hidden)}, sd(dims.d_img), rng, true));
  params_.push_back(zeros("img.b1", {1, u(dims.hidden)}));
  params_.push_back(gaussian("img.w2", {u(dims.hidden), u(dims.d_emb)}, sd(dims.hidden), rng, true));
  params_.push_back(zeros("img.b2", {1, u(dims.d_emb)}));
  params_.push_back(gaussian("tok.embed", {u(dims.vocab_size), u(dims.d_tok)},
                             dims.fan_in_init ? 1.0 : dims.init_std, rng, false));
  params_.push_back(gaussian("txt.w1", {u(dims.d_tok), u(dims.hidden)}, sd(dims.d_tok), rng, true));
  params_.push_back(zeros("txt.b1", {1, u(dims.hidden)}));
  params_.push_back(gaussian("txt.w2", {u(dims.hidden), u(dims.d_emb)}, sd(dims.hidden), rng, true));
  params_.push_back(zeros("txt.b2", {1, u(dims.d_emb)}));
  params_.push_back({"logit_scale", ad::Tensor::scalar(std::log(1.0 / dims.init_tau), true), false});
  for (const auto& p : params_) {
    init_norms_.push_back(p.is_weight_matrix ? ad::frobenius_norm(p.tensor) : 0.0);
  }
}

ad::Tensor DualEncoder::mlp(const ad::Tensor& x, std::size_t w1) const {
  auto h = ad::add(ad::matmul(x, params_[w1].tensor), params_[w1 + 1].tensor);
  h = dims_.activation == Activation::gelu ? ad::gelu(h) : ad::relu(h);
  return ad::add(ad::matmul(h, params_[w1 + 2].tensor), params_[w1 + 3].tensor);
}

ad::Tensor DualEncoder::encode_images(const ad::Tensor& image_feats) const {
  if (image_feats.cols() != static_cast<std::size_t>(dims_.d_img)) {
    throw DimensionError("image features have width " + std::to_string(image_feats.cols()) +
                         ", model expects " + std::to_string(dims_.d_img));
  }
  for (double x : image_feats.data()) {
    if (!std::isfinite(x)) throw NumericError("non-finite image feature");
  }
  return checked_normalize(mlp(image_feats, kImgW1), "image");
}

TokenEmbeddings DualEncoder::embed_tokens(const TokenBatch& tokens) const {
  if (tokens.count() == 0) throw ContractError("token batch is empty");
  for (auto id : tokens.ids) {
    if (id < 0 || id >= dims_.vocab_size) {
      throw OutOfVocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                                 std::to_string(dims_.vocab_size));
    }
  }
  return {ad::gather_rows(params_[kEmbed].tensor, tokens.ids), tokens.offsets};
}

ad::Tensor DualEncoder::pooled(const TokenEmbeddings& emb) const {
  if (emb.rows.cols() != static_cast<std::size_t>(dims_.d_tok)) {
    throw DimensionError("token embeddings have width " + std::to_string(emb.rows.cols()) +
                         ", model expects " + std::to_string(dims_.d_tok));
  }
  return ad::segment_mean(emb.rows, emb.offsets);
}

ad::Tensor DualEncoder::encode_text_from_embeddings(const TokenEmbeddings& emb) const {
  return checked_normalize(mlp(pooled(emb), kTxtW1), "text");
}

ad::Tensor DualEncoder::logit_scale() const { return ad::exp(params_[kLogitScale].tensor); }

double DualEncoder::tau() const { return std::exp(-params_[kLogitScale].tensor.item()); }

void DualEncoder::clamp_temperature() {
  const double hi = std::log(1.0 / dims_.min_tau), lo = std::log(1.0 / dims_.max_tau);
  auto v = params_[kLogitScale].tensor.mutable_data();
  v[0] = std::clamp(v[0], lo, hi);
}

const ad::Tensor& DualEncoder::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ContractError("no parameter named '" + name + "'");
}

DualEncoder DualEncoder::copy(bool trainable) const {
  DualEncoder out;
  out.dims_ = dims_;
  out.init_norms_ = init_norms_;
  out.params_.reserve(params_.size());
  for (const auto& p : params_) out.params_.push_back({p.name, p.tensor.clone(trainable), p.is_weight_matrix});
  return out;
}

bool DualEncoder::trainable() const {
  return std::any_of(params_.begin(), params_.end(),
                     [](const auto& p) { return p.tensor.requires_grad(); });
}

bool DualEncoder::same_weights(const DualEncoder& other) const {
  if (!(dims_ == other.dims_) || params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto a = params_[i].tensor.data(), b = other.params_[i].tensor.data();
    if (a.size() != b.size() || !std::equal(a.begin(), a.end(), b.begin())) return false;
  }
  return true;
}

void DualEncoder::save(const std::filesystem::path& file) const {
  io::ByteWriter w;
  w.magic(kModelMagic, kModelVersion);
  for (auto d : {dims_.d_img, dims_.d_tok, dims_.d_emb, dims_.hidden, dims_.vocab_size}) {
    w.i32(d);
  }
  w.u8(static_cast<std::uint8_t>(dims_.activation));
  w.u8(dims_.fan_in_init ? 1 : 0);
  w.f64(dims_.init_std);
  w.f64(dims_.init_tau);
  w.f64(dims_.min_tau);
  w.f64(dims_.max_tau);
  w.u32(static_cast<std::uint32_t>(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    w.str(p.name);
    w.u8(p.is_weight_matrix ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(p.tensor.rows()));
    w.u32(static_cast<std::uint32_t>(p.tensor.cols()));
    w.f64(init_norms_[i]);
    for (double x : p.tensor.data()) w.f64(x);
  }
  w.write_file(file);
}

DualEncoder DualEncoder::load(const std::filesystem::path& file) {
  auto r = io::ByteReader::from_file(file);
  r.expect_magic(kModelMagic, kModelVersion);
  DualEncoder m;
  m.dims_.d_img = r.i32();
  m.dims_.d_tok = r.i32();
  m.dims_.d_emb = r.i32();
  m.dims_.hidden = r.i32();
  m.dims_.vocab_size = r.i32();
  const auto act_at = r.offset();
  const std::uint8_t act = r.u8();
  if (act > 1) throw FormatError("unknown activation", act_at);
  m.dims_.activation = static_cast<Activation>(act);
  m.dims_.fan_in_init = r.u8() != 0;
  m.dims_.init_std = r.f64();
  m.dims_.init_tau = r.f64();
  m.dims_.min_tau = r.f64();
  m.dims_.max_tau = r.f64();
  // Reference layout to validate names and shapes against.
  const DualEncoder ref(m.dims_, 0);
  const auto count_at = r.offset();
  const std::uint32_t count = r.u32();
  if (count != ref.params_.size()) throw FormatError("unexpected parameter count", count_at);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    std::string name = r.str();
    const bool matrix = r.u8() != 0;
    const std::uint32_t rows = r.u32(), cols = r.u32();
    const auto& want = ref.params_[i];
    if (name != want.name || ad::Shape{rows, cols} != want.tensor.shape()) {
      throw FormatError("parameter '" + name + "' does not match the model layout", at);
    }
    m.init_norms_.push_back(r.f64());
    r.require(static_cast<std::uint64_t>(rows) * cols, 8, "parameter data");
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = r.f64();
    m.params_.push_back({std::move(name), ad::Tensor::from({rows, cols}, std::move(v), true), matrix});
  }
  r.expect_end();
  return m;
}

ad::Tensor similarity(const ad::Tensor& image_emb, const ad::Tensor& text_emb) {
  if (image_emb.cols() != text_emb.cols()) {
    throw DimensionError("similarity: embedding widths differ, " + image_emb.shape().str() +
                         " vs " + text_emb.shape().str());
  }
  return ad::matmul_nt(image_emb, text_emb);
}

}  // namespace cvlp::model
