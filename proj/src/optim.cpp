#include "cvlp/optim.hpp"

#include <cmath>
#include <numbers>

#include "cvlp/errors.hpp"

namespace cvlp::ad {

Sgd::Sgd(std::vector<NamedParameter> params, SgdSettings settings)
    : params_(std::move(params)), settings_(settings) {
  if (settings_.momentum < 0.0 || settings_.momentum >= 1.0) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (settings_.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  reset_velocity();
}

void Sgd::reset_velocity() {
  velocity_.clear();
  for (const auto& p : params_) velocity_.emplace_back(p.tensor.size(), 0.0);
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Sgd::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& t = params_[k].tensor;
    auto w = t.mutable_data();
    auto& v = velocity_[k];
    const bool has = t.has_grad();
    const auto g = has ? t.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = settings_.momentum * v[i] + (has ? g[i] : 0.0) + settings_.weight_decay * w[i];
      w[i] -= lr * v[i];
    }
  }
  ++step_count_;
}

double LrSchedule::lr_at(std::uint64_t t) const {
  if (t > total_steps) return 0.0;
  if (t < warmup_steps) {
    return base_lr * static_cast<double>(t) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return base_lr;
  const double progress =
      static_cast<double>(t - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double frobenius_norm(const Tensor& w) {
  double s = 0.0;
  for (double x : w.data()) s += x * x;
  return std::sqrt(s);
}

void clip_weight_norm(Tensor& w, double delta) {
  if (!(delta > 0.0)) throw ContractError("clip_weight_norm needs delta > 0");
  const double norm = frobenius_norm(w);
  if (norm <= delta || norm == 0.0) return;
  const double f = delta / norm;
  for (double& x : w.mutable_data()) x *= f;
}

double clip_grad_norm(std::vector<NamedParameter>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("gradient norm cap must be positive");
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= s;
    }
  }
  return norm;
}

NormClipPolicy::NormClipPolicy(double gamma, std::vector<double> init_norms)
    : gamma_(gamma), init_norms_(std::move(init_norms)) {
  if (!(gamma_ > 0.0)) throw ConfigError("clip gamma must be positive");
}

NormClipPolicy NormClipPolicy::record(const std::vector<NamedParameter>& params, double gamma,
                                      bool include_non_matrices) {
  std::vector<double> norms;
  norms.reserve(params.size());
  for (const auto& p : params) {
    norms.push_back(p.is_weight_matrix || include_non_matrices ? frobenius_norm(p.tensor) : 0.0);
  }
  return NormClipPolicy(gamma, std::move(norms));
}

double NormClipPolicy::apply(std::vector<NamedParameter>& params) const {
  if (params.size() != init_norms_.size()) {
    throw ContractError("norm clip policy covers " + std::to_string(init_norms_.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  double max_ratio = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (init_norms_[i] <= 0.0) continue;
    if (enabled()) clip_weight_norm(params[i].tensor, delta(i));
    max_ratio = std::max(max_ratio, frobenius_norm(params[i].tensor) / init_norms_[i]);
  }
  return max_ratio;
}

}  // namespace cvlp::ad
