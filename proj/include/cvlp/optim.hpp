#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cvlp/tensor.hpp"

namespace cvlp::ad {

struct NamedParameter {
  std::string name;
  Tensor tensor;
  // Weight matrices take part in norm clipping; biases, gains and embedding
  // tables do not unless the policy is told otherwise.
  bool is_weight_matrix = false;
};

struct SgdSettings {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// SGD with heavy-ball momentum and L2 weight decay folded into the velocity:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
class Sgd {
 public:
  Sgd(std::vector<NamedParameter> params, SgdSettings settings);

  // Throws NumericError naming the first parameter with a non-finite gradient.
  // Parameters without a gradient buffer are treated as having zero gradient.
  void step(double lr);
  void zero_grad();
  void reset_velocity();

  const SgdSettings& settings() const noexcept { return settings_; }
  std::uint64_t step_count() const noexcept { return step_count_; }
  const std::vector<std::vector<double>>& velocity() const noexcept { return velocity_; }
  const std::vector<NamedParameter>& params() const noexcept { return params_; }

 private:
  std::vector<NamedParameter> params_;
  SgdSettings settings_;
  std::vector<std::vector<double>> velocity_;
  std::uint64_t step_count_ = 0;
};

// Linear warmup to base_lr, then cosine decay to zero at total_steps.
struct LrSchedule {
  double base_lr = 0.1;
  std::uint64_t warmup_steps = 0;
  std::uint64_t total_steps = 1;

  double lr_at(std::uint64_t t) const;
};

double frobenius_norm(const Tensor& w);

// Scales every gradient by min(1, max_norm / g) where g is the global L2 norm
// over all parameters' gradients, and returns g. max_norm = +inf only measures.
double clip_grad_norm(std::vector<NamedParameter>& params, double max_norm);

// Rescales w in place to norm delta when its norm exceeds delta. A zero
// matrix is left alone.
void clip_weight_norm(Tensor& w, double delta);

// Per-layer caps delta_l = gamma * ||W_l||_init. gamma = +inf disables.
class NormClipPolicy {
 public:
  NormClipPolicy() = default;
  NormClipPolicy(double gamma, std::vector<double> init_norms);

  // Records init norms of the matrices selected for clipping; other entries
  // get 0 and are never clipped.
  static NormClipPolicy record(const std::vector<NamedParameter>& params, double gamma,
                               bool include_non_matrices = false);

  bool enabled() const noexcept { return gamma_ != std::numeric_limits<double>::infinity(); }
  double gamma() const noexcept { return gamma_; }
  const std::vector<double>& init_norms() const noexcept { return init_norms_; }
  double delta(std::size_t i) const { return gamma_ * init_norms_.at(i); }

  // Clips every recorded layer (when enabled) and returns
  // max_l ||W_l|| / ||W_l||_init afterwards.
  double apply(std::vector<NamedParameter>& params) const;

 private:
  double gamma_ = std::numeric_limits<double>::infinity();
  std::vector<double> init_norms_;
};

}  // namespace cvlp::ad
