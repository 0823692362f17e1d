#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "fab/random.hpp"

namespace fab {

// Points are stored column-wise: a batch of n points in R^d is a d x n matrix.
using Points = Eigen::MatrixXd;

/// Describes a RealNVP-style stack of affine coupling layers on top of a
/// standard Gaussian base distribution.
///
/// Layer `l` transforms the coordinates `i` with `(i + l) % 2 == 0` and
/// conditions on the remaining ones, so consecutive layers flip the mask.
/// Each conditioner is an MLP with SiLU hidden activations whose final affine
/// map emits the raw log-scale (first half) and the shift (second half). The
/// log-scale is squashed to `[-log_scale_bound, log_scale_bound]` by a scaled
/// tanh.
struct FlowArchitecture {
  int dim = 2;
  int n_layers = 2;
  std::vector<int> conditioner_widths{64, 64};
  double log_scale_bound = 4.0;
  std::string base = "standard_normal";

  // Throws ConfigError if the descriptor is unusable, including the case where
  // some coordinate is never transformed.
  void validate() const;

  std::vector<int> transformed_coords(int layer) const;
  std::vector<int> conditioning_coords(int layer) const;

  nlohmann::json to_json() const;
  static FlowArchitecture from_json(const nlohmann::json& j);

  bool operator==(const FlowArchitecture&) const = default;
};

/// Flat offsets of every conditioner tensor. Within a layer the tensors are
/// ordered W0, b0, W1, b1, ..., with weights stored column-major.
class ParameterLayout {
 public:
  struct Tensor {
    std::size_t offset;
    int rows;
    int cols;  // 1 for biases
  };

  explicit ParameterLayout(const FlowArchitecture& arch);

  std::size_t size() const { return size_; }
  int n_tensors_per_layer() const { return tensors_per_layer_; }
  const Tensor& tensor(int layer, int index) const;
  const std::vector<Tensor>& layer_tensors(int layer) const {
    return tensors_.at(layer);
  }
  std::size_t offset(int layer, int tensor, int index) const;

 private:
  std::vector<std::vector<Tensor>> tensors_;
  int tensors_per_layer_ = 0;
  std::size_t size_ = 0;
};

struct FlowOutput {
  Points points;
  Eigen::VectorXd log_det;
};

struct FlowSample {
  Points xs;
  Eigen::VectorXd log_q;
};

struct LogProbGrad {
  Eigen::VectorXd log_q;  // non-finite entries are tagged, never thrown
  Points grad_x;          // column i holds the gradient of log q at xs[i]
};

struct WeightedGrad {
  Eigen::VectorXd grad;
  std::size_t dropped = 0;  // samples whose log q was non-finite
  Eigen::VectorXd log_q;    // per input column, non-finite entries tagged
};

/// A coupling flow together with its parameter vector.
///
/// All members are const and pure; concurrent read-only use is safe. The
/// trainer owns mutation through `mutable_params()`.
class FlowModel {
 public:
  /// Identity-initialised flow: hidden conditioner layers are drawn from
  /// N(0, 1/fan_in) with the given seed, the output layer is zero.
  FlowModel(FlowArchitecture arch, std::uint64_t init_seed);
  FlowModel(FlowArchitecture arch, Eigen::VectorXd params);

  const FlowArchitecture& architecture() const { return arch_; }
  const ParameterLayout& layout() const { return layout_; }
  int dim() const { return arch_.dim; }
  std::size_t num_params() const { return layout_.size(); }

  const Eigen::VectorXd& params() const { return params_; }
  Eigen::VectorXd& mutable_params() { return params_; }
  // Validates length and finiteness.
  void set_params(Eigen::VectorXd params);

  // x = F(z). Throws NumericError naming the first layer that produced a
  // non-finite value.
  FlowOutput forward(const Points& z) const;
  FlowOutput inverse(const Points& x) const;
  std::pair<Eigen::VectorXd, double> forward(const Eigen::VectorXd& z) const;
  std::pair<Eigen::VectorXd, double> inverse(const Eigen::VectorXd& x) const;

  // log q(x) per column; non-finite results are left in place as the tag.
  Eigen::VectorXd log_prob(const Points& x) const;
  // nullopt marks a non-finite density.
  std::optional<double> log_prob(const Eigen::VectorXd& x) const;

  LogProbGrad log_prob_with_grad_x(const Points& x) const;

  FlowSample sample(std::size_t n, Rng& rng) const;

  // Gradient of -sum_i w_i log q(x_i) with xs and weights held constant.
  // Columns with non-finite log q are dropped and counted.
  WeightedGrad grad_weighted_neg_logprob(const Points& x,
                                         const Eigen::VectorXd& weights) const;
  // Same, with weights computed from log q of the very same pass. The
  // callback sees every column; weights at non-finite log q are ignored.
  WeightedGrad grad_reweighted_neg_logprob(
      const Points& x,
      const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& weights_of_log_q)
      const;

  // Parameter gradient of sum_i [cot_x_i . F(z_i) + cot_logdet_i *
  // logdet_i] for the forward pass; used for reparameterised losses.
  Eigen::VectorXd forward_vjp(const Points& z, const Points& cot_x,
                              const Eigen::VectorXd& cot_logdet) const;

  static double base_log_prob(const Eigen::VectorXd& z);

 private:
  struct Pass;

  const std::vector<ParameterLayout::Tensor>& layout_tensors(int layer) const;
  void run_inverse(const Points& x, Pass* pass) const;
  void run_forward(const Points& z, Pass* pass) const;
  void backward_inverse(const Pass& pass, const Eigen::VectorXd& coeffs,
                        Eigen::VectorXd* grad_params, Points* grad_x) const;

  FlowArchitecture arch_;
  ParameterLayout layout_;
  Eigen::VectorXd params_;
  std::vector<std::vector<int>> active_;
  std::vector<std::vector<int>> cond_;
};

}  // namespace fab
