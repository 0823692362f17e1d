#include "fab/flow.hpp"

#include <cmath>
#include <utility>

#include "fab/errors.hpp"

namespace fab {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

using Tensors = std::vector<ParameterLayout::Tensor>;
using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using Map = Eigen::Map<Eigen::MatrixXd>;

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& a) {
  return 1.0 / (1.0 + (-a).exp());
}

struct LayerCache {
  std::vector<Eigen::MatrixXd> acts;  // acts[0] is the conditioner input
  std::vector<Eigen::MatrixXd> pres;  // hidden pre-activations
  Eigen::MatrixXd tanh_raw;
  Eigen::MatrixXd log_scale;
  Eigen::MatrixXd shift;
  Eigen::MatrixXd out_active;
};

// Runs the conditioner MLP on `in` and returns the (2a x B) raw output.
Eigen::MatrixXd conditioner(const double* p, const Tensors& ts,
                            const Eigen::MatrixXd& in, LayerCache* cache) {
  const std::size_t n_lin = ts.size() / 2;
  Eigen::MatrixXd h = in;
  if (cache) {
    cache->acts.assign(1, in);
    cache->pres.clear();
  }
  for (std::size_t k = 0; k < n_lin; ++k) {
    const auto& tw = ts[2 * k];
    const auto& tb = ts[2 * k + 1];
    ConstMap w(p + tw.offset, tw.rows, tw.cols);
    Eigen::Map<const Eigen::VectorXd> b(p + tb.offset, tb.rows);
    Eigen::MatrixXd pre = w * h;
    pre.colwise() += b;
    if (k + 1 == n_lin) return pre;
    Eigen::MatrixXd act = (pre.array() * sigmoid(pre.array())).matrix();
    if (cache) {
      cache->pres.push_back(pre);
      cache->acts.push_back(act);
    }
    h = std::move(act);
  }
  return h;  // unreachable: there is always an output map
}

// Backpropagates through the conditioner. Accumulates parameter gradients
// into `grad` when non-null and returns the gradient w.r.t. its input.
Eigen::MatrixXd conditioner_backward(const double* p, double* grad,
                                     const Tensors& ts, const LayerCache& c,
                                     Eigen::MatrixXd g) {
  const std::size_t n_lin = ts.size() / 2;
  for (std::size_t k = n_lin; k-- > 0;) {
    if (k + 1 < n_lin) {
      const Eigen::ArrayXXd& pre = c.pres[k].array();
      const Eigen::ArrayXXd sig = sigmoid(pre);
      g = (g.array() * sig * (1.0 + pre * (1.0 - sig))).matrix();
    }
    const auto& tw = ts[2 * k];
    const auto& tb = ts[2 * k + 1];
    if (grad) {
      Map gw(grad + tw.offset, tw.rows, tw.cols);
      Eigen::Map<Eigen::VectorXd> gb(grad + tb.offset, tb.rows);
      gw.noalias() += g * c.acts[k].transpose();
      gb.noalias() += g.rowwise().sum();
    }
    ConstMap w(p + tw.offset, tw.rows, tw.cols);
    g = w.transpose() * g;
  }
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// FlowArchitecture

void FlowArchitecture::validate() const {
  if (dim < 1) throw ConfigError("flow dim must be positive");
  if (n_layers < 1) throw ConfigError("flow n_layers must be positive");
  if (conditioner_widths.empty())
    throw ConfigError("conditioner_widths must list at least one hidden width");
  for (int w : conditioner_widths)
    if (w < 1) throw ConfigError("conditioner widths must be positive");
  if (!(log_scale_bound > 0.0) || !std::isfinite(log_scale_bound))
    throw ConfigError("log_scale_bound must be a positive finite number");
  if (base != "standard_normal")
    throw ConfigError("unsupported base distribution '" + base + "'");
  std::vector<bool> covered(dim, false);
  for (int l = 0; l < n_layers; ++l)
    for (int i : transformed_coords(l)) covered[i] = true;
  for (int i = 0; i < dim; ++i)
    if (!covered[i])
      throw ConfigError("coordinate " + std::to_string(i) +
                        " is never transformed; use at least 2 layers");
}

std::vector<int> FlowArchitecture::transformed_coords(int layer) const {
  std::vector<int> out;
  for (int i = 0; i < dim; ++i)
    if ((i + layer) % 2 == 0) out.push_back(i);
  return out;
}

std::vector<int> FlowArchitecture::conditioning_coords(int layer) const {
  std::vector<int> out;
  for (int i = 0; i < dim; ++i)
    if ((i + layer) % 2 != 0) out.push_back(i);
  return out;
}

nlohmann::json FlowArchitecture::to_json() const {
  return {{"dim", dim},
          {"n_layers", n_layers},
          {"conditioner_widths", conditioner_widths},
          {"log_scale_bound", log_scale_bound},
          {"base", base}};
}

FlowArchitecture FlowArchitecture::from_json(const nlohmann::json& j) {
  FlowArchitecture a;
  for (const auto& [key, value] : j.items()) {
    if (key == "dim") {
      a.dim = value.get<int>();
    } else if (key == "n_layers") {
      a.n_layers = value.get<int>();
    } else if (key == "conditioner_widths") {
      a.conditioner_widths = value.get<std::vector<int>>();
    } else if (key == "log_scale_bound") {
      a.log_scale_bound = value.get<double>();
    } else if (key == "base") {
      a.base = value.get<std::string>();
    } else {
      throw ConfigError("unknown flow key '" + key + "'");
    }
  }
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// ParameterLayout

ParameterLayout::ParameterLayout(const FlowArchitecture& arch) {
  arch.validate();
  tensors_.resize(arch.n_layers);
  for (int l = 0; l < arch.n_layers; ++l) {
    int in = static_cast<int>(arch.conditioning_coords(l).size());
    const int out = 2 * static_cast<int>(arch.transformed_coords(l).size());
    std::vector<int> widths = arch.conditioner_widths;
    widths.push_back(out);
    for (int w : widths) {
      tensors_[l].push_back({size_, w, in});
      size_ += static_cast<std::size_t>(w) * in;
      tensors_[l].push_back({size_, w, 1});
      size_ += w;
      in = w;
    }
  }
  tensors_per_layer_ = static_cast<int>(tensors_.front().size());
}

const ParameterLayout::Tensor& ParameterLayout::tensor(int layer,
                                                       int index) const {
  return tensors_.at(layer).at(index);
}

std::size_t ParameterLayout::offset(int layer, int tensor_index,
                                    int index) const {
  const Tensor& t = tensor(layer, tensor_index);
  if (index < 0 || index >= t.rows * t.cols)
    throw ConfigError("parameter index out of range");
  return t.offset + static_cast<std::size_t>(index);
}

// ---------------------------------------------------------------------------
// FlowModel

struct FlowModel::Pass {
  bool keep_cache = false;
  std::vector<LayerCache> layers;
  Points out;
  Eigen::VectorXd log_det;
  int first_bad_layer = -1;
};

FlowModel::FlowModel(FlowArchitecture arch, std::uint64_t init_seed)
    : arch_(std::move(arch)), layout_(arch_) {
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout_.size()));
  Rng rng(init_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n_lin = layout_.n_tensors_per_layer() / 2;
  for (int l = 0; l < arch_.n_layers; ++l) {
    // The output map stays zero so the flow starts as the identity.
    for (int k = 0; k + 1 < n_lin; ++k) {
      const auto& t = layout_.tensor(l, 2 * k);
      const double scale = t.cols > 0 ? 1.0 / std::sqrt(t.cols) : 0.0;
      for (int i = 0; i < t.rows * t.cols; ++i)
        params_[static_cast<Eigen::Index>(t.offset) + i] = scale * normal(rng);
    }
  }
  for (int l = 0; l < arch_.n_layers; ++l) {
    active_.push_back(arch_.transformed_coords(l));
    cond_.push_back(arch_.conditioning_coords(l));
  }
}

FlowModel::FlowModel(FlowArchitecture arch, Eigen::VectorXd params)
    : arch_(std::move(arch)), layout_(arch_) {
  for (int l = 0; l < arch_.n_layers; ++l) {
    active_.push_back(arch_.transformed_coords(l));
    cond_.push_back(arch_.conditioning_coords(l));
  }
  set_params(std::move(params));
}

void FlowModel::set_params(Eigen::VectorXd params) {
  if (static_cast<std::size_t>(params.size()) != layout_.size())
    throw ConfigError("parameter vector has length " +
                      std::to_string(params.size()) + ", expected " +
                      std::to_string(layout_.size()));
  if (!params.allFinite())
    throw ConfigError("parameter vector contains non-finite entries");
  params_ = std::move(params);
}

double FlowModel::base_log_prob(const Eigen::VectorXd& z) {
  return -0.5 * z.squaredNorm() - 0.5 * static_cast<double>(z.size()) * kLogTwoPi;
}

void FlowModel::run_inverse(const Points& x, Pass* pass) const {
  if (x.rows() != arch_.dim)
    throw ConfigError("point dimension " + std::to_string(x.rows()) +
                      " does not match flow dimension " +
                      std::to_string(arch_.dim));
  const double bound = arch_.log_scale_bound;
  Points y = x;
  pass->log_det = Eigen::VectorXd::Zero(x.cols());
  if (pass->keep_cache) pass->layers.assign(arch_.n_layers, LayerCache{});
  LayerCache scratch;
  for (int l = arch_.n_layers - 1; l >= 0; --l) {
    LayerCache& c = pass->keep_cache ? pass->layers[l] : scratch;
    const auto& act = active_[l];
    const auto& cond = cond_[l];
    const Eigen::Index a = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd in = y(cond, Eigen::all);
    Eigen::MatrixXd raw = conditioner(params_.data(), layout_tensors(l), in,
                                      pass->keep_cache ? &c : nullptr);
    c.tanh_raw = (raw.topRows(a).array() / bound).tanh().matrix();
    c.log_scale = bound * c.tanh_raw;
    c.shift = raw.bottomRows(a);
    c.out_active = ((y(act, Eigen::all) - c.shift).array() *
                    (-c.log_scale.array()).exp())
                       .matrix();
    y(act, Eigen::all) = c.out_active;
    pass->log_det -= c.log_scale.colwise().sum().transpose();
    if (pass->first_bad_layer < 0 && !y.allFinite()) pass->first_bad_layer = l;
  }
  pass->out = std::move(y);
}

void FlowModel::run_forward(const Points& z, Pass* pass) const {
  if (z.rows() != arch_.dim)
    throw ConfigError("point dimension " + std::to_string(z.rows()) +
                      " does not match flow dimension " +
                      std::to_string(arch_.dim));
  const double bound = arch_.log_scale_bound;
  Points y = z;
  pass->log_det = Eigen::VectorXd::Zero(z.cols());
  if (pass->keep_cache) pass->layers.assign(arch_.n_layers, LayerCache{});
  LayerCache scratch;
  for (int l = 0; l < arch_.n_layers; ++l) {
    LayerCache& c = pass->keep_cache ? pass->layers[l] : scratch;
    const auto& act = active_[l];
    const auto& cond = cond_[l];
    const Eigen::Index a = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd in = y(cond, Eigen::all);
    Eigen::MatrixXd raw = conditioner(params_.data(), layout_tensors(l), in,
                                      pass->keep_cache ? &c : nullptr);
    c.tanh_raw = (raw.topRows(a).array() / bound).tanh().matrix();
    c.log_scale = bound * c.tanh_raw;
    c.shift = raw.bottomRows(a);
    c.out_active = (y(act, Eigen::all).array() * c.log_scale.array().exp() +
                    c.shift.array())
                       .matrix();
    y(act, Eigen::all) = c.out_active;
    pass->log_det += c.log_scale.colwise().sum().transpose();
    if (pass->first_bad_layer < 0 && !y.allFinite()) pass->first_bad_layer = l;
  }
  pass->out = std::move(y);
}

const std::vector<ParameterLayout::Tensor>& FlowModel::layout_tensors(
    int layer) const {
  return layout_.layer_tensors(layer);
}

FlowOutput FlowModel::forward(const Points& z) const {
  Pass pass;
  run_forward(z, &pass);
  if (pass.first_bad_layer >= 0)
    throw NumericError("non-finite value in forward pass", pass.first_bad_layer);
  return {std::move(pass.out), std::move(pass.log_det)};
}

FlowOutput FlowModel::inverse(const Points& x) const {
  Pass pass;
  run_inverse(x, &pass);
  if (pass.first_bad_layer >= 0)
    throw NumericError("non-finite value in inverse pass", pass.first_bad_layer);
  return {std::move(pass.out), std::move(pass.log_det)};
}

std::pair<Eigen::VectorXd, double> FlowModel::forward(
    const Eigen::VectorXd& z) const {
  FlowOutput out = forward(Points(z));
  return {out.points.col(0), out.log_det[0]};
}

std::pair<Eigen::VectorXd, double> FlowModel::inverse(
    const Eigen::VectorXd& x) const {
  FlowOutput out = inverse(Points(x));
  return {out.points.col(0), out.log_det[0]};
}

Eigen::VectorXd FlowModel::log_prob(const Points& x) const {
  Pass pass;
  run_inverse(x, &pass);
  const double norm = 0.5 * arch_.dim * kLogTwoPi;
  Eigen::VectorXd out =
      -0.5 * pass.out.colwise().squaredNorm().transpose() + pass.log_det;
  out.array() -= norm;
  return out;
}

std::optional<double> FlowModel::log_prob(const Eigen::VectorXd& x) const {
  const double v = log_prob(Points(x))[0];
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

void FlowModel::backward_inverse(const Pass& pass, const Eigen::VectorXd& coeffs,
                                 Eigen::VectorXd* grad_params,
                                 Points* grad_x) const {
  // d/dz of c_i log N(z_i)
  Points g = -(pass.out.array().rowwise() * coeffs.transpose().array()).matrix();
  double* gp = grad_params ? grad_params->data() : nullptr;
  for (int l = 0; l < arch_.n_layers; ++l) {
    const LayerCache& c = pass.layers[l];
    const auto& act = active_[l];
    const auto& cond = cond_[l];
    const Eigen::Index a = static_cast<Eigen::Index>(act.size());
    const Eigen::ArrayXXd ga = g(act, Eigen::all).array();
    const Eigen::ArrayXXd e = (-c.log_scale.array()).exp();
    Eigen::MatrixXd g_out(2 * a, g.cols());
    // log-scale: through u = (y - t) e^{-s} and the -sum(s) log-det term
    Eigen::ArrayXXd g_s = -ga * c.out_active.array();
    g_s.rowwise() -= coeffs.transpose().array();
    g_out.topRows(a) =
        (g_s * (1.0 - c.tanh_raw.array().square())).matrix();
    g_out.bottomRows(a) = (-ga * e).matrix();
    Eigen::MatrixXd g_cond = conditioner_backward(
        params_.data(), gp, layout_tensors(l), c, std::move(g_out));
    g(act, Eigen::all) = (ga * e).matrix();
    g(cond, Eigen::all) += g_cond;
  }
  if (grad_x) *grad_x = std::move(g);
}

LogProbGrad FlowModel::log_prob_with_grad_x(const Points& x) const {
  Pass pass;
  pass.keep_cache = true;
  run_inverse(x, &pass);
  LogProbGrad out;
  out.log_q = -0.5 * pass.out.colwise().squaredNorm().transpose() + pass.log_det;
  out.log_q.array() -= 0.5 * arch_.dim * kLogTwoPi;
  // Columns never mix when only input gradients are requested, so a
  // non-finite sample cannot contaminate the others.
  backward_inverse(pass, Eigen::VectorXd::Ones(x.cols()), nullptr, &out.grad_x);
  return out;
}

WeightedGrad FlowModel::grad_weighted_neg_logprob(
    const Points& x, const Eigen::VectorXd& weights) const {
  if (weights.size() != x.cols())
    throw ConfigError("weights and points differ in length");
  if (!weights.allFinite()) throw ConfigError("weights must be finite");
  return grad_reweighted_neg_logprob(
      x, [&weights](const Eigen::VectorXd&) { return weights; });
}

WeightedGrad FlowModel::grad_reweighted_neg_logprob(
    const Points& x,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& weights_of_log_q)
    const {
  if (!x.allFinite()) throw ConfigError("points must be finite");
  WeightedGrad out;
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_params()));
  if (x.cols() == 0) return out;

  Pass pass;
  pass.keep_cache = true;
  run_inverse(x, &pass);
  out.log_q = -0.5 * pass.out.colwise().squaredNorm().transpose() + pass.log_det;
  out.log_q.array() -= 0.5 * arch_.dim * kLogTwoPi;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < out.log_q.size(); ++i)
    if (std::isfinite(out.log_q[i])) keep.push_back(i);
  out.dropped = static_cast<std::size_t>(x.cols()) - keep.size();
  if (keep.empty()) return out;

  const Eigen::VectorXd weights = weights_of_log_q(out.log_q);
  if (weights.size() != x.cols())
    throw ConfigError("weights and points differ in length");
  if (!weights(keep).allFinite()) throw ConfigError("weights must be finite");
  if (out.dropped > 0) {
    // Rerun without the offending columns; their NaNs would otherwise leak
    // into every parameter gradient through the matrix products.
    Pass clean;
    clean.keep_cache = true;
    run_inverse(x(Eigen::all, keep), &clean);
    backward_inverse(clean, -weights(keep), &out.grad, nullptr);
    return out;
  }
  backward_inverse(pass, -weights, &out.grad, nullptr);
  return out;
}

FlowSample FlowModel::sample(std::size_t n, Rng& rng) const {
  if (n == 0) throw ConfigError("sample count must be at least 1");
  const Points z = standard_normal(arch_.dim, static_cast<Eigen::Index>(n), rng);
  FlowOutput fwd = forward(z);
  FlowSample out;
  out.log_q = -0.5 * z.colwise().squaredNorm().transpose() - fwd.log_det;
  out.log_q.array() -= 0.5 * arch_.dim * kLogTwoPi;
  out.xs = std::move(fwd.points);
  return out;
}

Eigen::VectorXd FlowModel::forward_vjp(const Points& z, const Points& cot_x,
                                       const Eigen::VectorXd& cot_logdet) const {
  if (cot_x.rows() != z.rows() || cot_x.cols() != z.cols() ||
      cot_logdet.size() != z.cols())
    throw ConfigError("cotangent shapes do not match the input batch");
  Pass pass;
  pass.keep_cache = true;
  run_forward(z, &pass);
  if (pass.first_bad_layer >= 0)
    throw NumericError("non-finite value in forward pass", pass.first_bad_layer);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_params()));
  Points g = cot_x;
  for (int l = arch_.n_layers - 1; l >= 0; --l) {
    const LayerCache& c = pass.layers[l];
    const auto& act = active_[l];
    const auto& cond = cond_[l];
    const Eigen::Index a = static_cast<Eigen::Index>(act.size());
    const Eigen::ArrayXXd ga = g(act, Eigen::all).array();
    const Eigen::ArrayXXd es = c.log_scale.array().exp();
    Eigen::MatrixXd g_out(2 * a, g.cols());
    // x = y e^s + t, so dx/ds = x - t
    Eigen::ArrayXXd g_s = ga * (c.out_active - c.shift).array();
    g_s.rowwise() += cot_logdet.transpose().array();
    g_out.topRows(a) = (g_s * (1.0 - c.tanh_raw.array().square())).matrix();
    g_out.bottomRows(a) = ga.matrix();
    Eigen::MatrixXd g_cond = conditioner_backward(
        params_.data(), grad.data(), layout_tensors(l), c, std::move(g_out));
    g(act, Eigen::all) = (ga * es).matrix();
    g(cond, Eigen::all) += g_cond;
  }
  return grad;
}

}  // namespace fab
