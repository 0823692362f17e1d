#include "fab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "fab/errors.hpp"

namespace fab {

namespace {

using nlohmann::json;

// Reports errors as "<source>:<line>: message", locating keys in the raw
// text by searching for each path component in turn.
class Locator {
 public:
  Locator(const std::string& text, std::string source)
      : text_(text), source_(std::move(source)) {}

  int line_of(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    for (const auto& key : path) {
      const std::size_t p = text_.find("\"" + key + "\"", pos);
      if (p == std::string::npos) break;
      pos = p;
    }
    return line_at(pos);
  }

  int line_at(std::size_t pos) const {
    pos = std::min(pos, text_.size());
    return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
  }

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& msg) const {
    throw ConfigError(source_ + ":" + std::to_string(line_of(path)) + ": " + msg);
  }

  const std::string& source() const { return source_; }

 private:
  const std::string& text_;
  std::string source_;
};

/// Reads one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::vector<std::string> path, const Locator& loc)
      : j_(j), path_(std::move(path)), loc_(loc) {
    if (!j_.is_object()) loc_.fail(path_, where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      loc_.fail(sub(key), "wrong type for '" + key + "'" + in());
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), sub(key), loc_);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        loc_.fail(sub(it.key()), "unknown key '" + it.key() + "'" + in());
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    loc_.fail(sub(key), msg);
  }

  std::vector<std::string> sub(const std::string& key) const {
    auto p = path_;
    p.push_back(key);
    return p;
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_.back() + "'"; }
  std::string in() const { return path_.empty() ? "" : " in '" + path_.back() + "'"; }

  const json& j_;
  std::vector<std::string> path_;
  const Locator& loc_;
  std::set<std::string> seen_;
};

template <typename Fn>
void checked(Section& s, const std::string& key, Fn fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    s.fail(key, e.what());
  }
}

TargetConfig parse_target(Section s) {
  TargetConfig t;
  t.kind = s.get<std::string>("kind", t.kind);
  t.seed = s.get<std::uint64_t>("seed", t.seed);
  t.n_pairs = s.get<int>("n_pairs", t.n_pairs);
  t.mean = s.get<std::vector<double>>("mean", t.mean);
  t.stddev = s.get<std::vector<double>>("stddev", t.stddev);
  s.finish();
  if (t.kind != "gmm40" && t.kind != "manywell" && t.kind != "gaussian")
    s.fail("kind", "unknown target kind '" + t.kind + "'");
  if (t.kind == "manywell" && t.n_pairs < 1) s.fail("n_pairs", "n_pairs must be >= 1");
  if (t.kind == "gaussian") {
    if (t.mean.empty() || t.mean.size() != t.stddev.size())
      s.fail("mean", "gaussian target needs mean and stddev of equal, non-zero length");
    for (double v : t.stddev)
      if (!(v > 0.0)) s.fail("stddev", "stddev entries must be positive");
  }
  return t;
}

KernelConfig parse_kernel(Section s, int n_intermediate) {
  const std::string type = s.get<std::string>("type", "metropolis");
  if (type == "metropolis") {
    MetropolisConfig m;
    m.sigma = s.get<double>("sigma", m.sigma);
    m.n_steps = s.get<int>("n_steps", m.n_steps);
    s.finish();
    if (!(m.sigma > 0.0)) s.fail("sigma", "sigma must be positive");
    if (m.n_steps < 1) s.fail("n_steps", "n_steps must be >= 1");
    return m;
  }
  if (type == "hmc") {
    HmcConfig h = HmcConfig::initial(n_intermediate);
    h.n_leapfrog = s.get<int>("n_leapfrog", h.n_leapfrog);
    h.n_steps = s.get<int>("n_steps", h.n_steps);
    h.eps_shared = s.get<double>("eps_shared", h.eps_shared);
    const double each = s.get<double>("eps_per_dist", 0.9);
    h.eps_per_dist.assign(std::max(n_intermediate, 0), each);
    h.target_accept = s.get<double>("target_accept", h.target_accept);
    h.adapt = s.get<bool>("adapt", h.adapt);
    s.finish();
    checked(s, "type", [&] { h.validate(n_intermediate); });
    return h;
  }
  if (type == "identity") {
    s.finish();
    return IdentityKernel{};
  }
  s.fail("type", "unknown kernel type '" + type + "'");
}

TrainConfig parse_trainer(Section s) {
  TrainConfig c;
  c.method = TrainMethod::fab;
  const std::string method = s.get<std::string>("method", "fab");
  checked(s, "method", [&] { c.method = train_method_from_string(method); });
  FabLossConfig& f = c.fab;
  f.alpha = s.get<double>("alpha", f.alpha);
  f.use_buffer = s.get<bool>("use_buffer", f.use_buffer);
  f.n_intermediate = s.get<int>("n_intermediate", f.n_intermediate);
  f.inner_updates = s.get<int>("inner_updates", f.inner_updates);
  f.batch_ais = s.get<std::size_t>("batch_ais", f.batch_ais);
  f.batch_buffer = s.get<std::size_t>("batch_buffer", f.batch_buffer);
  f.min_buffer = s.get<std::size_t>("min_buffer", f.min_buffer);
  f.max_buffer = s.get<std::size_t>("max_buffer", f.max_buffer);
  c.batch_size = s.get<std::size_t>("batch_size", c.batch_size);
  c.max_iterations = s.get<std::size_t>("max_iterations", c.max_iterations);
  c.max_flow_evals = s.get<std::uint64_t>("max_flow_evals", c.max_flow_evals);
  c.max_nonfinite_streak = s.get<int>("max_nonfinite_streak", c.max_nonfinite_streak);
  c.checkpoint_every = s.get<std::size_t>("checkpoint_every", c.checkpoint_every);
  if (f.n_intermediate < 0) s.fail("n_intermediate", "n_intermediate must be >= 0");
  if (s.has("kernel"))
    f.kernel = parse_kernel(s.child("kernel"), f.n_intermediate);
  s.finish();
  if (c.method == TrainMethod::fab && (f.alpha == 0.0 || !std::isfinite(f.alpha)))
    s.fail("alpha", "alpha must be finite and non-zero (the generic-alpha gradient is undefined at 0)");
  checked(s, "method", [&] { c.validate(); });
  return c;
}

AdamConfig parse_optimizer(Section s) {
  AdamConfig a;
  a.lr = s.get<double>("lr", a.lr);
  a.beta1 = s.get<double>("beta1", a.beta1);
  a.beta2 = s.get<double>("beta2", a.beta2);
  a.eps = s.get<double>("eps", a.eps);
  a.clip_norm = s.get<double>("clip_norm", a.clip_norm);
  a.cosine_decay = s.get<bool>("cosine_decay", a.cosine_decay);
  a.decay_steps = s.get<std::size_t>("decay_steps", a.decay_steps);
  s.finish();
  if (!(a.lr > 0.0)) s.fail("lr", "lr must be positive");
  if (a.cosine_decay && a.decay_steps == 0)
    s.fail("decay_steps", "cosine decay needs decay_steps > 0");
  return a;
}

EvalSettings parse_evaluation(Section s) {
  EvalSettings e;
  e.n_samples = s.get<std::size_t>("n_samples", e.n_samples);
  e.n_test = s.get<std::size_t>("n_test", e.n_test);
  e.mae_samples = s.get<std::size_t>("mae_samples", e.mae_samples);
  e.mae_reps = s.get<std::size_t>("mae_reps", e.mae_reps);
  e.logz_samples = s.get<std::size_t>("logz_samples", e.logz_samples);
  e.logz_reps = s.get<std::size_t>("logz_reps", e.logz_reps);
  e.quadratic_seed = s.get<std::uint64_t>("quadratic_seed", e.quadratic_seed);
  e.ais_ess = s.get<bool>("ais_ess", e.ais_ess);
  e.ais_intermediate = s.get<int>("ais_intermediate", e.ais_intermediate);
  if (s.has("ais_kernel")) e.ais_kernel = parse_kernel(s.child("ais_kernel"), e.ais_intermediate);
  s.finish();
  for (const char* k : {"n_samples", "n_test", "mae_samples", "mae_reps", "logz_samples", "logz_reps"})
    if (s.has(k) && s.get<std::size_t>(k, 1) == 0) s.fail(k, std::string(k) + " must be positive");
  return e;
}

AnalysisConfig parse_analysis(Section s) {
  AnalysisConfig a;
  a.kind = s.get<std::string>("kind", a.kind);
  if (a.kind != "snr" && a.kind != "scaling")
    s.fail("kind", "analysis kind must be snr or scaling");
  a.estimators = s.get<std::vector<std::string>>("estimators", a.estimators);
  for (const auto& e : a.estimators) checked(s, "estimators", [&] { estimator_from_string(e); });
  a.snr.axis = s.get<std::string>("axis", a.snr.axis);
  a.snr.grid = s.get<std::vector<double>>("grid", a.snr.grid);
  a.snr.reps = a.scaling.reps = s.get<std::size_t>("reps", a.snr.reps);
  a.snr.n_samples = a.scaling.n_samples = s.get<std::size_t>("n_samples", a.snr.n_samples);
  a.snr.estimator.n_intermediate = s.get<int>("n_intermediate", a.snr.estimator.n_intermediate);
  a.snr.estimator.hmc_step = a.scaling.hmc_step = s.get<double>("hmc_step", a.snr.estimator.hmc_step);
  a.snr.estimator.n_leapfrog = a.scaling.n_leapfrog =
      s.get<int>("n_leapfrog", a.snr.estimator.n_leapfrog);
  a.scaling.dims = s.get<std::vector<int>>("dims", a.scaling.dims);
  s.finish();
  if (a.snr.axis != "n_samples" && a.snr.axis != "n_dists")
    s.fail("axis", "axis must be n_samples or n_dists");
  if (a.snr.reps < 2) s.fail("reps", "reps must be >= 2");
  if (a.snr.grid.empty()) s.fail("grid", "grid must not be empty");
  for (int d : a.scaling.dims)
    if (d < 1) s.fail("dims", "dims must be positive");
  if (!(a.snr.estimator.hmc_step > 0.0)) s.fail("hmc_step", "hmc_step must be positive");
  return a;
}

}  // namespace

int TargetConfig::dim() const {
  if (kind == "gmm40") return 2;
  if (kind == "manywell") return 2 * n_pairs;
  return static_cast<int>(mean.size());
}

TargetPtr TargetConfig::build() const {
  if (kind == "gmm40") return std::make_shared<GaussianMixture>(gmm40_build(seed));
  if (kind == "manywell") return std::make_shared<ManyWell>(n_pairs);
  if (kind == "gaussian")
    return std::make_shared<DiagonalGaussian>(
        Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
        Eigen::Map<const Eigen::VectorXd>(stddev.data(), static_cast<Eigen::Index>(stddev.size())));
  throw ConfigError("unknown target kind '" + kind + "'");
}

nlohmann::json TargetConfig::to_json() const {
  json j{{"kind", kind}};
  if (kind == "gmm40") j["seed"] = seed;
  if (kind == "manywell") j["n_pairs"] = n_pairs;
  if (kind == "gaussian") {
    j["mean"] = mean;
    j["stddev"] = stddev;
  }
  return j;
}

nlohmann::json AnalysisConfig::to_json() const {
  json j{{"kind", kind}, {"reps", snr.reps}, {"n_samples", snr.n_samples},
         {"hmc_step", snr.estimator.hmc_step}, {"n_leapfrog", snr.estimator.n_leapfrog}};
  if (kind == "snr") {
    j["estimators"] = estimators;
    j["axis"] = snr.axis;
    j["grid"] = snr.grid;
    j["n_intermediate"] = snr.estimator.n_intermediate;
  } else {
    j["dims"] = scaling.dims;
  }
  return j;
}

nlohmann::json kernel_to_json(const KernelConfig& k) {
  if (auto* m = std::get_if<MetropolisConfig>(&k))
    return {{"type", "metropolis"}, {"sigma", m->sigma}, {"n_steps", m->n_steps}};
  if (auto* h = std::get_if<HmcConfig>(&k)) {
    json j{{"type", "hmc"},          {"n_leapfrog", h->n_leapfrog},
           {"n_steps", h->n_steps},  {"eps_shared", h->eps_shared},
           {"target_accept", h->target_accept}, {"adapt", h->adapt}};
    j["eps_per_dist"] = h->eps_per_dist.empty() ? 0.9 : h->eps_per_dist.front();
    return j;
  }
  return {{"type", "identity"}};
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    Locator loc(text, source);
    throw ConfigError(source + ":" + std::to_string(loc.line_at(e.byte > 0 ? e.byte - 1 : 0)) +
                      ": invalid JSON: " + e.what());
  }
  Locator loc(text, source);
  Section root(j, {}, loc);
  RunConfig c;
  c.experiment = root.get<std::string>("experiment", c.experiment);
  c.seed = root.get<std::uint64_t>("seed", c.seed);
  c.threads = root.get<int>("threads", c.threads);
  if (root.has("output_dir")) c.output_dir = root.get<std::string>("output_dir", "");
  c.flow_seed = root.get<std::uint64_t>("flow_seed", c.flow_seed);
  if (root.has("target")) c.target = parse_target(root.child("target"));
  if (root.has("flow")) {
    const json& fj = root.raw("flow");
    try {
      c.flow = FlowArchitecture::from_json(fj);
    } catch (const ConfigError& e) {
      std::string key = "flow";
      const std::string what = e.what();
      const auto q = what.find('\'');
      if (q != std::string::npos) key = what.substr(q + 1, what.find('\'', q + 1) - q - 1);
      loc.fail({"flow", key}, what);
    } catch (const json::exception& e) {
      loc.fail({"flow"}, std::string("bad flow descriptor: ") + e.what());
    }
  }
  if (root.has("trainer")) c.trainer = parse_trainer(root.child("trainer"));
  if (root.has("optimizer")) {
    if (!c.trainer) root.fail("optimizer", "optimizer given without a trainer section");
    c.trainer->optimizer = parse_optimizer(root.child("optimizer"));
  }
  if (root.has("evaluation")) c.evaluation = parse_evaluation(root.child("evaluation"));
  if (root.has("analysis")) c.analysis = parse_analysis(root.child("analysis"));
  root.finish();

  if (c.threads < 1) root.fail("threads", "threads must be >= 1");
  if (c.experiment.empty() || c.experiment.find('/') != std::string::npos)
    root.fail("experiment", "experiment must be a non-empty name without '/'");
  if (c.flow && c.target && c.flow->dim != c.target->dim())
    root.fail("flow", "flow dim " + std::to_string(c.flow->dim) + " does not match target dim " +
                          std::to_string(c.target->dim()));
  if (c.trainer && (!c.flow || !c.target))
    root.fail("trainer", "training needs both a target and a flow section");
  if (c.analysis) {
    c.analysis->snr.seed = c.analysis->scaling.seed = c.seed;
    c.analysis->snr.threads = c.analysis->scaling.threads = c.threads;
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

nlohmann::json RunConfig::to_json() const {
  json j{{"experiment", experiment}, {"seed", seed}, {"threads", threads}, {"flow_seed", flow_seed}};
  if (output_dir) j["output_dir"] = *output_dir;
  if (target) j["target"] = target->to_json();
  if (flow) j["flow"] = flow->to_json();
  if (trainer) {
    const TrainConfig& t = *trainer;
    const FabLossConfig& f = t.fab;
    j["trainer"] = {{"method", to_string(t.method)},
                    {"alpha", f.alpha},
                    {"use_buffer", f.use_buffer},
                    {"n_intermediate", f.n_intermediate},
                    {"inner_updates", f.inner_updates},
                    {"batch_ais", f.batch_ais},
                    {"batch_buffer", f.batch_buffer},
                    {"min_buffer", f.min_buffer},
                    {"max_buffer", f.max_buffer},
                    {"batch_size", t.batch_size},
                    {"max_iterations", t.max_iterations},
                    {"max_flow_evals", t.max_flow_evals},
                    {"max_nonfinite_streak", t.max_nonfinite_streak},
                    {"checkpoint_every", t.checkpoint_every},
                    {"kernel", kernel_to_json(f.kernel)}};
    const AdamConfig& a = t.optimizer;
    j["optimizer"] = {{"lr", a.lr},       {"beta1", a.beta1},
                      {"beta2", a.beta2}, {"eps", a.eps},
                      {"clip_norm", a.clip_norm}, {"cosine_decay", a.cosine_decay},
                      {"decay_steps", a.decay_steps}};
  }
  json e = evaluation.to_json();
  e["ais_intermediate"] = evaluation.ais_intermediate;
  e["ais_kernel"] = kernel_to_json(evaluation.ais_kernel);
  j["evaluation"] = e;
  if (analysis) j["analysis"] = analysis->to_json();
  return j;
}

}  // namespace fab
