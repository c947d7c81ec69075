#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <string>
#include <string_view>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/keyvalue.hpp"
#include "cmir/metrics.hpp"
#include "cmir/model.hpp"
#include "cmir/rng.hpp"
#include "cmir/tensor.hpp"

// Synthetic linear-Gaussian structural causal model.
//
//   c ~ N(0, I_dc)                      causal latent
//   y = w^T c + label_noise * eta       (class = y > 0 for classification)
//   e ~ Uniform{0..env_count-1}
//   s = gamma_e * y' * u + spurious_noise * eta   (y' = y, or +-1 for classes)
//   x_m = A_m c + B_m s + feature_noise * eta
//
// w and u are unit vectors, A_m and B_m have orthonormal columns; all drawn
// from the dataset seed. The label depends on c only; s carries an
// environment-dependent shortcut to the label.

namespace cmir {

struct ScmConfig {
  std::size_t modalities = 3;
  std::size_t causal_dim = 4;
  std::size_t spurious_dim = 4;
  std::size_t feature_dim = 12;
  std::size_t n_train = 2000;
  std::size_t n_val = 1000;
  std::size_t n_test = 2000;
  std::vector<double> gamma{2.0};
  double gamma_test = -2.0;
  double label_noise_std = 0.1;
  double spurious_noise_std = 0.3;
  double feature_noise_std = 0.1;
  Task task = Task::regression;
  std::uint64_t seed = 0;

  std::size_t env_count() const { return gamma.size(); }

  void validate() const {
    if (modalities == 0 || causal_dim == 0 || spurious_dim == 0 || feature_dim == 0) {
      throw ConfigError("SCM dimensions must be positive");
    }
    if (feature_dim < causal_dim || feature_dim < spurious_dim) {
      throw ConfigError("feature_dim must be at least causal_dim and spurious_dim");
    }
    if (gamma.empty()) throw ConfigError("SCM needs at least one training environment");
    if (label_noise_std < 0 || spurious_noise_std < 0 || feature_noise_std < 0) {
      throw ConfigError("noise standard deviations must be nonnegative");
    }
  }
};

inline std::string to_string(Task t) { return t == Task::regression ? "regression" : "classification"; }

inline Task parse_task(std::string_view s) {
  if (s == "regression") return Task::regression;
  if (s == "classification") return Task::classification;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

/// Config echo with the "scm." key prefix used by config files.
inline kv::Record to_record(const ScmConfig& c) {
  return {
      {"scm.modalities", std::to_string(c.modalities)},
      {"scm.causal_dim", std::to_string(c.causal_dim)},
      {"scm.spurious_dim", std::to_string(c.spurious_dim)},
      {"scm.feature_dim", std::to_string(c.feature_dim)},
      {"scm.n_train", std::to_string(c.n_train)},
      {"scm.n_val", std::to_string(c.n_val)},
      {"scm.n_test", std::to_string(c.n_test)},
      {"scm.gamma", kv::format_list(c.gamma)},
      {"scm.gamma_test", kv::format_double(c.gamma_test)},
      {"scm.label_noise_std", kv::format_double(c.label_noise_std)},
      {"scm.spurious_noise_std", kv::format_double(c.spurious_noise_std)},
      {"scm.feature_noise_std", kv::format_double(c.feature_noise_std)},
      {"scm.task", to_string(c.task)},
      {"scm.seed", std::to_string(c.seed)},
  };
}

/// Applies one "scm.*" key. Returns false when the key is not an SCM key.
inline bool apply_key(ScmConfig& c, std::string_view key, std::string_view value) {
  if (key == "scm.modalities") c.modalities = kv::parse_uint(key, value);
  else if (key == "scm.causal_dim") c.causal_dim = kv::parse_uint(key, value);
  else if (key == "scm.spurious_dim") c.spurious_dim = kv::parse_uint(key, value);
  else if (key == "scm.feature_dim") c.feature_dim = kv::parse_uint(key, value);
  else if (key == "scm.n_train") c.n_train = kv::parse_uint(key, value);
  else if (key == "scm.n_val") c.n_val = kv::parse_uint(key, value);
  else if (key == "scm.n_test") c.n_test = kv::parse_uint(key, value);
  else if (key == "scm.gamma") c.gamma = kv::parse_list(key, value);
  else if (key == "scm.gamma_test") c.gamma_test = kv::parse_double(key, value);
  else if (key == "scm.label_noise_std") c.label_noise_std = kv::parse_double(key, value);
  else if (key == "scm.spurious_noise_std") c.spurious_noise_std = kv::parse_double(key, value);
  else if (key == "scm.feature_noise_std") c.feature_noise_std = kv::parse_double(key, value);
  else if (key == "scm.task") c.task = parse_task(value);
  else if (key == "scm.seed") c.seed = kv::parse_uint(key, value);
  else return false;
  return true;
}

/// One split. Modalities are stored column-blocked: modalities[m] is N x d_m.
struct Split {
  std::string name;
  std::vector<Tensor> modalities;
  std::vector<double> labels;
  std::vector<std::size_t> envs;
  std::vector<double> env_gamma;  ///< spurious strength of each sample's environment
  Tensor latent_causal;           ///< N x d_c, never given to the trainer
  Tensor latent_spurious;         ///< N x d_s, never given to the trainer

  std::size_t size() const { return labels.size(); }

  /// Rows `idx` of every modality, in order.
  std::vector<Tensor> gather(std::span<const std::size_t> idx) const {
    std::vector<Tensor> out;
    for (const Tensor& x : modalities) {
      Tensor t(idx.size(), x.cols());
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < x.cols(); ++j) t(r, j) = x(idx[r], j);
      out.push_back(t);
    }
    return out;
  }

  Tensor gather_labels(std::span<const std::size_t> idx) const {
    Tensor t(idx.size(), 1);
    for (std::size_t r = 0; r < idx.size(); ++r) t(r, 0) = labels[idx[r]];
    return t;
  }
};

struct Dataset {
  ScmConfig config;
  Split train;
  Split val;
  Split test_id;   ///< training environments
  Split test_ood;  ///< spurious strength gamma_test

  std::vector<Split*> splits() { return {&train, &val, &test_id, &test_ood}; }
  std::vector<const Split*> splits() const { return {&train, &val, &test_id, &test_ood}; }
};

/// Fixed mechanism parameters drawn from the dataset seed.
struct ScmMechanism {
  Eigen::VectorXd w;
  Eigen::VectorXd u;
  std::vector<Eigen::MatrixXd> causal_mix;    ///< A_m, d_m x d_c
  std::vector<Eigen::MatrixXd> spurious_mix;  ///< B_m, d_m x d_s
};

namespace detail {

inline Eigen::MatrixXd orthonormal_columns(std::size_t rows, std::size_t cols, rng::Stream& s) {
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = s.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

inline Eigen::VectorXd unit_vector(std::size_t n, rng::Stream& s) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = s.normal();
  return v / v.norm();
}

}  // namespace detail

inline ScmMechanism make_mechanism(const ScmConfig& c) {
  rng::Stream s(rng::derive_key(c.seed, "scm-mechanism"));
  ScmMechanism mech;
  mech.w = detail::unit_vector(c.causal_dim, s);
  mech.u = detail::unit_vector(c.spurious_dim, s);
  for (std::size_t m = 0; m < c.modalities; ++m) {
    mech.causal_mix.push_back(detail::orthonormal_columns(c.feature_dim, c.causal_dim, s));
    mech.spurious_mix.push_back(detail::orthonormal_columns(c.feature_dim, c.spurious_dim, s));
  }
  return mech;
}

/// Draws `n` samples. With `fixed_gamma` set every sample uses that strength
/// and environment id env_count; otherwise environments are uniform over the
/// training set. Each sample draws from its own counter stream.
inline Split sample_split(const ScmConfig& c, const ScmMechanism& mech, std::string name,
                          std::size_t n, const double* fixed_gamma) {
  Split sp;
  sp.name = std::move(name);
  sp.labels.resize(n);
  sp.envs.resize(n);
  sp.env_gamma.resize(n);
  sp.latent_causal = Tensor(n, c.causal_dim);
  sp.latent_spurious = Tensor(n, c.spurious_dim);
  for (std::size_t m = 0; m < c.modalities; ++m) sp.modalities.emplace_back(n, c.feature_dim);
  const std::uint64_t split_key = rng::derive_key(c.seed, "scm-split-" + sp.name);
  Eigen::VectorXd cz(c.causal_dim), sz(c.spurious_dim);
  for (std::size_t i = 0; i < n; ++i) {
    rng::Stream s(rng::derive_key(split_key, static_cast<std::uint64_t>(i)));
    for (Eigen::Index k = 0; k < cz.size(); ++k) cz(k) = s.normal();
    const double y = mech.w.dot(cz) + c.label_noise_std * s.normal();
    std::size_t env = c.env_count();
    double gamma = fixed_gamma ? *fixed_gamma : 0.0;
    if (!fixed_gamma) {
      env = s.below(c.env_count());
      gamma = c.gamma[env];
    }
    const double driver = c.task == Task::regression ? y : (y > 0 ? 1.0 : -1.0);
    for (Eigen::Index k = 0; k < sz.size(); ++k) {
      sz(k) = gamma * driver * mech.u(k) + c.spurious_noise_std * s.normal();
    }
    for (std::size_t m = 0; m < c.modalities; ++m) {
      const Eigen::VectorXd x = mech.causal_mix[m] * cz + mech.spurious_mix[m] * sz;
      for (std::size_t j = 0; j < c.feature_dim; ++j) {
        sp.modalities[m](i, j) = x(static_cast<Eigen::Index>(j)) + c.feature_noise_std * s.normal();
      }
    }
    for (std::size_t k = 0; k < c.causal_dim; ++k) sp.latent_causal(i, k) = cz(static_cast<Eigen::Index>(k));
    for (std::size_t k = 0; k < c.spurious_dim; ++k) sp.latent_spurious(i, k) = sz(static_cast<Eigen::Index>(k));
    sp.labels[i] = c.task == Task::regression ? y : (y > 0 ? 1.0 : 0.0);
    sp.envs[i] = env;
    sp.env_gamma[i] = gamma;
  }
  return sp;
}

inline Dataset generate(const ScmConfig& config) {
  config.validate();
  const ScmMechanism mech = make_mechanism(config);
  Dataset ds;
  ds.config = config;
  ds.train = sample_split(config, mech, "train", config.n_train, nullptr);
  ds.val = sample_split(config, mech, "val", config.n_val, nullptr);
  ds.test_id = sample_split(config, mech, "test_id", config.n_test, nullptr);
  ds.test_ood = sample_split(config, mech, "test_ood", config.n_test, &config.gamma_test);
  return ds;
}

// --- least-squares oracle ---------------------------------------------------

enum class OracleInput { causal_latent, spurious_latent, raw };

inline OracleInput parse_oracle_input(std::string_view s) {
  if (s == "causal_latent" || s == "causal") return OracleInput::causal_latent;
  if (s == "spurious_latent" || s == "spurious") return OracleInput::spurious_latent;
  if (s == "raw") return OracleInput::raw;
  throw ConfigError("unknown oracle input '" + std::string(s) + "'");
}

namespace detail {

inline Eigen::MatrixXd design_matrix(const Split& sp, OracleInput which) {
  std::vector<const Tensor*> blocks;
  if (which == OracleInput::causal_latent) blocks.push_back(&sp.latent_causal);
  else if (which == OracleInput::spurious_latent) blocks.push_back(&sp.latent_spurious);
  else
    for (const Tensor& t : sp.modalities) blocks.push_back(&t);
  Eigen::Index cols = 1;
  for (const Tensor* t : blocks) cols += static_cast<Eigen::Index>(t->cols());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(sp.size()), cols);
  for (std::size_t i = 0; i < sp.size(); ++i) {
    Eigen::Index j = 0;
    x(static_cast<Eigen::Index>(i), j++) = 1.0;
    for (const Tensor* t : blocks)
      for (std::size_t k = 0; k < t->cols(); ++k) x(static_cast<Eigen::Index>(i), j++) = (*t)(i, k);
  }
  return x;
}

}  // namespace detail

struct OracleResult {
  MetricReport report;
  bool regularized = false;
};

/// Ordinary least squares from the chosen input to the label, fitted on
/// `train` by the normal equations and scored on `eval`. A singular normal
/// matrix gets a 1e-6 ridge and a warning on stderr. Classification labels
/// are regressed as 0/1 and thresholded at 0.5.
inline OracleResult oracle_regression(const Split& train, const Split& eval, OracleInput which,
                                      Task task) {
  if (train.size() == 0 || eval.size() == 0) throw EmptyInputError("oracle on empty split");
  const Eigen::MatrixXd x = detail::design_matrix(train, which);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(train.labels.data(),
                                                              static_cast<Eigen::Index>(train.size()));
  Eigen::MatrixXd gram = x.transpose() * x;
  const Eigen::VectorXd rhs = x.transpose() * y;
  OracleResult out;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    std::cerr << "warning: singular normal matrix in oracle regression; adding ridge 1e-6\n";
    gram += 1e-6 * Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
    llt.compute(gram);
    out.regularized = true;
  }
  const Eigen::VectorXd beta = llt.solve(rhs);
  const Eigen::VectorXd pred = detail::design_matrix(eval, which) * beta;
  std::vector<double> p(pred.data(), pred.data() + pred.size());
  if (task == Task::classification)
    for (double& v : p) v = v > 0.5 ? 1.0 : 0.0;
  out.report = compute_metrics(p, eval.labels, task);
  return out;
}

inline OracleResult oracle_regression(const Dataset& ds, OracleInput which, bool ood = true) {
  return oracle_regression(ds.train, ood ? ds.test_ood : ds.test_id, which, ds.config.task);
}

// --- corruption ---------------------------------------------------------------

enum class CorruptionKind { gaussian_mix, laplace_mix, random_erase, laplace_or_erase };

inline CorruptionKind parse_corruption(std::string_view s) {
  if (s == "g" || s == "gaussian_mix") return CorruptionKind::gaussian_mix;
  if (s == "l" || s == "laplace_mix") return CorruptionKind::laplace_mix;
  if (s == "e" || s == "random_erase") return CorruptionKind::random_erase;
  if (s == "m" || s == "laplace_or_erase") return CorruptionKind::laplace_or_erase;
  throw ConfigError("unknown corruption kind '" + std::string(s) + "'");
}

inline std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::gaussian_mix: return "gaussian_mix";
    case CorruptionKind::laplace_mix: return "laplace_mix";
    case CorruptionKind::random_erase: return "random_erase";
    default: return "laplace_or_erase";
  }
}

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_mix;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
};

/// Feature-level corruption of every modality of every sample:
///   gaussian_mix / laplace_mix: x <- (1 - NR) x + NR * noise
///   random_erase: each feature zeroed with probability NR
///   laplace_or_erase: per sample, a fair coin picks laplace_mix or random_erase
inline Split corrupt(const Split& sp, const CorruptionSpec& spec) {
  if (!(spec.noise_rate >= 0.0 && spec.noise_rate <= 1.0)) {
    throw ConfigError("noise rate must lie in [0, 1]");
  }
  Split out = sp;
  out.modalities.clear();
  for (const Tensor& x : sp.modalities) out.modalities.push_back(x.clone());
  if (spec.noise_rate == 0.0) return out;
  const double nr = spec.noise_rate;
  const std::uint64_t key = rng::derive_key(rng::derive_key(spec.seed, "corrupt-" + sp.name),
                                            static_cast<std::uint64_t>(spec.kind));
  for (std::size_t m = 0; m < out.modalities.size(); ++m) {
    Tensor& x = out.modalities[m];
    const std::uint64_t mkey = rng::derive_key(key, static_cast<std::uint64_t>(m));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      CorruptionKind kind = spec.kind;
      if (kind == CorruptionKind::laplace_or_erase) {
        // One coin per sample, shared by all modalities.
        kind = rng::uniform(rng::derive_key(key, "coin"), i) < 0.5 ? CorruptionKind::laplace_mix
                                                                    : CorruptionKind::random_erase;
      }
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const std::uint64_t idx = i * x.cols() + j;
        double& v = x(i, j);
        switch (kind) {
          case CorruptionKind::gaussian_mix: v = (1.0 - nr) * v + nr * rng::normal(mkey, idx); break;
          case CorruptionKind::laplace_mix: v = (1.0 - nr) * v + nr * rng::laplace(mkey, idx); break;
          default:
            if (rng::uniform(mkey, idx) < nr) v = 0.0;
            break;
        }
      }
    }
  }
  return out;
}

inline Dataset corrupt(const Dataset& ds, const CorruptionSpec& spec) {
  Dataset out = ds;
  for (Split* sp : out.splits()) *sp = corrupt(*sp, spec);
  return out;
}

}  // namespace cmir
