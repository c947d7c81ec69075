#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmir/checkpoint.hpp"
#include "cmir/environments.hpp"
#include "cmir/errors.hpp"
#include "cmir/keyvalue.hpp"
#include "cmir/losses.hpp"
#include "cmir/metrics.hpp"
#include "cmir/model.hpp"
#include "cmir/optim.hpp"
#include "cmir/rng.hpp"
#include "cmir/scm.hpp"

namespace cmir {

enum class InvarianceMode { l1, kl };
/// Where virtual-environment noise is injected: on the raw modality features
/// or on the adapter outputs.
enum class PerturbAt { raw, adapter };

inline InvarianceMode parse_invariance_mode(std::string_view s) {
  if (s == "l1") return InvarianceMode::l1;
  if (s == "kl") return InvarianceMode::kl;
  throw ConfigError("unknown invariance_mode '" + std::string(s) + "'");
}
inline std::string to_string(InvarianceMode m) { return m == InvarianceMode::l1 ? "l1" : "kl"; }

inline InvarianceNorm parse_invariance_norm(std::string_view s) {
  if (s == "element_mean") return InvarianceNorm::element_mean;
  if (s == "raw_sum") return InvarianceNorm::raw_sum;
  throw ConfigError("unknown invariance_norm '" + std::string(s) + "'");
}
inline std::string to_string(InvarianceNorm n) {
  return n == InvarianceNorm::element_mean ? "element_mean" : "raw_sum";
}

inline PerturbAt parse_perturb_at(std::string_view s) {
  if (s == "raw") return PerturbAt::raw;
  if (s == "adapter") return PerturbAt::adapter;
  throw ConfigError("unknown perturb_at '" + std::string(s) + "'");
}
inline std::string to_string(PerturbAt p) { return p == PerturbAt::raw ? "raw" : "adapter"; }

struct TrainConfig {
  std::size_t batch_size = 48;
  double base_learning_rate = 1e-5;
  double lr_scale = 100.0;  ///< synthetic-regime multiplier on base_learning_rate
  double weight_decay = 0.01;
  std::size_t epochs = 30;
  std::size_t K = 1;
  double alpha1 = 0.1;
  LossWeights lambda;
  double orth_alpha = 1.0;
  std::size_t shared_dim = 150;
  std::size_t hidden_dim = 256;
  std::size_t depth = 2;
  std::optional<PredictionLossKind> loss_kind;  ///< unset: mse or cross_entropy by task
  InvarianceMode invariance_mode = InvarianceMode::l1;
  InvarianceNorm invariance_norm = InvarianceNorm::element_mean;
  PerturbAt perturb_at = PerturbAt::raw;
  bool no_inv = false;
  bool no_dec = false;
  bool no_rec = false;
  bool vanilla = false;
  std::uint64_t seed = 0;
  std::size_t patience = 10;
  std::string checkpoint_path;
  ScmConfig scm;

  double learning_rate() const { return base_learning_rate * lr_scale; }
  Task task() const { return scm.task; }

  PredictionLossKind prediction_loss_kind() const {
    if (loss_kind) return *loss_kind;
    return task() == Task::classification ? PredictionLossKind::cross_entropy : PredictionLossKind::mse;
  }

  /// Weights actually applied after ablation flags.
  LossWeights effective_weights() const {
    LossWeights w = lambda;
    if (vanilla || no_inv) w.inv = 0.0;
    if (vanilla || no_dec) w.dec = 0.0;
    if (vanilla || no_rec) w.rec = 0.0;
    return w;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.input_dims.assign(scm.modalities, scm.feature_dim);
    m.shared_dim = shared_dim;
    m.hidden_dim = hidden_dim;
    m.depth = depth;
    m.output_dim = task() == Task::classification ? 2 : 1;
    m.unimodal_heads = invariance_mode == InvarianceMode::kl;
    return m;
  }

  void validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(learning_rate() > 0)) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
    make_schedule(K, alpha1);
    lambda.validate();
    if (!(orth_alpha >= 0.0 && orth_alpha <= 1.0)) throw ConfigError("orth_alpha must lie in [0, 1]");
    if (shared_dim < 2) throw ConfigError("shared_dim must be at least 2 for row normalization");
    if (invariance_mode == InvarianceMode::kl && task() != Task::classification) {
      throw ConfigError("invariance_mode=kl requires scm.task=classification");
    }
    const PredictionLossKind k = prediction_loss_kind();
    if ((k == PredictionLossKind::cross_entropy) != (task() == Task::classification)) {
      throw ConfigError("loss_kind " + to_string(k) + " does not fit task " + to_string(task()));
    }
    scm.validate();
    model_config().validate();
  }
};

inline kv::Record to_record(const TrainConfig& c) {
  auto b = [](bool v) { return std::string(v ? "1" : "0"); };
  kv::Record r{
      {"batch_size", std::to_string(c.batch_size)},
      {"base_learning_rate", kv::format_double(c.base_learning_rate)},
      {"lr_scale", kv::format_double(c.lr_scale)},
      {"weight_decay", kv::format_double(c.weight_decay)},
      {"epochs", std::to_string(c.epochs)},
      {"K", std::to_string(c.K)},
      {"alpha1", kv::format_double(c.alpha1)},
      {"lambda_inv", kv::format_double(c.lambda.inv)},
      {"lambda_dec", kv::format_double(c.lambda.dec)},
      {"lambda_rec", kv::format_double(c.lambda.rec)},
      {"orth_alpha", kv::format_double(c.orth_alpha)},
      {"shared_dim", std::to_string(c.shared_dim)},
      {"hidden_dim", std::to_string(c.hidden_dim)},
      {"depth", std::to_string(c.depth)},
      {"loss_kind", to_string(c.prediction_loss_kind())},
      {"invariance_mode", to_string(c.invariance_mode)},
      {"invariance_norm", to_string(c.invariance_norm)},
      {"perturb_at", to_string(c.perturb_at)},
      {"no_inv", b(c.no_inv)},
      {"no_dec", b(c.no_dec)},
      {"no_rec", b(c.no_rec)},
      {"vanilla", b(c.vanilla)},
      {"seed", std::to_string(c.seed)},
      {"patience", std::to_string(c.patience)},
      {"checkpoint_path", c.checkpoint_path},
  };
  for (auto& kvp : to_record(c.scm)) r.push_back(kvp);
  return r;
}

/// Applies key=value pairs on top of `base`. Unknown keys are errors.
inline TrainConfig apply_record(TrainConfig c, const kv::Record& record) {
  for (const auto& [k, v] : record) {
    if (k == "batch_size") c.batch_size = kv::parse_uint(k, v);
    else if (k == "base_learning_rate") c.base_learning_rate = kv::parse_double(k, v);
    else if (k == "lr_scale") c.lr_scale = kv::parse_double(k, v);
    else if (k == "learning_rate") {
      c.base_learning_rate = kv::parse_double(k, v);
      c.lr_scale = 1.0;
    } else if (k == "weight_decay") c.weight_decay = kv::parse_double(k, v);
    else if (k == "epochs") c.epochs = kv::parse_uint(k, v);
    else if (k == "K") c.K = kv::parse_uint(k, v);
    else if (k == "alpha1") c.alpha1 = kv::parse_double(k, v);
    else if (k == "lambda_inv") c.lambda.inv = kv::parse_double(k, v);
    else if (k == "lambda_dec") c.lambda.dec = kv::parse_double(k, v);
    else if (k == "lambda_rec") c.lambda.rec = kv::parse_double(k, v);
    else if (k == "orth_alpha") c.orth_alpha = kv::parse_double(k, v);
    else if (k == "shared_dim") c.shared_dim = kv::parse_uint(k, v);
    else if (k == "hidden_dim") c.hidden_dim = kv::parse_uint(k, v);
    else if (k == "depth") c.depth = kv::parse_uint(k, v);
    else if (k == "loss_kind") c.loss_kind = parse_prediction_loss(v);
    else if (k == "invariance_mode") c.invariance_mode = parse_invariance_mode(v);
    else if (k == "invariance_norm") c.invariance_norm = parse_invariance_norm(v);
    else if (k == "perturb_at") c.perturb_at = parse_perturb_at(v);
    else if (k == "no_inv") c.no_inv = kv::parse_bool(k, v);
    else if (k == "no_dec") c.no_dec = kv::parse_bool(k, v);
    else if (k == "no_rec") c.no_rec = kv::parse_bool(k, v);
    else if (k == "vanilla") c.vanilla = kv::parse_bool(k, v);
    else if (k == "seed") c.seed = kv::parse_uint(k, v);
    else if (k == "patience") c.patience = kv::parse_uint(k, v);
    else if (k == "checkpoint_path") c.checkpoint_path = v;
    else if (!apply_key(c.scm, k, v)) throw ConfigError("unknown config key '" + k + "'");
  }
  return c;
}

/// Sets the root seed; the data seed follows it so one number fixes a run.
inline void set_seed(TrainConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.scm.seed = seed;
}

/// Honors CMIR_SEED when present.
inline void apply_seed_env(TrainConfig& c) {
  if (const char* s = std::getenv("CMIR_SEED"); s && *s) set_seed(c, kv::parse_uint("CMIR_SEED", s));
}

inline TrainConfig load_train_config(const std::string& path) {
  TrainConfig c = apply_record(TrainConfig{}, kv::parse_file(path));
  apply_seed_env(c);
  c.validate();
  return c;
}

struct Batch {
  std::vector<Tensor> x;  ///< one N x d_m block per modality
  Tensor y;               ///< N x 1
};

inline Batch make_batch(const Split& sp, std::span<const std::size_t> idx) {
  return {sp.gather(idx), sp.gather_labels(idx)};
}

inline Batch full_batch(const Split& sp) {
  std::vector<std::size_t> idx(sp.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return make_batch(sp, idx);
}

/// Builds the full objective for one batch on `tape`. Disabled terms
/// (ablation flag, vanilla, or zero weight) are not computed and report 0.
inline LossBreakdown compute_losses(Tape& tape, const CmirModel& model, const Batch& batch,
                                    const TrainConfig& config, std::uint64_t step_seed) {
  const std::size_t M = model.modalities();
  if (batch.x.size() != M) {
    throw ArityError("batch has " + std::to_string(batch.x.size()) + " modalities, model expects " +
                     std::to_string(M));
  }
  if (batch.y.rows() < 2) throw ContractError("batch size must be at least 2");
  const LossWeights w = config.effective_weights();
  const NoiseSchedule schedule = make_schedule(config.K, config.alpha1);
  const auto pairs = pair_indices(config.K);
  const bool kl = config.invariance_mode == InvarianceMode::kl;

  std::vector<Tensor> features, inv, dec, rec, head_losses;
  for (std::size_t m = 0; m < M; ++m) {
    const Tensor& x = batch.x[m];
    if (config.vanilla) {
      features.push_back(model.adapt(tape, m, x));
      continue;
    }
    const std::uint64_t noise_key = rng::derive_key(step_seed, static_cast<std::uint64_t>(m));
    std::vector<Tensor> adapted;
    if (w.inv == 0.0) {
      adapted.push_back(model.adapt(tape, m, x));
    } else if (config.perturb_at == PerturbAt::raw) {
      for (const Tensor& v : perturb(tape, x, schedule, noise_key).variants) {
        adapted.push_back(!adapted.empty() && v.same_as(x) ? adapted.front() : model.adapt(tape, m, v));
      }
    } else {
      adapted = perturb(tape, model.adapt(tape, m, x), schedule, noise_key).variants;
    }
    std::vector<DisentangledPair> z;
    for (const Tensor& a : adapted) {
      // Identical handles (alpha = 0) share one encoding.
      if (!z.empty() && a.same_as(adapted.front())) z.push_back(z.front());
      else z.push_back(model.encode(tape, m, a));
    }
    const DisentangledPair& z0 = z.front();
    features.push_back(z0.invariant);

    if (w.inv != 0.0) {
      if (kl) {
        std::vector<Tensor> logits;
        for (const auto& p : z) logits.push_back(model.unimodal_logits(tape, m, p.invariant));
        inv.push_back(invariance_loss_kl(tape, logits, pairs, config.task()));
      } else {
        std::vector<Tensor> zi;
        for (const auto& p : z) zi.push_back(p.invariant);
        inv.push_back(invariance_loss_l1(tape, zi, pairs, config.invariance_norm));
      }
    }
    if (kl) {
      head_losses.push_back(prediction_loss(tape, model.unimodal_logits(tape, m, z0.invariant), batch.y,
                                            PredictionLossKind::cross_entropy));
    }
    if (w.dec != 0.0) {
      dec.push_back(orthogonality_loss(tape, correlation_matrix(tape, z0.invariant, z0.spurious),
                                       config.orth_alpha));
    }
    if (w.rec != 0.0) rec.push_back(reconstruction_loss(tape, adapted.front(), model.decode(tape, m, z0)));
  }

  Tensor pred_loss = prediction_loss(tape, model.predict(tape, features), batch.y,
                                     config.prediction_loss_kind());
  // Unimodal heads are fitted alongside the fusion predictor.
  for (const Tensor& h : head_losses) {
    pred_loss = add(tape, pred_loss, scale(tape, h, 1.0 / static_cast<double>(head_losses.size())));
  }
  LossBreakdown out = total_objective(tape, pred_loss, inv, dec, rec, w, config.orth_alpha);
  out.inv.resize(M, 0.0);
  out.dec.resize(M, 0.0);
  out.rec.resize(M, 0.0);
  return out;
}

/// Name of the first non-finite term, or empty.
inline std::string first_nan_term(const LossBreakdown& b) {
  if (!std::isfinite(b.pred)) return "pred";
  for (std::size_t m = 0; m < b.inv.size(); ++m)
    if (!std::isfinite(b.inv[m])) return "inv[modality " + std::to_string(m) + "]";
  for (std::size_t m = 0; m < b.dec.size(); ++m)
    if (!std::isfinite(b.dec[m])) return "dec[modality " + std::to_string(m) + "]";
  for (std::size_t m = 0; m < b.rec.size(); ++m)
    if (!std::isfinite(b.rec[m])) return "rec[modality " + std::to_string(m) + "]";
  if (!std::isfinite(b.total)) return "total";
  return {};
}

/// Forward, backward, one AdamW update, gradients cleared.
inline LossBreakdown train_step(CmirModel& model, AdamWState& optimizer, const Batch& batch,
                                const TrainConfig& config, std::uint64_t step_seed) {
  Tape tape;
  LossBreakdown b = compute_losses(tape, model, batch, config, step_seed);
  if (const std::string bad = first_nan_term(b); !bad.empty()) {
    throw NumericError("non-finite loss term '" + bad + "'; aborting run");
  }
  std::vector<Tensor> params = model.parameters();
  tape.backward(b.total_tensor);
  // Parts unused by this configuration (e.g. decoders under vanilla) get zero gradients.
  for (const Tensor& p : params) p.grad_buffer();
  adamw_step(params, optimizer);
  zero_grads(params);
  return b;
}

/// Raw model outputs for a split (N x 1 scores or N x C logits), evaluated in chunks.
inline Tensor predict_outputs(const CmirModel& model, const Split& sp, bool vanilla,
                              std::size_t chunk = 1024) {
  const std::size_t n = sp.size();
  Tensor out(n, model.config().output_dim);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto xs = sp.gather(idx);
    Tape tape = Tape::inference();
    std::vector<Tensor> feats;
    for (std::size_t m = 0; m < xs.size(); ++m) {
      Tensor a = model.adapt(tape, m, xs[m]);
      feats.push_back(vanilla ? a : model.encode(tape, m, a).invariant);
    }
    Tensor p = model.predict(tape, feats);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(start + i, j) = p(i, j);
  }
  return out;
}

inline std::vector<double> predict_values(const CmirModel& model, const Split& sp, bool vanilla, Task task) {
  return decode_predictions(predict_outputs(model, sp, vanilla), task);
}

inline MetricReport evaluate(const CmirModel& model, const Split& sp, bool vanilla, Task task) {
  return compute_metrics(predict_values(model, sp, vanilla, task), sp.labels, task);
}

/// MAE of each environment id present in the split.
inline std::map<std::size_t, double> per_environment_mae(const CmirModel& model, const Split& sp,
                                                         bool vanilla, Task task) {
  const auto pred = predict_values(model, sp, vanilla, task);
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    auto& [sum, count] = acc[sp.envs[i]];
    sum += std::abs(pred[i] - sp.labels[i]);
    ++count;
  }
  std::map<std::size_t, double> out;
  for (const auto& [e, sc] : acc) out[e] = sc.first / static_cast<double>(sc.second);
  return out;
}

/// Epoch means of every loss term.
struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown mean;
  double val_metric = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  ///< 0 means the initial model
  double best_val_metric = 0.0;
  std::string val_metric_name;
  std::map<std::string, MetricReport> final_metrics;  ///< per split, best model
  kv::Record config_echo;
  double lr_scale = 1.0;
  double wall_seconds = 0.0;
  bool stopped_early = false;
};

struct FitResult {
  CmirModel model;  ///< best model by validation metric
  RunRecord record;
};

namespace detail {

inline void accumulate(LossBreakdown& sum, const LossBreakdown& b) {
  sum.pred += b.pred;
  sum.total += b.total;
  sum.inv.resize(b.inv.size(), 0.0);
  sum.dec.resize(b.dec.size(), 0.0);
  sum.rec.resize(b.rec.size(), 0.0);
  for (std::size_t m = 0; m < b.inv.size(); ++m) {
    sum.inv[m] += b.inv[m];
    sum.dec[m] += b.dec[m];
    sum.rec[m] += b.rec[m];
  }
  sum.weights = b.weights;
  sum.orth_alpha = b.orth_alpha;
}

inline void divide(LossBreakdown& b, double n) {
  b.pred /= n;
  b.total /= n;
  for (double& v : b.inv) v /= n;
  for (double& v : b.dec) v /= n;
  for (double& v : b.rec) v /= n;
}

}  // namespace detail

/// Validation score and whether `a` beats `b` for the task.
inline double validation_metric(const MetricReport& r, Task task) {
  return task == Task::regression ? r.mae.value_or(INFINITY) : r.acc2.value_or(0.0);
}
inline bool better(double a, double b, Task task) { return task == Task::regression ? a < b : a > b; }

inline FitResult fit(const TrainConfig& config, const Dataset& data) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Task task = config.task();
  CmirModel model(config.model_config(), config.seed);
  AdamWState opt;
  opt.learning_rate = config.learning_rate();
  opt.weight_decay = config.weight_decay;

  RunRecord rec;
  rec.config_echo = to_record(config);
  rec.lr_scale = config.lr_scale;
  rec.val_metric_name = task == Task::regression ? "val_mae" : "val_acc2";
  rec.best_val_metric = validation_metric(evaluate(model, data.val, config.vanilla, task), task);
  CmirModel best = model.clone();

  const std::uint64_t shuffle_key = rng::derive_key(config.seed, "shuffle");
  const std::uint64_t noise_root = rng::derive_key(config.seed, "env-noise");
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng::Stream shuffler(rng::derive_key(shuffle_key, static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order);
    LossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      if (len < 2) break;
      const Batch batch = make_batch(data.train, std::span(order).subspan(start, len));
      detail::accumulate(sum, train_step(model, opt, batch, config, rng::derive_key(noise_root, step++)));
      ++batches;
    }
    if (batches) detail::divide(sum, static_cast<double>(batches));
    const double val = validation_metric(evaluate(model, data.val, config.vanilla, task), task);
    rec.history.push_back({epoch, sum, val});
    if (better(val, rec.best_val_metric, task)) {
      rec.best_val_metric = val;
      rec.best_epoch = epoch;
      best = model.clone();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      rec.stopped_early = true;
      break;
    }
  }

  for (const Split* sp : data.splits()) {
    rec.final_metrics[sp->name] = evaluate(best, *sp, config.vanilla, task);
  }
  if (!config.checkpoint_path.empty()) {
    kv::Record echo = rec.config_echo;
    echo.emplace_back("best_epoch", std::to_string(rec.best_epoch));
    save_checkpoint(best, config.checkpoint_path, echo);
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(best), std::move(rec)};
}

inline FitResult fit(const TrainConfig& config) { return fit(config, generate(config.scm)); }

/// Value of `key` in a checkpoint or config echo, if present.
inline std::optional<std::string> echo_value(const kv::Record& echo, std::string_view key) {
  for (const auto& [k, v] : echo)
    if (k == key) return v;
  return std::nullopt;
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? kv::format_double(*v) : std::string("NA");
}

/// Structured text report: config echo, per-epoch losses, final metrics.
inline std::string format_run_record(const RunRecord& r) {
  std::string s = "# run record\n" + kv::format_lines(r.config_echo);
  s += "lr_scale=" + kv::format_double(r.lr_scale) + "\n";
  s += "best_epoch=" + std::to_string(r.best_epoch) + "\n";
  s += r.val_metric_name + "=" + kv::format_double(r.best_val_metric) + "\n";
  s += "stopped_early=" + std::string(r.stopped_early ? "1" : "0") + "\n";
  s += "wall_seconds=" + kv::format_double(r.wall_seconds) + "\n";
  s += "# epoch pred total inv dec rec val\n";
  for (const auto& e : r.history) {
    auto sum = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };
    s += "epoch." + std::to_string(e.epoch) + "=" + kv::format_double(e.mean.pred) + " " +
         kv::format_double(e.mean.total) + " " + kv::format_double(sum(e.mean.inv)) + " " +
         kv::format_double(sum(e.mean.dec)) + " " + kv::format_double(sum(e.mean.rec)) + " " +
         kv::format_double(e.val_metric) + "\n";
  }
  for (const auto& [split, m] : r.final_metrics) {
    s += split + ".acc7=" + format_optional(m.acc7) + "\n";
    s += split + ".acc2=" + format_optional(m.acc2) + "\n";
    s += split + ".f1=" + format_optional(m.f1) + "\n";
    s += split + ".mae=" + format_optional(m.mae) + "\n";
    s += split + ".corr=" + format_optional(m.corr) + "\n";
  }
  return s;
}

}  // namespace cmir
