#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmir/csv.hpp"
#include "cmir/keyvalue.hpp"
#include "cmir/metrics.hpp"
#include "cmir/scm.hpp"
#include "cmir/trainer.hpp"

namespace cmir {

inline double median(std::vector<double> v) {
  if (v.empty()) throw EmptyInputError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw EmptyInputError("mean of an empty list");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Population standard deviation (0 for a single value).
/// The mean is taken as an offset from the first value so identical values
/// give exactly 0.
inline double stddev(const std::vector<double>& v) {
  if (v.empty()) throw EmptyInputError("stddev of an empty list");
  double shift = 0.0;
  for (double x : v) shift += x - v.front();
  const double m = v.front() + shift / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// ---- long-format metric rows: run,split,corruption,metric,value ----------

inline const std::vector<std::string>& metric_header() {
  static const std::vector<std::string> h{"run", "split", "corruption", "metric", "value"};
  return h;
}

inline std::vector<std::pair<std::string, std::optional<double>>> metric_fields(const MetricReport& r) {
  return {{"acc7", r.acc7}, {"acc2", r.acc2}, {"f1", r.f1}, {"mae", r.mae}, {"corr", r.corr}};
}

inline void append_metric_rows(csv::Table& t, const std::string& run, const std::string& split,
                               const std::string& corruption, const MetricReport& r) {
  if (t.header.empty()) t.header = metric_header();
  for (const auto& [name, v] : metric_fields(r)) {
    t.rows.push_back({run, split, corruption, name, format_optional(v)});
  }
}

inline csv::Table metric_table(const RunRecord& rec, const std::string& run) {
  csv::Table t;
  t.header = metric_header();
  for (const auto& [split, m] : rec.final_metrics) append_metric_rows(t, run, split, "none", m);
  return t;
}

// ---- noise robustness ------------------------------------------------------

/// "a:b:step" (inclusive, rounded to 1e-12) or a comma list.
inline std::vector<double> parse_noise_rates(std::string_view text) {
  std::vector<double> out;
  if (text.find(':') != std::string_view::npos) {
    std::vector<double> parts;
    std::size_t start = 0;
    while (true) {
      const auto colon = text.find(':', start);
      parts.push_back(kv::parse_double("nr", text.substr(start, colon - start)));
      if (colon == std::string_view::npos) break;
      start = colon + 1;
    }
    if (parts.size() != 3 || !(parts[2] > 0) || parts[1] < parts[0]) {
      throw ConfigError("noise-rate range must be start:stop:step with step > 0");
    }
    const auto count = static_cast<std::size_t>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
    for (std::size_t i = 0; i <= count; ++i) {
      out.push_back(std::round((parts[0] + static_cast<double>(i) * parts[2]) * 1e12) / 1e12);
    }
  } else {
    out = kv::parse_list("nr", text);
  }
  for (double v : out) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("noise rate " + kv::format_double(v) + " outside [0, 1]");
  }
  return out;
}

inline std::vector<CorruptionKind> parse_corruption_kinds(std::string_view text) {
  std::vector<CorruptionKind> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(parse_corruption(kv::trim(text.substr(start, comma - start))));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct NoiseRow {
  CorruptionKind kind = CorruptionKind::gaussian_mix;
  std::optional<double> noise_rate;  ///< absent on the per-kind average row
  MetricReport metrics;
};

/// Corrupts `split` for each (kind, NR), evaluates, then appends one average
/// row per kind (mean of each metric over the NR list).
inline std::vector<NoiseRow> noise_bench(const CmirModel& model, const Split& split, bool vanilla, Task task,
                                         const std::vector<CorruptionKind>& kinds,
                                         const std::vector<double>& rates, std::uint64_t seed) {
  if (kinds.empty() || rates.empty()) throw EmptyInputError("noise bench needs kinds and noise rates");
  std::vector<NoiseRow> rows;
  for (CorruptionKind kind : kinds) {
    std::vector<NoiseRow> block;
    for (double nr : rates) {
      const Split noisy = corrupt(split, CorruptionSpec{kind, nr, seed});
      block.push_back({kind, nr, evaluate(model, noisy, vanilla, task)});
    }
    NoiseRow avg{kind, std::nullopt, {}};
    auto average = [&](auto member) {
      std::vector<double> v;
      for (const auto& r : block)
        if (r.metrics.*member) v.push_back(*(r.metrics.*member));
      return v.size() == block.size() ? std::optional<double>(mean(v)) : std::nullopt;
    };
    avg.metrics.acc7 = average(&MetricReport::acc7);
    avg.metrics.acc2 = average(&MetricReport::acc2);
    avg.metrics.f1 = average(&MetricReport::f1);
    avg.metrics.mae = average(&MetricReport::mae);
    avg.metrics.corr = average(&MetricReport::corr);
    avg.metrics.n = block.front().metrics.n;
    rows.insert(rows.end(), block.begin(), block.end());
    rows.push_back(avg);
  }
  return rows;
}

inline csv::Table noise_table(const std::vector<NoiseRow>& rows) {
  csv::Table t;
  t.header = {"kind", "nr", "acc7", "acc2", "f1", "mae", "corr", "n"};
  for (const auto& r : rows) {
    std::vector<std::string> row{to_string(r.kind), r.noise_rate ? kv::format_double(*r.noise_rate) : "Avg"};
    for (const auto& [name, v] : metric_fields(r.metrics)) row.push_back(format_optional(v));
    row.push_back(std::to_string(r.metrics.n));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---- multi-seed comparisons ----------------------------------------------

inline TrainConfig with_seed(TrainConfig c, std::uint64_t seed) {
  set_seed(c, seed);
  return c;
}

/// Worst per-environment MAE over the in-distribution and OOD test sets.
inline double worst_environment_mae(const CmirModel& model, const Dataset& ds, bool vanilla) {
  const Task task = ds.config.task;
  double worst = 0.0;
  for (const Split* sp : {&ds.test_id, &ds.test_ood}) {
    for (const auto& [env, mae] : per_environment_mae(model, *sp, vanilla, task)) worst = std::max(worst, mae);
  }
  return worst;
}

struct OodSeedResult {
  std::uint64_t seed = 0;
  FitResult cmir;
  FitResult vanilla;
  double cmir_worst_mae = 0.0;
  double vanilla_worst_mae = 0.0;

  const MetricReport& metrics(bool van, const std::string& split) const {
    return (van ? vanilla : cmir).record.final_metrics.at(split);
  }
};

/// CmIR and the vanilla framework trained on identical data and seeds
/// (seed, seed + 1, ...).
inline std::vector<OodSeedResult> ood_bench(const TrainConfig& config, std::size_t seeds,
                                            const std::function<void(const OodSeedResult&)>& progress = {}) {
  std::vector<OodSeedResult> out;
  for (std::size_t i = 0; i < seeds; ++i) {
    TrainConfig c = with_seed(config, config.seed + i);
    c.vanilla = false;
    TrainConfig v = c;
    v.vanilla = true;
    const Dataset ds = generate(c.scm);
    FitResult a = fit(c, ds);
    FitResult b = fit(v, ds);
    const double wa = worst_environment_mae(a.model, ds, false);
    const double wb = worst_environment_mae(b.model, ds, true);
    out.push_back({c.seed, std::move(a), std::move(b), wa, wb});
    if (progress) progress(out.back());
  }
  return out;
}

inline double acc2_or_nan(const MetricReport& m) { return m.acc2.value_or(NAN); }

inline csv::Table ood_table(const std::vector<OodSeedResult>& results) {
  csv::Table t;
  t.header = {"seed", "model", "id_acc2", "ood_acc2", "id_mae", "ood_mae", "worst_env_mae"};
  std::vector<double> cols[3][5];
  auto row = [&](const std::string& seed, const std::string& model, const std::vector<double>& v) {
    std::vector<std::string> r{seed, model};
    for (double x : v) r.push_back(kv::format_double(x));
    t.rows.push_back(std::move(r));
  };
  for (const auto& r : results) {
    std::vector<double> vals[2];
    for (int van = 0; van < 2; ++van) {
      const auto& id = r.metrics(van, "test_id");
      const auto& ood = r.metrics(van, "test_ood");
      vals[van] = {acc2_or_nan(id), acc2_or_nan(ood), id.mae.value_or(NAN), ood.mae.value_or(NAN),
                   van ? r.vanilla_worst_mae : r.cmir_worst_mae};
    }
    std::vector<double> delta(5);
    for (int k = 0; k < 5; ++k) delta[k] = vals[0][k] - vals[1][k];
    row(std::to_string(r.seed), "cmir", vals[0]);
    row(std::to_string(r.seed), "vanilla", vals[1]);
    row(std::to_string(r.seed), "delta", delta);
    for (int k = 0; k < 5; ++k) {
      cols[0][k].push_back(vals[0][k]);
      cols[1][k].push_back(vals[1][k]);
      cols[2][k].push_back(delta[k]);
    }
  }
  if (!results.empty()) {
    const char* names[3] = {"cmir", "vanilla", "delta"};
    for (int m = 0; m < 3; ++m) {
      std::vector<double> med;
      for (int k = 0; k < 5; ++k) med.push_back(median(cols[m][k]));
      row("median", names[m], med);
    }
  }
  return t;
}

// ---- ablation ---------------------------------------------------------------

enum class AblationDrop { inv, dec, rec, all };

inline AblationDrop parse_ablation_drop(std::string_view s) {
  if (s == "inv") return AblationDrop::inv;
  if (s == "dec") return AblationDrop::dec;
  if (s == "rec") return AblationDrop::rec;
  if (s == "all") return AblationDrop::all;
  throw ConfigError("unknown --drop value '" + std::string(s) + "' (inv|dec|rec|all)");
}

inline std::string to_string(AblationDrop d) {
  switch (d) {
    case AblationDrop::inv: return "no_inv";
    case AblationDrop::dec: return "no_dec";
    case AblationDrop::rec: return "no_rec";
    default: return "vanilla";
  }
}

/// Dropping all three constraints is the vanilla framework: the predictor
/// reads adapter outputs directly.
inline TrainConfig ablated(TrainConfig c, AblationDrop d) {
  switch (d) {
    case AblationDrop::inv: c.no_inv = true; break;
    case AblationDrop::dec: c.no_dec = true; break;
    case AblationDrop::rec: c.no_rec = true; break;
    case AblationDrop::all: c.vanilla = true; break;
  }
  return c;
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  MetricReport id;
  MetricReport ood;
};

inline std::vector<AblationRow> ablate(const TrainConfig& config, const std::vector<AblationDrop>& drops,
                                       std::size_t seeds) {
  std::vector<AblationRow> out;
  for (std::size_t i = 0; i < seeds; ++i) {
    const TrainConfig c = with_seed(config, config.seed + i);
    const Dataset ds = generate(c.scm);
    auto run = [&](const TrainConfig& cfg, std::string name) {
      const FitResult r = fit(cfg, ds);
      out.push_back({std::move(name), cfg.seed, r.record.final_metrics.at("test_id"),
                     r.record.final_metrics.at("test_ood")});
    };
    run(c, "full");
    for (AblationDrop d : drops) run(ablated(c, d), to_string(d));
  }
  return out;
}

inline csv::Table ablation_table(const std::vector<AblationRow>& rows) {
  csv::Table t;
  t.header = {"variant", "seed", "id_acc2", "ood_acc2", "id_mae", "ood_mae"};
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
    t.rows.push_back({r.variant, std::to_string(r.seed), format_optional(r.id.acc2), format_optional(r.ood.acc2),
                      format_optional(r.id.mae), format_optional(r.ood.mae)});
  }
  for (const auto& v : order) {
    std::vector<double> cols[4];
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      cols[0].push_back(acc2_or_nan(r.id));
      cols[1].push_back(acc2_or_nan(r.ood));
      cols[2].push_back(r.id.mae.value_or(NAN));
      cols[3].push_back(r.ood.mae.value_or(NAN));
    }
    std::vector<std::string> row{v, "median"};
    for (auto& c : cols) row.push_back(kv::format_double(median(c)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace cmir
