// cmir: command-line front end.
//
// Exit codes: 0 success, 1 run failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cmir/bench.hpp"
#include "cmir/checkpoint.hpp"
#include "cmir/csv.hpp"
#include "cmir/dataset_io.hpp"
#include "cmir/probe.hpp"
#include "cmir/report.hpp"
#include "cmir/trainer.hpp"

namespace fs = std::filesystem;
using namespace cmir;

namespace {

struct Options {
  std::string config, data, out, ckpt, kinds = "g,l,e", nr = "0.1:0.7:0.1", drop, target, input, a, b, dir;
  std::string split = "test_ood";
  std::optional<std::uint64_t> seed;
  std::size_t seeds = 5;
  std::size_t steps = 200;
};

TrainConfig load_config(const Options& o) {
  TrainConfig c = apply_record(TrainConfig{}, kv::parse_file(o.config));
  apply_seed_env(c);
  if (o.seed) set_seed(c, *o.seed);
  c.validate();
  return c;
}

std::uint64_t root_seed(const Options& o, std::uint64_t fallback) {
  if (o.seed) return *o.seed;
  if (const char* s = std::getenv("CMIR_SEED"); s && *s) return kv::parse_uint("CMIR_SEED", s);
  return fallback;
}

bool echo_flag(const kv::Record& echo, std::string_view key) {
  const auto v = echo_value(echo, key);
  return v && kv::parse_bool(key, *v);
}

const Split& pick_split(const Dataset& ds, const std::string& name) {
  for (const Split* sp : ds.splits())
    if (sp->name == name) return *sp;
  throw ConfigError("unknown split '" + name + "' (train|val|test_id|test_ood)");
}

void emit(const csv::Table& t, const std::string& out) {
  if (out.empty()) {
    std::cout << csv::format(t);
  } else {
    csv::write(out, t);
  }
}

std::vector<double> read_numbers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "'");
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    std::stringstream parts(tok);
    std::string piece;
    while (std::getline(parts, piece, ',')) {
      if (!piece.empty()) out.push_back(kv::parse_double(path, piece));
    }
  }
  return out;
}

int gen_data(const Options& o) {
  const TrainConfig c = load_config(o);
  const Dataset ds = generate(c.scm);
  write_dataset(o.out, ds);
  std::printf("wrote %zu/%zu/%zu/%zu samples to %s\n", ds.train.size(), ds.val.size(), ds.test_id.size(),
              ds.test_ood.size(), o.out.c_str());
  return 0;
}

int train(const Options& o) {
  TrainConfig c = load_config(o);
  const Dataset ds = read_dataset(o.data);
  c.scm = ds.config;
  fs::create_directories(o.out);
  if (c.checkpoint_path.empty()) c.checkpoint_path = (fs::path(o.out) / "model.ckpt").string();
  c.validate();
  const FitResult r = fit(c, ds);
  std::ofstream(fs::path(o.out) / "record.txt") << format_run_record(r.record);
  csv::write((fs::path(o.out) / "metrics.csv").string(), metric_table(r.record, fs::path(o.out).filename().string()));
  std::printf("best epoch %zu, %s=%s, test_ood acc2=%s\n", r.record.best_epoch, r.record.val_metric_name.c_str(),
              kv::format_double(r.record.best_val_metric).c_str(),
              format_optional(r.record.final_metrics.at("test_ood").acc2).c_str());
  return 0;
}

int eval(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const Dataset ds = read_dataset(o.data);
  const bool vanilla = echo_flag(ck.echo, "vanilla");
  csv::Table t;
  t.header = metric_header();
  for (const Split* sp : ds.splits()) {
    append_metric_rows(t, fs::path(o.ckpt).stem().string(), sp->name, "none",
                       evaluate(ck.model, *sp, vanilla, ds.config.task));
  }
  emit(t, o.out);
  return 0;
}

int noise_bench_cmd(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const Dataset ds = read_dataset(o.data);
  const auto rows = noise_bench(ck.model, pick_split(ds, o.split), echo_flag(ck.echo, "vanilla"), ds.config.task,
                                parse_corruption_kinds(o.kinds), parse_noise_rates(o.nr), root_seed(o, 0));
  emit(noise_table(rows), o.out);
  return 0;
}

int ood_bench_cmd(const Options& o) {
  const TrainConfig c = load_config(o);
  const auto res = ood_bench(c, o.seeds, [](const OodSeedResult& r) {
    std::fprintf(stderr, "seed %llu done (%.1fs + %.1fs)\n", static_cast<unsigned long long>(r.seed),
                 r.cmir.record.wall_seconds, r.vanilla.record.wall_seconds);
  });
  emit(ood_table(res), o.out);
  return 0;
}

int ablate_cmd(const Options& o) {
  const TrainConfig c = load_config(o);
  emit(ablation_table(ablate(c, {parse_ablation_drop(o.drop)}, o.seeds)), o.out);
  return 0;
}

int probe_cmd(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const Dataset ds = read_dataset(o.data);
  ProbeConfig pc;
  pc.steps = o.steps;
  pc.seed = root_seed(o, 0);
  const auto best = echo_value(ck.echo, "best_epoch");
  const bool trained = best && *best != "0";
  const ProbeResult r = probe(ck.model, ds, parse_probe_target(o.target), parse_probe_input(o.input), pc, trained);
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("target=%s\ninput=%s\nsteps=%zu\nlearning_rate=%s\nhidden=%zu\n", to_string(r.target).c_str(),
              to_string(r.input).c_str(), pc.steps, kv::format_double(pc.learning_rate).c_str(), pc.hidden);
  if (r.mse) std::printf("mse=%s\n", kv::format_double(*r.mse).c_str());
  if (r.report) {
    for (const auto& [name, v] : metric_fields(*r.report)) std::printf("%s=%s\n", name.c_str(), format_optional(v).c_str());
  }
  std::printf("model_untouched=%d\n", r.model_untouched ? 1 : 0);
  return 0;
}

int ttest_cmd(const Options& o) {
  const auto a = read_numbers(o.a);
  const auto b = read_numbers(o.b);
  const TTestResult r = paired_ttest(a, b);
  std::printf("n=%zu\nt=%s\ndf=%s\np=%s\n", a.size(), kv::format_double(r.t).c_str(),
              kv::format_double(r.df).c_str(), kv::format_double(r.p_value).c_str());
  return 0;
}

int report_cmd(const Options& o) {
  const Report rep = write_report(o.dir);
  std::cout << summary_text(rep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cmir: cross-modal invariant representation learning on synthetic SCM data"};
  app.require_subcommand(1);
  Options o;
  auto seed_opt = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "root seed (overrides config and CMIR_SEED)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", o.config, "config file")->required();
  gen->add_option("--out", o.out, "output directory")->required();
  seed_opt(gen);

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", o.config, "config file")->required();
  tr->add_option("--data", o.data, "dataset directory")->required();
  tr->add_option("--out", o.out, "run directory")->required();
  seed_opt(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on every split");
  ev->add_option("--ckpt", o.ckpt, "checkpoint")->required();
  ev->add_option("--data", o.data, "dataset directory")->required();
  ev->add_option("--csv", o.out, "write CSV here instead of stdout");

  auto* nb = app.add_subcommand("noise-bench", "metrics under feature corruption");
  nb->add_option("--ckpt", o.ckpt, "checkpoint")->required();
  nb->add_option("--data", o.data, "dataset directory")->required();
  nb->add_option("--kinds", o.kinds, "corruption kinds: g,l,e,m");
  nb->add_option("--nr", o.nr, "noise rates as start:stop:step or a comma list");
  nb->add_option("--split", o.split, "split to corrupt");
  nb->add_option("--csv", o.out, "write CSV here instead of stdout");
  seed_opt(nb);

  auto* ob = app.add_subcommand("ood-bench", "CmIR vs vanilla on in-distribution and OOD splits");
  ob->add_option("--config", o.config, "config file")->required();
  ob->add_option("--seeds", o.seeds, "number of seeds");
  ob->add_option("--csv", o.out, "write CSV here instead of stdout");
  seed_opt(ob);

  auto* ab = app.add_subcommand("ablate", "drop loss terms and compare with full CmIR");
  ab->add_option("--config", o.config, "config file")->required();
  ab->add_option("--drop", o.drop, "inv|dec|rec|all")->required();
  ab->add_option("--seeds", o.seeds, "number of seeds");
  ab->add_option("--csv", o.out, "write CSV here instead of stdout");
  seed_opt(ab);

  auto* pr = app.add_subcommand("probe", "probe frozen representations");
  pr->add_option("--ckpt", o.ckpt, "checkpoint")->required();
  pr->add_option("--data", o.data, "dataset directory")->required();
  pr->add_option("--target", o.target, "env|label")->required();
  pr->add_option("--input", o.input, "inv|spu")->required();
  pr->add_option("--steps", o.steps, "probe optimizer steps");
  seed_opt(pr);

  auto* tt = app.add_subcommand("ttest", "paired two-sided t-test");
  tt->add_option("--a", o.a, "first score file")->required();
  tt->add_option("--b", o.b, "second score file")->required();

  auto* rp = app.add_subcommand("report", "aggregate metric CSVs in a directory");
  rp->add_option("--dir", o.dir, "directory of runs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return gen_data(o);
    if (*tr) return train(o);
    if (*ev) return eval(o);
    if (*nb) return noise_bench_cmd(o);
    if (*ob) return ood_bench_cmd(o);
    if (*ab) return ablate_cmd(o);
    if (*pr) return probe_cmd(o);
    if (*tt) return ttest_cmd(o);
    if (*rp) return report_cmd(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
