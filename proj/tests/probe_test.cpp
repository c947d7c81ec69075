#include <gtest/gtest.h>

#include <cstring>

#include "cmir/probe.hpp"
#include "cmir/trainer.hpp"

using namespace cmir;

namespace {

TrainConfig probe_config(std::uint64_t seed) {
  TrainConfig c;
  c.scm.n_train = 600;
  c.scm.n_val = 200;
  c.scm.n_test = 600;
  c.scm.gamma = {0.5, 1.5};
  c.shared_dim = 8;
  c.hidden_dim = 16;
  set_seed(c, seed);
  return c;
}

std::vector<char> param_bytes(const CmirModel& m) {
  std::vector<char> out;
  for (const auto& p : m.named_parameters()) {
    const auto* b = reinterpret_cast<const char*>(p.tensor.values().data());
    out.insert(out.end(), b, b + p.tensor.size() * sizeof(double));
  }
  return out;
}

// Labels shuffled within each split: the features keep their structure but
// say nothing about the label.
Dataset without_label_signal(Dataset ds, std::uint64_t seed) {
  for (Split* sp : ds.splits()) rng::Stream(rng::derive_key(seed, sp->name)).shuffle(sp->labels);
  return ds;
}

}  // namespace

TEST(Probe, UntrainedModelOnSignalFreeLabelsIsAtChance) {
  TrainConfig c = probe_config(1);
  c.scm.task = Task::classification;
  const Dataset ds = without_label_signal(generate(c.scm), 3);
  const CmirModel model(c.model_config(), c.seed);
  for (ProbeInput in : {ProbeInput::invariant, ProbeInput::spurious}) {
    const ProbeResult r = probe(model, ds, ProbeTarget::label, in, {}, false);
    ASSERT_TRUE(r.report && r.report->acc2);
    EXPECT_NEAR(*r.report->acc2, 0.5, 0.1);
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_NE(r.warnings[0].find("untrained"), std::string::npos);
  }
}

TEST(Probe, LeavesModelUntouched) {
  const TrainConfig c = probe_config(2);
  const Dataset ds = generate(c.scm);
  const CmirModel model(c.model_config(), c.seed);
  const auto before = param_bytes(model);
  const ProbeResult env = probe(model, ds, ProbeTarget::environment, ProbeInput::spurious);
  const ProbeResult lab = probe(model, ds, ProbeTarget::label, ProbeInput::invariant);
  EXPECT_TRUE(env.model_untouched);
  EXPECT_TRUE(lab.model_untouched);
  EXPECT_EQ(param_bytes(model), before);
  EXPECT_TRUE(env.warnings.empty());
}

TEST(Probe, EnvironmentTargetReportsMseAndLabelTargetMetrics) {
  const TrainConfig c = probe_config(3);
  const Dataset ds = generate(c.scm);
  const CmirModel model(c.model_config(), c.seed);
  const ProbeResult env = probe(model, ds, ProbeTarget::environment, ProbeInput::invariant);
  ASSERT_TRUE(env.mse);
  EXPECT_FALSE(env.report);
  EXPECT_GE(*env.mse, 0.0);
  // A constant predictor of the pooled mean gamma is the reference scale.
  double mean = 0.0, var = 0.0;
  const Split pooled = concat_splits(ds.train, ds.test_ood, "pooled");
  for (double g : pooled.env_gamma) mean += g;
  mean /= static_cast<double>(pooled.size());
  for (double g : pooled.env_gamma) var += (g - mean) * (g - mean);
  var /= static_cast<double>(pooled.size());
  EXPECT_LT(*env.mse, 1.5 * var);

  const ProbeResult lab = probe(model, ds, ProbeTarget::label, ProbeInput::invariant);
  ASSERT_TRUE(lab.report);
  EXPECT_FALSE(lab.mse);
  EXPECT_EQ(lab.report->n, ds.test_ood.size());
}

TEST(Probe, DeterministicForSeed) {
  const TrainConfig c = probe_config(4);
  const Dataset ds = generate(c.scm);
  const CmirModel model(c.model_config(), c.seed);
  ProbeConfig pc;
  pc.steps = 50;
  pc.seed = 9;
  EXPECT_EQ(*probe(model, ds, ProbeTarget::environment, ProbeInput::spurious, pc).mse,
            *probe(model, ds, ProbeTarget::environment, ProbeInput::spurious, pc).mse);
}

TEST(Probe, SplitHelpers) {
  const TrainConfig c = probe_config(5);
  const Dataset ds = generate(c.scm);
  const Split both = concat_splits(ds.train, ds.test_ood, "both");
  EXPECT_EQ(both.size(), ds.train.size() + ds.test_ood.size());
  EXPECT_EQ(both.modalities[2](ds.train.size(), 3), ds.test_ood.modalities[2](0, 3));
  const auto [a, b] = halve(both, 1);
  EXPECT_EQ(a.size() + b.size(), both.size());
  EXPECT_EQ(a.size(), both.size() / 2);
  EXPECT_THROW(parse_probe_target("noise"), ConfigError);
  EXPECT_THROW(parse_probe_input("both"), ConfigError);
}
