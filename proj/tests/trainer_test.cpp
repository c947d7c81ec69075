#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cmir/checkpoint.hpp"
#include "cmir/trainer.hpp"
#include "gradcheck.hpp"

using namespace cmir;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(std::uint64_t seed = 1) {
  TrainConfig c;
  c.scm.modalities = 2;
  c.scm.causal_dim = 2;
  c.scm.spurious_dim = 2;
  c.scm.feature_dim = 5;
  c.scm.n_train = 96;
  c.scm.n_val = 48;
  c.scm.n_test = 48;
  c.shared_dim = 3;
  c.hidden_dim = 6;
  c.batch_size = 16;
  c.epochs = 3;
  c.K = 2;
  c.alpha1 = 0.3;
  c.lambda = {0.5, 0.1, 0.05};
  set_seed(c, seed);
  return c;
}

std::vector<double> loss_curve(const TrainConfig& c, const Dataset& ds, std::size_t steps) {
  CmirModel model(c.model_config(), c.seed);
  AdamWState opt;
  opt.learning_rate = c.learning_rate();
  std::vector<std::size_t> idx(c.batch_size);
  std::vector<double> out;
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = (s * idx.size() + i) % ds.train.size();
    out.push_back(train_step(model, opt, make_batch(ds.train, idx), c, 1000 + s).total);
  }
  return out;
}

std::vector<char> param_bytes(const CmirModel& m) {
  std::vector<char> out;
  for (const auto& p : m.named_parameters()) {
    const auto* b = reinterpret_cast<const char*>(p.tensor.values().data());
    out.insert(out.end(), b, b + p.tensor.size() * sizeof(double));
  }
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Config, DefaultsAndDerivedValues) {
  const TrainConfig c;
  EXPECT_EQ(c.batch_size, 48u);
  EXPECT_DOUBLE_EQ(c.learning_rate(), 1e-3);
  EXPECT_EQ(c.K, 1u);
  EXPECT_EQ(c.alpha1, 0.1);
  EXPECT_EQ(c.lambda.inv, 0.1);
  EXPECT_EQ(c.lambda.dec, 0.001);
  EXPECT_EQ(c.lambda.rec, 0.05);
  EXPECT_EQ(c.shared_dim, 150u);
  EXPECT_EQ(c.hidden_dim, 256u);
  EXPECT_EQ(c.orth_alpha, 1.0);
  EXPECT_EQ(c.patience, 10u);
  TrainConfig v = c;
  v.vanilla = true;
  const LossWeights w = v.effective_weights();
  EXPECT_EQ(w.inv + w.dec + w.rec, 0.0);
}

TEST(Config, RecordRoundTripAndUnknownKey) {
  TrainConfig c = tiny_config(9);
  c.invariance_norm = InvarianceNorm::raw_sum;
  c.perturb_at = PerturbAt::adapter;
  c.no_dec = true;
  const TrainConfig back = apply_record(TrainConfig{}, to_record(c));
  EXPECT_EQ(kv::format_lines(to_record(back)), kv::format_lines(to_record(c)));
  EXPECT_THROW(apply_record(TrainConfig{}, {{"lamda_inv", "0.1"}}), ConfigError);
  EXPECT_THROW(apply_record(TrainConfig{}, {{"K", "two"}}), ConfigError);
  const TrainConfig lr = apply_record(TrainConfig{}, {{"learning_rate", "0.02"}});
  EXPECT_DOUBLE_EQ(lr.learning_rate(), 0.02);
}

TEST(Config, FileParsingAndSeedOverride) {
  TempDir dir("cmir_trainer_cfg");
  const fs::path f = dir.path / "run.cfg";
  std::ofstream(f) << "# comment\nepochs = 4\nscm.gamma=0.5,1.5\nseed=3\n";
  unsetenv("CMIR_SEED");
  TrainConfig c = load_train_config(f.string());
  EXPECT_EQ(c.epochs, 4u);
  EXPECT_EQ(c.scm.gamma, (std::vector<double>{0.5, 1.5}));
  EXPECT_EQ(c.seed, 3u);
  setenv("CMIR_SEED", "77", 1);
  c = load_train_config(f.string());
  unsetenv("CMIR_SEED");
  EXPECT_EQ(c.seed, 77u);
  EXPECT_EQ(c.scm.seed, 77u);
  std::ofstream(f) << "bogus=1\n";
  EXPECT_THROW(load_train_config(f.string()), ConfigError);
}

TEST(Config, ValidationErrors) {
  TrainConfig c = tiny_config();
  c.invariance_mode = InvarianceMode::kl;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.loss_kind = PredictionLossKind::cross_entropy;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.K = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.lambda.dec = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainStep, VanillaBreakdownIsPredictionOnly) {
  TrainConfig c = tiny_config();
  c.vanilla = true;
  const Dataset ds = generate(c.scm);
  CmirModel model(c.model_config(), c.seed);
  Tape tape;
  const LossBreakdown b = compute_losses(tape, model, full_batch(ds.train), c, 5);
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_EQ(b.inv[m], 0.0);
    EXPECT_EQ(b.dec[m], 0.0);
    EXPECT_EQ(b.rec[m], 0.0);
  }
  EXPECT_EQ(b.total, b.pred);
  AdamWState opt;
  EXPECT_NO_THROW(train_step(model, opt, full_batch(ds.train), c, 5));
}

TEST(TrainStep, ZeroWeightsMatchAblationFlags) {
  const TrainConfig base = tiny_config(4);
  const Dataset ds = generate(base.scm);
  TrainConfig zeroed = base;
  zeroed.lambda = {0, 0, 0};
  zeroed.alpha1 = 0.0;
  TrainConfig flagged = base;
  flagged.no_inv = flagged.no_dec = flagged.no_rec = true;
  EXPECT_EQ(loss_curve(zeroed, ds, 10), loss_curve(flagged, ds, 10));
}

TEST(TrainStep, ZeroNoiseMakesInvarianceExactlyZero) {
  TrainConfig c = tiny_config(5);
  c.alpha1 = 0.0;
  const Dataset ds = generate(c.scm);
  CmirModel model(c.model_config(), c.seed);
  AdamWState opt;
  opt.learning_rate = c.learning_rate();
  for (std::uint64_t s = 0; s < 5; ++s) {
    const LossBreakdown b = train_step(model, opt, full_batch(ds.train), c, s);
    for (double v : b.inv) EXPECT_EQ(v, 0.0);
    EXPECT_GT(b.dec[0], 0.0);
  }
}

TEST(TrainStep, TinyStepUpdatesParameters) {
  // N=4, M=2, d=3.
  TrainConfig c = tiny_config(6);
  const Dataset ds = generate(c.scm);
  CmirModel model(c.model_config(), c.seed);
  const auto before = param_bytes(model);
  AdamWState opt;
  opt.learning_rate = c.learning_rate();
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const Batch batch = make_batch(ds.train, idx);
  const double first = train_step(model, opt, batch, c, 1).total;
  EXPECT_NE(param_bytes(model), before);
  EXPECT_TRUE(std::isfinite(first));
  EXPECT_THROW(train_step(model, opt, make_batch(ds.train, std::vector<std::size_t>{0}), c, 1), ContractError);
}

TEST(TrainStep, KlModeTrainsUnimodalHeads) {
  TrainConfig c = tiny_config(7);
  c.scm.task = Task::classification;
  c.invariance_mode = InvarianceMode::kl;
  const Dataset ds = generate(c.scm);
  CmirModel model(c.model_config(), c.seed);
  AdamWState opt;
  const LossBreakdown b = train_step(model, opt, full_batch(ds.train), c, 2);
  EXPECT_GT(b.inv[0], 0.0);
  EXPECT_GT(b.inv[1], 0.0);
}

TEST(TrainStep, NanAbortNamesTerm) {
  const TrainConfig c = tiny_config(8);
  const Dataset ds = generate(c.scm);
  CmirModel model(c.model_config(), c.seed);
  auto params = model.named_parameters();
  for (auto& p : params)
    if (p.name == "predictor.1.bias") p.tensor.fill(std::numeric_limits<double>::quiet_NaN());
  AdamWState opt;
  try {
    train_step(model, opt, full_batch(ds.train), c, 0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'pred'"), std::string::npos) << e.what();
  }
  LossBreakdown b;
  b.inv = {0.0, std::numeric_limits<double>::infinity()};
  b.dec = {0.0, 0.0};
  b.rec = {0.0, 0.0};
  EXPECT_EQ(first_nan_term(b), "inv[modality 1]");
}

TEST(Fit, ZeroEpochsReportsInitialModel) {
  TrainConfig c = tiny_config(10);
  c.epochs = 0;
  const Dataset ds = generate(c.scm);
  const FitResult r = fit(c, ds);
  EXPECT_TRUE(r.record.history.empty());
  EXPECT_EQ(r.record.best_epoch, 0u);
  const CmirModel fresh(c.model_config(), c.seed);
  EXPECT_EQ(param_bytes(r.model), param_bytes(fresh));
  EXPECT_EQ(r.record.final_metrics.at("val").mae, evaluate(fresh, ds.val, false, Task::regression).mae);
  EXPECT_EQ(r.record.final_metrics.size(), 4u);
}

TEST(Fit, DeterministicForFixedSeed) {
  const TrainConfig c = tiny_config(11);
  const FitResult a = fit(c), b = fit(c);
  EXPECT_EQ(param_bytes(a.model), param_bytes(b.model));
  ASSERT_EQ(a.record.history.size(), b.record.history.size());
  for (std::size_t e = 0; e < a.record.history.size(); ++e) {
    EXPECT_EQ(a.record.history[e].mean.total, b.record.history[e].mean.total);
  }
  for (const auto& [split, m] : a.record.final_metrics) {
    EXPECT_EQ(m.mae, b.record.final_metrics.at(split).mae);
    EXPECT_EQ(m.acc2, b.record.final_metrics.at(split).acc2);
  }
  TrainConfig other = c;
  set_seed(other, 12);
  EXPECT_NE(param_bytes(fit(other).model), param_bytes(a.model));
}

TEST(Fit, HistoryBoundedAndEarlyStopping) {
  TrainConfig c = tiny_config(13);
  c.epochs = 40;
  c.patience = 2;
  c.lr_scale = 1e-295;  // updates vanish in rounding, so validation never improves
  const FitResult r = fit(c);
  EXPECT_TRUE(r.record.stopped_early);
  EXPECT_LE(r.record.history.size(), c.epochs);
  EXPECT_NE(format_run_record(r.record).find("stopped_early=1"), std::string::npos);
}

TEST(Fit, TrainingLossDecreasesAcrossSeeds) {
  // Small dimensions stand in for the default widths to keep the test fast.
  std::size_t decreased = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig c = tiny_config(seed);
    c.scm.modalities = 3;
    c.scm.causal_dim = 4;
    c.scm.spurious_dim = 4;
    c.scm.feature_dim = 12;
    c.scm.n_train = 480;
    c.shared_dim = 8;
    c.hidden_dim = 16;
    c.K = 1;
    c.alpha1 = 0.1;
    c.lambda = LossWeights{};
    c.epochs = 30;
    c.patience = 30;
    const FitResult r = fit(c);
    ASSERT_EQ(r.record.history.size(), 30u);
    decreased += r.record.history.back().mean.total < r.record.history.front().mean.total;
  }
  EXPECT_GE(decreased, 4u);
}

TEST(Checkpoint, ByteExactRoundTrip) {
  const TrainConfig c = tiny_config(14);
  const CmirModel model(c.model_config(), 3);
  const auto bytes = checkpoint_bytes(model, {{"seed", "3"}});
  const Checkpoint back = parse_checkpoint(bytes);
  EXPECT_EQ(param_bytes(back.model), param_bytes(model));
  EXPECT_EQ(checkpoint_bytes(back.model, {{"seed", "3"}}), bytes);
  EXPECT_EQ(*echo_value(back.echo, "seed"), "3");

  TempDir dir("cmir_trainer_ckpt");
  const std::string path = (dir.path / "m.ckpt").string();
  save_checkpoint(model, path);
  const Checkpoint loaded = load_checkpoint(path);
  const Dataset ds = generate(c.scm);
  const Tensor a = predict_outputs(model, ds.test_id, false);
  const Tensor b = predict_outputs(loaded.model, ds.test_id, false);
  EXPECT_EQ(std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)), 0);
}

TEST(Checkpoint, LoadErrors) {
  const CmirModel model(tiny_config().model_config(), 0);
  auto bytes = checkpoint_bytes(model);
  TempDir dir("cmir_trainer_ckpt_err");
  const std::string empty = (dir.path / "empty.ckpt").string();
  std::ofstream(empty).close();
  EXPECT_THROW(load_checkpoint(empty), LoadError);
  EXPECT_THROW(load_checkpoint((dir.path / "missing.ckpt").string()), LoadError);

  auto versioned = bytes;
  versioned[8] = 2;
  try {
    parse_checkpoint(versioned);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  EXPECT_THROW(parse_checkpoint(truncated), LoadError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(parse_checkpoint(trailing), LoadError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(magic), LoadError);
}
