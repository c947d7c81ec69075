#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmir/bench.hpp"
#include "cmir/csv.hpp"
#include "cmir/report.hpp"

using namespace cmir;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig c;
  c.scm.n_train = 400;
  c.scm.n_val = 200;
  c.scm.n_test = 400;
  c.shared_dim = 8;
  c.hidden_dim = 16;
  c.epochs = 5;
  set_seed(c, seed);
  return c;
}

TrainConfig bench_config() { return load_train_config(CMIR_SOURCE_DIR "/configs/ood_bench.cfg"); }

std::string random_field(rng::Stream& s) {
  static const std::string alphabet = "ab,\"\n \r1.-x";
  std::string f;
  const std::size_t len = s.below(6);
  for (std::size_t i = 0; i < len; ++i) f += alphabet[s.below(alphabet.size())];
  return f;
}

}  // namespace

TEST(NoiseRates, RangeAndListForms) {
  const auto r = parse_noise_rates("0.1:0.7:0.1");
  ASSERT_EQ(r.size(), 7u);
  EXPECT_DOUBLE_EQ(r.front(), 0.1);
  EXPECT_DOUBLE_EQ(r.back(), 0.7);
  EXPECT_EQ(parse_noise_rates("0"), (std::vector<double>{0.0}));
  EXPECT_EQ(parse_noise_rates("0.2,0.5"), (std::vector<double>{0.2, 0.5}));
  EXPECT_THROW(parse_noise_rates("0.1:0.7:0"), ConfigError);
  EXPECT_THROW(parse_noise_rates("1.5"), ConfigError);
  EXPECT_THROW(parse_corruption_kinds("g,q"), ConfigError);
}

TEST(NoiseBench, ZeroRateEqualsCleanEvaluation) {
  const TrainConfig c = small_config(1);
  const Dataset ds = generate(c.scm);
  const CmirModel model = fit(c, ds).model;
  const auto rows = noise_bench(model, ds.test_id, false, Task::regression,
                                {CorruptionKind::gaussian_mix, CorruptionKind::random_erase}, {0.0}, 3);
  const MetricReport clean = evaluate(model, ds.test_id, false, Task::regression);
  ASSERT_EQ(rows.size(), 4u);  // one rate plus the Avg row, per kind
  for (const auto& r : rows) {
    EXPECT_EQ(r.metrics.mae, clean.mae);
    EXPECT_EQ(r.metrics.acc2, clean.acc2);
    EXPECT_EQ(r.metrics.corr, clean.corr);
  }
  EXPECT_FALSE(rows[1].noise_rate.has_value());
  const csv::Table t = noise_table(rows);
  EXPECT_EQ(t.rows[1][1], "Avg");
}

TEST(NoiseBench, GaussianSweepMaeIsMostlyMonotone) {
  const TrainConfig c = bench_config();
  const Dataset ds = generate(c.scm);
  const CmirModel model = fit(c, ds).model;
  const auto rows = noise_bench(model, ds.test_id, false, Task::regression, {CorruptionKind::gaussian_mix},
                                parse_noise_rates("0:0.7:0.1"), 0);
  ASSERT_EQ(rows.size(), 9u);  // 8 rates plus Avg
  std::size_t rising = 0;
  for (std::size_t i = 1; i < 8; ++i) rising += *rows[i].metrics.mae >= *rows[i - 1].metrics.mae;
  EXPECT_GE(rising, 6u);
}

TEST(OodBench, NoShiftGivesNoAdvantage) {
  TrainConfig c = bench_config();
  c.scm.gamma_test = c.scm.gamma.front();
  std::vector<double> delta;
  for (const auto& r : ood_bench(c, 3)) {
    delta.push_back(*r.metrics(false, "test_ood").acc2 - *r.metrics(true, "test_ood").acc2);
  }
  EXPECT_LE(std::abs(median(delta)), 0.02);
}

TEST(OodBench, TableHasDeltaAndMedianRows) {
  TrainConfig c = small_config(2);
  c.epochs = 1;
  const auto res = ood_bench(c, 2);
  const csv::Table t = ood_table(res);
  ASSERT_EQ(t.rows.size(), 2u * 3 + 3);
  EXPECT_EQ(t.rows[2][1], "delta");
  EXPECT_EQ(t.rows.back()[0], "median");
  const double d = kv::parse_double("d", t.rows[2][3]);
  EXPECT_NEAR(d, *res[0].metrics(false, "test_ood").acc2 - *res[0].metrics(true, "test_ood").acc2, 1e-12);
}

TEST(Ablate, DropAllIsVanillaAndFullIsAlwaysRun) {
  EXPECT_TRUE(ablated(TrainConfig{}, AblationDrop::all).vanilla);
  EXPECT_TRUE(ablated(TrainConfig{}, AblationDrop::inv).no_inv);
  EXPECT_EQ(to_string(parse_ablation_drop("all")), "vanilla");
  EXPECT_THROW(parse_ablation_drop("pred"), ConfigError);
  TrainConfig c = small_config(3);
  c.epochs = 1;
  const auto rows = ablate(c, {AblationDrop::dec}, 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].variant, "full");
  EXPECT_EQ(rows[1].variant, "no_dec");
}

TEST(Csv, RandomTablesRoundTripByteIdentical) {
  rng::Stream s(42);
  for (int trial = 0; trial < 200; ++trial) {
    csv::Table t;
    const std::size_t cols = 1 + s.below(4);
    for (std::size_t j = 0; j < cols; ++j) t.header.push_back("h" + std::to_string(j) + random_field(s));
    const std::size_t rows = s.below(5);
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<std::string> r;
      for (std::size_t j = 0; j < cols; ++j) r.push_back(random_field(s));
      t.rows.push_back(r);
    }
    const std::string text = csv::format(t);
    const csv::Table back = csv::parse(text);
    EXPECT_EQ(back.header, t.header);
    EXPECT_EQ(back.rows, t.rows);
    EXPECT_EQ(csv::format(back), text);
  }
}

TEST(Csv, MalformedInput) {
  EXPECT_THROW(csv::parse(""), EmptyInputError);
  EXPECT_THROW(csv::parse("a,b\n1\n"), DataError);
  EXPECT_THROW(csv::parse("a\n\"open\n"), DataError);
  EXPECT_THROW(csv::parse("a\n1\n").column("b"), DataError);
}

TEST(Report, SingleRunHasZeroSpread) {
  TempDir dir("cmir_report_single");
  csv::Table t;
  t.header = metric_header();
  t.rows = {{"r0", "test_ood", "none", "acc2", "0.625"}, {"r0", "test_ood", "none", "mae", "NA"}};
  csv::write((dir.path / "run0.csv").string(), t);
  const Report rep = build_report(dir.path);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].mean, 0.625);
  EXPECT_EQ(rep.rows[0].median, 0.625);
  EXPECT_EQ(rep.rows[0].std, 0.0);
}

TEST(Report, IdenticalRunsHaveExactlyZeroStd) {
  TempDir dir("cmir_report_five");
  TrainConfig c = small_config(4);
  c.epochs = 2;
  for (int i = 0; i < 5; ++i) {
    const FitResult r = fit(c);
    fs::create_directories(dir.path / ("run" + std::to_string(i)));
    csv::write((dir.path / ("run" + std::to_string(i)) / "metrics.csv").string(), metric_table(r.record, "run"));
  }
  fs::create_directories(dir.path / "noise");
  const Dataset ds = generate(c.scm);
  const CmirModel m(c.model_config(), 1);
  csv::write((dir.path / "noise" / "noise.csv").string(),
             noise_table(noise_bench(m, ds.test_id, false, Task::regression,
                                     {CorruptionKind::gaussian_mix, CorruptionKind::laplace_mix},
                                     {0.1, 0.4, 0.7}, 0)));
  std::ofstream(dir.path / "notes.csv") << "x,y\n1,2\n";

  const Report rep = write_report(dir.path);
  EXPECT_EQ(rep.files, 6u);
  ASSERT_EQ(rep.skipped.size(), 1u);
  std::size_t five = 0;
  for (const auto& r : rep.rows) {
    if (r.n != 5) continue;
    ++five;
    EXPECT_EQ(r.std, 0.0) << r.split << " " << r.metric;
  }
  EXPECT_GT(five, 0u);

  // Written files: CSV re-parses, SVG is well-formed XML with one polyline per kind.
  const csv::Table summary = csv::read((dir.path / "summary.csv").string());
  EXPECT_EQ(summary.rows.size(), rep.rows.size());
  boost::property_tree::ptree tree;
  ASSERT_NO_THROW(boost::property_tree::read_xml((dir.path / "summary.svg").string(), tree));
  std::size_t lines = 0;
  for (const auto& [name, child] : tree.get_child("svg")) lines += name == "polyline";
  EXPECT_EQ(lines, 2u);
  EXPECT_EQ(build_report(dir.path).files, 6u);  // earlier summary.csv is not re-ingested
}

TEST(Report, EmptyDirectoryIsAnError) {
  TempDir dir("cmir_report_empty");
  EXPECT_THROW(build_report(dir.path), EmptyInputError);
  EXPECT_THROW(build_report(dir.path / "missing"), LoadError);
}

TEST(Report, SvgEscapesAndParsesWithoutNoiseData) {
  Report rep;
  rep.rows.push_back({"test", "none", "a<b", 1, 1.0, 0.0, 1.0});
  boost::property_tree::ptree tree;
  std::istringstream in(line_chart_svg(rep, "a<b&c"));
  ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree));
}

TEST(Statistics, Basics) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_EQ(mean({1, 2, 3}), 2.0);
  EXPECT_EQ(stddev({2, 2, 2}), 0.0);
  EXPECT_NEAR(stddev({1, 3}), 1.0, 1e-15);
}
