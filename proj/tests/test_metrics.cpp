#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "thrifty/errors.hpp"
#include "thrifty/metrics.hpp"
#include "thrifty/sweep.hpp"

using namespace thrifty;
using namespace testing_support;

namespace {

MetricRow row(std::size_t epoch, double acc) {
  MetricRow r;
  r.epoch = epoch;
  r.lr = 0.1 / static_cast<double>(epoch);
  r.train_loss = 2.302585092994046 / static_cast<double>(epoch * epoch);
  r.train_acc = acc / 3.0;
  r.test_acc = acc;
  r.lambda = 3e-4 * std::pow(1.00015, static_cast<double>(epoch));
  r.wall_time_s = 1.5 * static_cast<double>(epoch);
  return r;
}

}  // namespace

TEST_CASE("empty log writes only the header") {
  const auto dir = scratch_dir("metrics_empty");
  write_csv(dir / "log.csv", MetricLog{});
  CHECK(read_text_file(dir / "log.csv") == "epoch,lr,train_loss,train_acc,test_acc,lambda\n");
  CHECK(read_metric_log(dir / "log.csv").rows.empty());
}

TEST_CASE("metric log round trip") {
  MetricLog log;
  for (std::size_t e = 1; e <= 20; ++e) log.append(row(e, 100.0 * static_cast<double>(e) / 21.0));
  const auto dir = scratch_dir("metrics_rt");
  write_csv(dir / "log.csv", log);
  const MetricLog back = read_metric_log(dir / "log.csv");
  CHECK(back.same_values(log));  // shortest round-trip formatting is exact
  for (std::size_t i = 0; i < log.rows.size(); ++i) CHECK(back.rows[i].wall_time_s == 0.0);
  const std::string text = read_text_file(dir / "log.csv");
  CHECK(text.back() == '\n');
  CHECK(text.find('\r') == std::string::npos);
  write_csv(dir / "again.csv", back);
  CHECK(read_text_file(dir / "again.csv") == text);
}

TEST_CASE("metric log invariants") {
  MetricLog log;
  log.append(row(1, 50.0));
  CHECK_THROWS_AS(log.append(row(1, 50.0)), ConfigError);
  CHECK_THROWS_AS(log.append(row(2, 100.5)), ConfigError);
  CHECK_THROWS_AS(log.append(row(2, std::numeric_limits<double>::quiet_NaN())), ConfigError);
  log.append(row(5, 100.0));
  CHECK(log.rows.size() == 2);
}

TEST_CASE("number formatting") {
  for (double v : {0.0, -0.0, 1e-300, 0.1, 1.0 / 3.0, 123456789.125, -2.5e-7}) CHECK(parse_number(format_number(v)) == v);
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(100.0) == "100");
  CHECK(format_number(38784LL) == "38784");
  CHECK(std::isnan(parse_number(format_number(std::nan("")))));
  CHECK(parse_number(format_number(std::numeric_limits<double>::infinity())) ==
        std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(parse_number("1.5x"), FormatError);
  CHECK_THROWS_AS(parse_number(""), FormatError);
}

TEST_CASE("csv parsing errors") {
  CHECK_THROWS_AS(parse_csv(""), FormatError);
  CHECK_THROWS_AS(parse_csv("a,b\n1\n"), FormatError);
  CHECK_THROWS_AS(metric_log_from_table(parse_csv("a,b\n1,2\n")), FormatError);
  const CsvTable t = parse_csv("a,b\n1,2\n3,4\n");
  CHECK(t.rows.size() == 2);
  CHECK(to_csv(t) == "a,b\n1,2\n3,4\n");
  const auto dir = scratch_dir("metrics_io");
  CHECK_THROWS_AS(write_csv(dir / "missing" / "x.csv", t), IoError);
  CHECK_THROWS_AS(read_csv(dir / "absent.csv"), IoError);
}

TEST_CASE("activation matrix shape") {
  const std::size_t T = 4, f = 3;
  std::vector<double> m(T * f);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.25 * static_cast<double>(i);
  const CsvTable t = activation_matrix_table(m, T, f);
  CHECK(t.columns == std::vector<std::string>{"iteration", "f0", "f1", "f2"});
  REQUIRE(t.rows.size() == T);
  for (std::size_t r = 0; r < T; ++r) {
    REQUIRE(t.rows[r].size() == f + 1);
    CHECK(parse_number(t.rows[r][0]) == static_cast<double>(r));
    for (std::size_t c = 0; c < f; ++c) CHECK(parse_number(t.rows[r][c + 1]) == m[r * f + c]);
  }
}

TEST_CASE("sweep manifest") {
  const auto points = parse_sweep_manifest(
      "budget = 5000\n"
      "iterations = 6\n"
      "[one]\n"
      "pools = 1\n"
      "[two]\n"
      "pools = 2\n"
      "history = 2\n"
      "[listed]\n"
      "schedule = 1,2,1,2,1,1\n");
  REQUIRE(points.size() == 3);
  CHECK(points[0].name == "one");
  CHECK(points[0].spec.budget == 5000);
  CHECK(points[0].spec.iterations == 6);
  CHECK(points[0].spec.pools == 1);
  CHECK(points[1].spec.history == 2);
  CHECK(points[2].spec.placement == Placement::explicit_list);
  CHECK(resolve(points[2].spec).schedule.factors == std::vector<std::uint32_t>{1, 2, 1, 2, 1, 1});
  CHECK_THROWS_AS(parse_sweep_manifest("[a]\nunknown_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(load_sweep_manifest(scratch_dir("manifest") / "none.ini"), ConfigError);
}

TEST_CASE("sweep rows") {
  ImageDataset train = synthetic_dataset(16, 3, 1, 8);
  ImageDataset test = synthetic_dataset(8, 3, 2, 8);
  test.split = Split::test;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr_drops = {};
  cfg.batch_size = 8;
  cfg.seed = 5;

  ModelSpec base;
  base.filters = 4;
  base.iterations = 3;
  base.num_classes = 3;
  std::vector<SweepPoint> points;
  for (std::size_t n : {1, 2}) {
    SweepPoint p{"pools" + std::to_string(n), base};
    p.spec.pools = n;
    points.push_back(p);
  }
  SweepPoint broken{"broken", base};
  broken.spec.pools = 4;  // 8x8 input cannot be halved four times
  points.insert(points.begin() + 1, broken);

  const auto rows = sweep(points, train, test, cfg);
  REQUIRE(rows.size() == points.size());
  CHECK(rows[0].name == "pools1");
  CHECK(rows[0].ok);
  CHECK_FALSE(rows[1].ok);
  CHECK_FALSE(rows[1].error.empty());
  CHECK(std::isnan(rows[1].test_acc));
  CHECK(rows[2].ok);
  CHECK(rows[2].n_pools == 2);
  CHECK(rows[0].macs_total > rows[2].macs_total);

  // A single-point sweep is a plain training run.
  ThriftyModel<float> m(resolve(points[0].spec, 8, 8), cfg.seed);
  CHECK(thrifty::train(m, train, test, cfg).final_test_acc == rows[0].test_acc);
  CHECK(rows[0].test_acc_std == 0.0);

  const CsvTable t = sweep_table(rows);
  CHECK(t.rows.size() == 3);
  CHECK(t.columns.back() == "status");
  CHECK(t.rows[0].back() == "ok");
  CHECK(to_csv(sweep_table(sweep(points, train, test, cfg))) == to_csv(t));

  const auto rep = sweep({points[0]}, train, test, cfg, 3);
  CHECK(rep[0].repeats == 3);
  CHECK(rep[0].test_acc_std >= 0.0);
}
