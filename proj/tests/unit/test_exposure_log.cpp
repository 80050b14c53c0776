#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "chorus/exposure_log.hpp"
#include "chorus/simulator.hpp"
#include "support.hpp"

using namespace chorus;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const std::filesystem::path p = testing::scratch_dir("log") / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("well-formed file reads cleanly") {
  const auto p = write_file("ok.csv", "sample_id,click,conversion,a,b\n1,1,1,3,0.5\n2,0,0,1,2\n3,1,0,0,-1\n");
  IngestReport rep;
  const ExposureLog log = read_log(p, rep);
  CHECK(log.size() == 3);
  CHECK(rep.accepted == 3);
  CHECK(rep.issues.empty());
  CHECK(rep.funnel_violations == 0);
  CHECK(log.feature_names == std::vector<std::string>{"a", "b"});
  CHECK(log.records[0].features == std::vector<double>{3, 0.5});
  CHECK_FALSE(log.has_truth());
}

TEST_CASE("conversion without click is dropped and counted") {
  const auto p = write_file("viol.csv", "sample_id,click,conversion,a\n1,0,1,3\n2,1,1,1\n");
  IngestReport rep;
  const ExposureLog log = read_log(p, rep);
  CHECK(log.size() == 1);
  CHECK(rep.funnel_violations == 1);
  CHECK(log.records[0].sample_id == 2);
}

TEST_CASE("malformed rows are skipped and reported") {
  const auto p = write_file("bad.csv", "sample_id,click,conversion,a\n1,1,0,x\n2,2,0,1\n3,1,0\n4,0,0,1\n");
  IngestReport rep;
  const ExposureLog log = read_log(p, rep);
  CHECK(log.size() == 1);
  CHECK(rep.malformed == 3);
  CHECK(rep.issues.size() == 3);
  CHECK(rep.issues[0].line == 2);
}

TEST_CASE("missing label or feature columns are fatal") {
  IngestReport rep;
  CHECK_THROWS_AS(read_log(write_file("nolabel.csv", "sample_id,click,a\n1,1,2\n"), rep), LogFormatError);
  CHECK_THROWS_AS(read_log(write_file("partial.csv", "click,conversion,true_p_click\n1,0,0.2\n"), rep),
                  LogFormatError);
  const FeatureSchema s = testing::tiny_schema();
  CHECK_THROWS_WITH_AS(read_log(write_file("nofeat.csv", "click,conversion,u0,i0,n0\n1,0,1,1,1\n"), &s, rep),
                       doctest::Contains("x0"), LogFormatError);
  CHECK_THROWS_AS(read_log("/nonexistent/file.csv", rep), LogFormatError);
}

TEST_CASE("simulator output round-trips field by field") {
  SimConfig c;
  c.n_exposures = 2000;
  c.calibration_draws = 20000;
  const SimResult sim = generate(c);
  const auto p = testing::scratch_dir("roundtrip") / "sim.csv";
  write_log(p, sim.log);
  IngestReport rep;
  const FeatureSchema s = sim_schema(c);
  const ExposureLog back = read_log(p, &s, rep);
  CHECK(back.feature_names == sim.log.feature_names);
  REQUIRE(back.size() == sim.log.size());
  CHECK(back.has_truth());
  bool equal = true;
  for (std::size_t i = 0; i < back.size(); ++i) equal = equal && back.records[i] == sim.log.records[i];
  CHECK(equal);
}

TEST_CASE("partition follows the funnel truth table") {
  ExposureLog log;
  for (auto [o, r] : {std::pair{1, 1}, std::pair{1, 0}, std::pair{0, 0}}) {
    ExposureRecord rec;
    rec.click = o;
    rec.conversion = r;
    log.records.push_back(rec);
  }
  const SpacePartition sp = partition(log);
  CHECK(sp.exposure == std::vector<std::size_t>{0, 1, 2});
  CHECK(sp.click == std::vector<std::size_t>{0, 1});
  CHECK(sp.unclick == std::vector<std::size_t>{2});
  CHECK(sp.conversion == std::vector<std::size_t>{0});
  CHECK(sp.unconversion == std::vector<std::size_t>{1});
  const SpacePartition sub = partition(log, {1, 2});
  CHECK(sub.exposure == std::vector<std::size_t>{1, 2});
  CHECK(sub.conversion.empty());
}

TEST_CASE("batch iterator sizes, determinism and coverage") {
  const BatchIterator it(10, 4);
  const auto e = it.epoch(3);
  REQUIRE(e.size() == 3);
  CHECK(e[0].size() == 4);
  CHECK(e[1].size() == 4);
  CHECK(e[2].size() == 2);
  CHECK(it.epoch(3) == e);
  CHECK(it.epoch(4) != e);

  const BatchIterator big(1003, 64);
  std::vector<std::size_t> all;
  for (const auto& b : big.epoch(9)) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  CHECK(all == testing::iota_rows(1003));
  CHECK_THROWS_AS(BatchIterator(0, 4), std::invalid_argument);
  CHECK_THROWS_AS(BatchIterator(4, 0), std::invalid_argument);
}

TEST_CASE("split is a seeded 80/10/10 partition") {
  const DataSplit s = split_indices(1000, 5);
  CHECK(s.train.size() == 800);
  CHECK(s.validation.size() == 100);
  CHECK(s.test.size() == 100);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.validation.begin(), s.validation.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  CHECK(all == testing::iota_rows(1000));
  CHECK(split_indices(1000, 5).test == s.test);
  CHECK(split_indices(1000, 6).test != s.test);
}
