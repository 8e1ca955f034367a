#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "oxad/ingest.hpp"
#include "oxad/json_io.hpp"
#include "support.hpp"

using namespace oxad;

namespace {

std::filesystem::path write_file(const std::filesystem::path& dir, const std::string& name, const std::string& body) {
  const auto p = dir / name;
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

SourceSpec csv_spec(const std::filesystem::path& path, std::vector<std::string> cols) {
  SourceSpec s;
  s.kind = SourceKind::csv;
  s.path = path.string();
  s.feature_columns = std::move(cols);
  return s;
}

SyntheticSpec tiny_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.feature_names = {"a", "b", "c"};
  s.length = 300;
  s.seed = seed;
  s.regimes = {{0, {0.0, 1.0, 2.0}, {1.0, 0.5, 0.1}}, {150, {3.0, 1.0, 2.0}, {1.0, 0.5, 0.1}}};
  s.anomalies = {{40, 10, {0, 2}, 6.0, AnomalyKind::spike}, {200, 20, {1}, 4.0, AnomalyKind::ramp}};
  return s;
}

}  // namespace

TEST(SchemaTest, NineLoomFeatures) {
  const auto& s = jacquard_schema();
  ASSERT_EQ(s.size(), 9u);
  EXPECT_EQ(s.front(), "Phase Current Balance");
  EXPECT_EQ(s.back(), "Phase Apparent Power");
  const std::vector<std::string> expected{"Phase Current Balance", "Phase Voltage Stability", "Phase Power Balance",
                                          "Thermal Stress",        "Current THD Spread",      "Voltage Quality",
                                          "Phase Reactive Flow",   "Phase Efficiency Ratio",  "Phase Apparent Power"};
  EXPECT_EQ(s, expected);
}

TEST(CsvTest, WellFormedRows) {
  const auto dir = oracle::scratch_dir("csv_ok");
  const auto p = write_file(dir, "in.csv", "timestamp,b,a\n10,1.5,2\n20,-3e-2,4\n30,0,\"6.25\"\n");
  const auto rows = read_all(csv_spec(p, {"a", "b"}));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].id, 1u);
  EXPECT_EQ(rows[2].id, 3u);
  EXPECT_EQ(rows[1].timestamp, 20);
  EXPECT_EQ(rows[0].x, (FeatureVector{2.0, 1.5}));
  EXPECT_EQ(rows[1].x, (FeatureVector{4.0, -0.03}));
  EXPECT_EQ(rows[2].x, (FeatureVector{6.25, 0.0}));
}

TEST(CsvTest, NonNumericCellNamesRowAndColumn) {
  const auto dir = oracle::scratch_dir("csv_bad");
  const auto p = write_file(dir, "in.csv", "timestamp,a,b\n1,1,2\n2,abc,3\n");
  auto src = open_source(csv_spec(p, {"a", "b"}));
  ASSERT_TRUE(src->next().has_value());
  try {
    src->next();
    FAIL() << "expected an IngestError";
  } catch (const IngestError& e) {
    EXPECT_EQ(e.row(), 3u);
    EXPECT_EQ(e.column(), "a");
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'a'"), std::string::npos) << msg;
  }
}

TEST(CsvTest, MissingColumnRejectedAtOpen) {
  const auto dir = oracle::scratch_dir("csv_missing");
  const auto p = write_file(dir, "in.csv", "timestamp,a\n1,1\n");
  try {
    open_source(csv_spec(p, {"a", "Thermal Stress"}));
    FAIL() << "expected an IngestError";
  } catch (const IngestError& e) {
    EXPECT_EQ(e.column(), "Thermal Stress");
  }
  EXPECT_THROW(open_source(csv_spec(dir / "absent.csv", {"a"})), IngestError);
}

TEST(CsvTest, NanRejectedOrImputed) {
  const auto dir = oracle::scratch_dir("csv_nan");
  const auto p = write_file(dir, "in.csv", "timestamp,a,b\n1,1.5,2\n2,NaN,3\n3,,4\n");
  EXPECT_THROW(read_all(csv_spec(p, {"a", "b"})), IngestError);
  SourceSpec s = csv_spec(p, {"a", "b"});
  s.impute_last = true;
  const auto rows = read_all(s);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].x[0], 1.5);
  EXPECT_EQ(rows[2].x[0], 1.5);
  EXPECT_EQ(rows[2].x[1], 4.0);

  // Nothing to carry forward on the first row.
  const auto q = write_file(dir, "first.csv", "timestamp,a\n1,nan\n");
  SourceSpec t = csv_spec(q, {"a"});
  t.impute_last = true;
  EXPECT_THROW(read_all(t), IngestError);
}

TEST(CsvTest, RaggedRowAndBadTimestamp) {
  const auto dir = oracle::scratch_dir("csv_ragged");
  EXPECT_THROW(read_all(csv_spec(write_file(dir, "a.csv", "timestamp,a\n1,2,3\n"), {"a"})), IngestError);
  EXPECT_THROW(read_all(csv_spec(write_file(dir, "b.csv", "timestamp,a\n1.5x,2\n"), {"a"})), IngestError);
}

TEST(JsonlTest, ReadsObjects) {
  const auto dir = oracle::scratch_dir("jsonl");
  const auto p = write_file(dir, "in.jsonl",
                            "{\"timestamp\": 5, \"a\": 1.0, \"b\": 2}\n\n{\"timestamp\": 6, \"a\": -1, \"b\": 0.5}\n");
  SourceSpec s = csv_spec(p, {"b", "a"});
  s.kind = SourceKind::jsonl;
  const auto rows = read_all(s);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].id, 2u);
  EXPECT_EQ(rows[1].x, (FeatureVector{0.5, -1.0}));

  const auto bad = write_file(dir, "bad.jsonl", "{\"timestamp\": 5, \"a\": 1.0, \"b\": 2}\n{\"timestamp\": 6, \"a\": \"x\", \"b\": 2}\n");
  s.path = bad.string();
  try {
    read_all(s);
    FAIL() << "expected an IngestError";
  } catch (const IngestError& e) {
    EXPECT_EQ(e.row(), 2u);
    EXPECT_EQ(e.column(), "a");
  }
}

TEST(SyntheticTest, DeterministicPerSeed) {
  const auto a = gen_synthetic(tiny_spec(4));
  const auto b = gen_synthetic(tiny_spec(4));
  const auto c = gen_synthetic(tiny_spec(5));
  EXPECT_EQ(a.instances, b.instances);
  EXPECT_EQ(a.truth, b.truth);
  EXPECT_NE(a.instances, c.instances);
  const auto dir = oracle::scratch_dir("synth_det");
  write_csv(dir / "a.csv", a.feature_names, a.instances);
  write_csv(dir / "b.csv", b.feature_names, b.instances);
  EXPECT_EQ(oracle::slurp(dir / "a.csv"), oracle::slurp(dir / "b.csv"));
}

TEST(SyntheticTest, ZeroAnomaliesAllNormal) {
  SyntheticSpec s = tiny_spec(1);
  s.anomalies.clear();
  const auto d = gen_synthetic(s);
  ASSERT_EQ(d.truth.size(), 300u);
  for (const auto& t : d.truth) EXPECT_FALSE(t.anomaly);
}

TEST(SyntheticTest, MagnitudeZeroMatchesCleanStream) {
  SyntheticSpec with = tiny_spec(2);
  for (auto& a : with.anomalies) a.magnitude = 0.0;
  SyntheticSpec clean = tiny_spec(2);
  clean.anomalies.clear();
  EXPECT_EQ(gen_synthetic(with).instances, gen_synthetic(clean).instances);
}

TEST(SyntheticTest, AnomalyAddsScaledOffset) {
  SyntheticSpec clean = tiny_spec(3);
  clean.anomalies.clear();
  const auto base = gen_synthetic(clean);
  const auto hit = gen_synthetic(tiny_spec(3));
  for (std::size_t t = 40; t < 50; ++t) {
    EXPECT_NEAR(hit.instances[t].x[0] - base.instances[t].x[0], 6.0 * 1.0, 1e-12);
    EXPECT_NEAR(hit.instances[t].x[2] - base.instances[t].x[2], 6.0 * 0.1, 1e-12);
    EXPECT_EQ(hit.instances[t].x[1], base.instances[t].x[1]);
  }
  // Ramp grows towards the full magnitude.
  const double first = hit.instances[200].x[1] - base.instances[200].x[1];
  const double last = hit.instances[219].x[1] - base.instances[219].x[1];
  EXPECT_LT(first, last);
  EXPECT_NEAR(last, 4.0 * 0.5, 1e-12);
}

TEST(SyntheticTest, GroundTruthAlignment) {
  const SyntheticSpec spec = benchmark_spec(9);
  const auto d = gen_synthetic(spec);
  ASSERT_EQ(d.truth.size(), d.instances.size());
  std::set<PointId> declared;
  for (const auto& a : spec.anomalies) {
    for (std::size_t t = a.start; t < a.start + a.duration; ++t) declared.insert(d.instances[t].id);
  }
  std::size_t positives = 0;
  for (std::size_t k = 0; k < d.truth.size(); ++k) {
    EXPECT_EQ(d.truth[k].id, d.instances[k].id);
    EXPECT_EQ(d.truth[k].anomaly, declared.contains(d.truth[k].id));
    positives += d.truth[k].anomaly;
  }
  EXPECT_EQ(positives, 200u);  // 1% of 20,000
  EXPECT_EQ(d.regime_starts.size(), 3u);
  EXPECT_EQ(spec.dim(), 9u);
}

TEST(SyntheticTest, InvalidSpecRejected) {
  SyntheticSpec s = tiny_spec(1);
  s.regimes[1].start = 0;
  EXPECT_THROW(gen_synthetic(s), ConfigError);
  s = tiny_spec(1);
  s.anomalies[0].start = 295;
  EXPECT_THROW(gen_synthetic(s), ConfigError);
  s = tiny_spec(1);
  s.regimes[0].mean.pop_back();
  EXPECT_THROW(gen_synthetic(s), ConfigError);
}

TEST(RoundTripTest, CsvAndJsonlReproduceStream) {
  const auto d = gen_synthetic(tiny_spec(6));
  const auto dir = oracle::scratch_dir("roundtrip");
  write_csv(dir / "d.csv", d.feature_names, d.instances);
  write_jsonl(dir / "d.jsonl", d.feature_names, d.instances);
  write_truth(dir / "truth.jsonl", d.truth);
  SourceSpec s = csv_spec(dir / "d.csv", d.feature_names);
  EXPECT_EQ(read_all(s), d.instances);
  s.kind = SourceKind::jsonl;
  s.path = (dir / "d.jsonl").string();
  EXPECT_EQ(read_all(s), d.instances);
  EXPECT_EQ(read_truth(dir / "truth.jsonl"), d.truth);
  EXPECT_EQ(kind_for_path("x.CSV"), SourceKind::csv);
  EXPECT_EQ(kind_for_path("x.jsonl"), SourceKind::jsonl);
}

TEST(RoundTripTest, FormatDoubleIsShortestExact) {
  for (const double v : {0.1, 1.0 / 3.0, -2.5e-300, 1e21, 123456789.125, 0.0}) {
    const std::string s = format_double(v);
    EXPECT_EQ(std::stod(s), v) << s;
  }
  EXPECT_EQ(format_double(0.1), "0.1");
}

TEST(RoundTripTest, SyntheticSpecJson) {
  const SyntheticSpec s = tiny_spec(7);
  const SyntheticSpec back = json(s).get<SyntheticSpec>();
  EXPECT_EQ(gen_synthetic(back).instances, gen_synthetic(s).instances);
  const SyntheticSpec preset = json{{"preset", "benchmark"}, {"seed", 3}}.get<SyntheticSpec>();
  EXPECT_EQ(gen_synthetic(preset).instances, gen_synthetic(benchmark_spec(3)).instances);
}

TEST(SourceTest, SyntheticSourceMatchesGenerator) {
  SourceSpec s;
  s.kind = SourceKind::synthetic;
  s.synthetic = tiny_spec(8);
  EXPECT_EQ(read_all(s), gen_synthetic(tiny_spec(8)).instances);
}
