#include "oxad/json_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

namespace oxad {

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (const auto it = j.find(key); it != j.end() && !it->is_null()) it->get_to(out);
}

std::string require_string(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw InputError(std::string("missing string field '") + key + "'");
  return it->get<std::string>();
}

}  // namespace

void to_json(json& j, const ForestConfig& c) {
  j = json{{"num_trees", c.num_trees},
           {"window", c.window},
           {"eta", c.eta},
           {"split_base", c.split_base},
           {"split_growth", c.split_growth},
           {"merge_hysteresis", c.merge_hysteresis},
           {"depth_cap", c.depth_cap},
           {"seed", c.seed}};
}

void from_json(const json& j, ForestConfig& c) {
  read_opt(j, "num_trees", c.num_trees);
  read_opt(j, "window", c.window);
  read_opt(j, "eta", c.eta);
  read_opt(j, "split_base", c.split_base);
  read_opt(j, "split_growth", c.split_growth);
  read_opt(j, "merge_hysteresis", c.merge_hysteresis);
  read_opt(j, "depth_cap", c.depth_cap);
  read_opt(j, "seed", c.seed);
}

void to_json(json& j, const ExplainConfig& c) {
  j = json{{"grid_size", c.grid_size},
           {"alpha", c.alpha},
           {"beta", c.beta},
           {"recent", c.recent},
           {"regrid_tolerance", c.regrid_tolerance},
           {"response", to_string(c.response)}};
}

void from_json(const json& j, ExplainConfig& c) {
  read_opt(j, "grid_size", c.grid_size);
  read_opt(j, "alpha", c.alpha);
  read_opt(j, "beta", c.beta);
  read_opt(j, "recent", c.recent);
  read_opt(j, "regrid_tolerance", c.regrid_tolerance);
  if (j.contains("response")) c.response = response_from_string(j.at("response").get<std::string>());
}

void to_json(json& j, const EngineConfig& c) {
  j = json{{"forest", c.forest},
           {"explain", c.explain},
           {"threshold", c.threshold},
           {"warmup", c.warmup},
           {"event_gap", c.event_gap},
           {"feature_names", c.feature_names},
           {"record_history", c.record_history},
           {"score_history", c.score_history}};
}

void from_json(const json& j, EngineConfig& c) {
  read_opt(j, "forest", c.forest);
  read_opt(j, "explain", c.explain);
  read_opt(j, "threshold", c.threshold);
  read_opt(j, "warmup", c.warmup);
  read_opt(j, "event_gap", c.event_gap);
  read_opt(j, "feature_names", c.feature_names);
  read_opt(j, "record_history", c.record_history);
  read_opt(j, "score_history", c.score_history);
}

void to_json(json& j, const ScoredRecord& r) {
  j = json{{"instance_id", r.instance_id},     {"timestamp", r.timestamp}, {"score", r.score},
           {"mean_depth", r.mean_depth},       {"fi", r.fi},               {"flagged", r.flagged},
           {"threshold_used", r.threshold_used}, {"warmup", r.warmup}};
}

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
  // Integral values keep a fraction so they read back as floats.
  if (std::find_if(buf, res.ptr, [](char c) { return c == '.' || c == 'e'; }) == res.ptr) out += ".0";
}

template <class Int>
void append_int(std::string& out, Int v) {
  char buf[24];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

std::string record_line(const ScoredRecord& r) {
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(r.score) || !finite(r.mean_depth) || !finite(r.threshold_used) ||
      !std::all_of(r.fi.begin(), r.fi.end(), finite)) {
    return json(r).dump();
  }
  std::string out;
  out.reserve(64 + 24 * r.fi.size());
  out += "{\"fi\":[";
  for (std::size_t j = 0; j < r.fi.size(); ++j) {
    if (j) out += ',';
    append_double(out, r.fi[j]);
  }
  out += "],\"flagged\":";
  out += r.flagged ? "true" : "false";
  out += ",\"instance_id\":";
  append_int(out, r.instance_id);
  out += ",\"mean_depth\":";
  append_double(out, r.mean_depth);
  out += ",\"score\":";
  append_double(out, r.score);
  out += ",\"threshold_used\":";
  append_double(out, r.threshold_used);
  out += ",\"timestamp\":";
  append_int(out, r.timestamp);
  out += ",\"warmup\":";
  out += r.warmup ? "true" : "false";
  out += '}';
  return out;
}

void from_json(const json& j, ScoredRecord& r) {
  j.at("instance_id").get_to(r.instance_id);
  j.at("timestamp").get_to(r.timestamp);
  j.at("score").get_to(r.score);
  j.at("mean_depth").get_to(r.mean_depth);
  j.at("fi").get_to(r.fi);
  j.at("flagged").get_to(r.flagged);
  j.at("threshold_used").get_to(r.threshold_used);
  j.at("warmup").get_to(r.warmup);
}

void to_json(json& j, const EventLabel& l) {
  j = json{{"event_id", l.event_id}, {"from", l.from}, {"to", l.to},
           {"verdict", to_string(l.verdict)}, {"note", l.note}, {"created_at", l.created_at}};
}

void from_json(const json& j, EventLabel& l) {
  read_opt(j, "event_id", l.event_id);
  j.at("from").get_to(l.from);
  j.at("to").get_to(l.to);
  l.verdict = verdict_from_string(require_string(j, "verdict"));
  read_opt(j, "note", l.note);
  read_opt(j, "created_at", l.created_at);
}

void to_json(json& j, const Event& e) {
  j = json{{"event_id", e.event_id},     {"from", e.from},
           {"to", e.to},                 {"peak_id", e.peak_id},
           {"peak_score", e.peak_score}, {"flagged_count", e.flagged_count},
           {"top_features", e.top_features}};
}

void from_json(const json& j, Event& e) {
  j.at("event_id").get_to(e.event_id);
  j.at("from").get_to(e.from);
  j.at("to").get_to(e.to);
  j.at("peak_id").get_to(e.peak_id);
  j.at("peak_score").get_to(e.peak_score);
  j.at("flagged_count").get_to(e.flagged_count);
  j.at("top_features").get_to(e.top_features);
}

void to_json(json& j, const RunMark& m) {
  j = json{{"instance_id", m.instance_id}, {"timestamp", m.timestamp}, {"note", m.note}};
}

void from_json(const json& j, RunMark& m) {
  j.at("instance_id").get_to(m.instance_id);
  j.at("timestamp").get_to(m.timestamp);
  read_opt(j, "note", m.note);
}

void to_json(json& j, const IceSnapshot& s) {
  j = json{{"age", s.age}, {"weight", s.weight}, {"values", s.values}};
}

void from_json(const json& j, IceSnapshot& s) {
  j.at("age").get_to(s.age);
  j.at("weight").get_to(s.weight);
  j.at("values").get_to(s.values);
}

void to_json(json& j, const PdpSnapshot& s) {
  j = json{{"feature", s.feature}, {"grid", s.grid}, {"pdp", s.pdp}, {"fi", s.fi}, {"ice", s.ice}};
}

void from_json(const json& j, PdpSnapshot& s) {
  j.at("feature").get_to(s.feature);
  j.at("grid").get_to(s.grid);
  j.at("pdp").get_to(s.pdp);
  j.at("fi").get_to(s.fi);
  j.at("ice").get_to(s.ice);
}

void to_json(json& j, const EngineSnapshot& s) {
  j = json{{"config", s.config}, {"threshold", s.threshold}, {"enabled", s.enabled},
           {"processed", s.processed}, {"records", s.records}, {"pdp", s.pdp},
           {"events", s.events}, {"labels", s.labels}, {"marks", s.marks}};
}

void from_json(const json& j, EngineSnapshot& s) {
  j.at("config").get_to(s.config);
  j.at("threshold").get_to(s.threshold);
  s.enabled = j.at("enabled").get<std::vector<bool>>();
  j.at("processed").get_to(s.processed);
  j.at("records").get_to(s.records);
  j.at("pdp").get_to(s.pdp);
  j.at("events").get_to(s.events);
  j.at("labels").get_to(s.labels);
  j.at("marks").get_to(s.marks);
}

void to_json(json& j, const Regime& r) {
  j = json{{"start", r.start}, {"mean", r.mean}, {"scale", r.scale}};
}

void from_json(const json& j, Regime& r) {
  j.at("start").get_to(r.start);
  j.at("mean").get_to(r.mean);
  j.at("scale").get_to(r.scale);
}

void to_json(json& j, const AnomalySpec& a) {
  j = json{{"start", a.start},
           {"duration", a.duration},
           {"features", a.features},
           {"magnitude", a.magnitude},
           {"kind", a.kind == AnomalyKind::spike ? "spike" : "ramp"}};
}

void from_json(const json& j, AnomalySpec& a) {
  j.at("start").get_to(a.start);
  j.at("duration").get_to(a.duration);
  j.at("features").get_to(a.features);
  j.at("magnitude").get_to(a.magnitude);
  const std::string kind = j.value("kind", "spike");
  if (kind == "spike") {
    a.kind = AnomalyKind::spike;
  } else if (kind == "ramp") {
    a.kind = AnomalyKind::ramp;
  } else {
    throw ConfigError("unknown anomaly kind '" + kind + "'");
  }
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"feature_names", s.feature_names}, {"length", s.length},
           {"regimes", s.regimes},             {"anomalies", s.anomalies},
           {"ar", s.ar},                       {"seed", s.seed},
           {"start_timestamp", s.start_timestamp}, {"period_ms", s.period_ms}};
}

void from_json(const json& j, SyntheticSpec& s) {
  // A preset expands to the benchmark stream; explicit fields override it.
  if (j.value("preset", "") == "benchmark") {
    s = benchmark_spec(j.value("seed", std::uint64_t{0}), j.value("length", std::size_t{20'000}),
                       j.value("feature_names", jacquard_schema()), j.value("regimes_count", std::size_t{3}),
                       j.value("anomaly_fraction", 0.01), j.value("magnitude", 6.0),
                       j.value("anomaly_duration", std::size_t{20}));
    if (j.contains("regimes") && j.at("regimes").is_array()) j.at("regimes").get_to(s.regimes);
    if (j.contains("anomalies")) j.at("anomalies").get_to(s.anomalies);
    read_opt(j, "ar", s.ar);
    read_opt(j, "start_timestamp", s.start_timestamp);
    read_opt(j, "period_ms", s.period_ms);
    return;
  }
  s.feature_names = j.value("feature_names", jacquard_schema());
  j.at("length").get_to(s.length);
  j.at("regimes").get_to(s.regimes);
  read_opt(j, "anomalies", s.anomalies);
  read_opt(j, "ar", s.ar);
  read_opt(j, "seed", s.seed);
  read_opt(j, "start_timestamp", s.start_timestamp);
  read_opt(j, "period_ms", s.period_ms);
}

void to_json(json& j, const SourceSpec& s) {
  const char* kind = s.kind == SourceKind::csv ? "csv" : s.kind == SourceKind::jsonl ? "jsonl" : "synthetic";
  j = json{{"kind", kind},
           {"path", s.path},
           {"timestamp_column", s.timestamp_column},
           {"feature_columns", s.feature_columns},
           {"rate", s.rate},
           {"impute_last", s.impute_last}};
  if (s.synthetic) j["synthetic"] = *s.synthetic;
}

void from_json(const json& j, SourceSpec& s) {
  const std::string kind = require_string(j, "kind");
  if (kind == "csv") {
    s.kind = SourceKind::csv;
  } else if (kind == "jsonl") {
    s.kind = SourceKind::jsonl;
  } else if (kind == "synthetic") {
    s.kind = SourceKind::synthetic;
  } else {
    throw InputError("unknown source kind '" + kind + "'");
  }
  read_opt(j, "path", s.path);
  read_opt(j, "timestamp_column", s.timestamp_column);
  read_opt(j, "feature_columns", s.feature_columns);
  read_opt(j, "rate", s.rate);
  read_opt(j, "impute_last", s.impute_last);
  if (j.contains("synthetic")) s.synthetic = j.at("synthetic").get<SyntheticSpec>();
  if (s.rate < 0.0) throw InputError("rate must be >= 0");
}

// ---------------------------------------------------------------------------
// Forest snapshots

namespace {

json node_to_json(const Tree& tree, std::uint32_t index) {
  const Node& n = tree.node(index);
  json j{{"depth", n.depth}, {"count", n.count}};
  if (n.is_leaf()) {
    j["members"] = n.members;
  } else {
    j["split"] = {{"feature", n.feature}, {"value", n.split_value}};
    j["left"] = node_to_json(tree, n.left);
    j["right"] = node_to_json(tree, n.right);
  }
  return j;
}

std::uint32_t node_from_json(const json& j, std::vector<Node>& arena) {
  const auto index = static_cast<std::uint32_t>(arena.size());
  arena.emplace_back();
  Node n;
  j.at("depth").get_to(n.depth);
  j.at("count").get_to(n.count);
  if (j.contains("split")) {
    j.at("split").at("feature").get_to(n.feature);
    j.at("split").at("value").get_to(n.split_value);
    if (n.feature < 0) throw InputError("split feature must be non-negative");
    n.left = node_from_json(j.at("left"), arena);
    n.right = node_from_json(j.at("right"), arena);
  } else {
    j.at("members").get_to(n.members);
  }
  arena[index] = std::move(n);
  return index;
}

}  // namespace

json forest_to_json(const Forest& forest) {
  std::vector<PointId> ids;
  ids.reserve(forest.points().size());
  for (const auto& [id, x] : forest.points()) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  json points = json::array();
  for (const auto id : ids) points.push_back({{"id", id}, {"x", forest.points().at(id)}});

  json trees = json::array();
  for (std::size_t t = 0; t < forest.num_trees(); ++t) {
    trees.push_back(node_to_json(forest.tree(t), forest.tree(t).root()));
  }
  return json{{"format", "oxad.forest/1"},
              {"config", forest.config()},
              {"dimension", forest.dim()},
              {"feature_mask", forest.feature_mask()},
              {"points", std::move(points)},
              {"trees", std::move(trees)}};
}

Forest forest_from_json(const json& j) {
  if (j.value("format", "") != "oxad.forest/1") throw InputError("not an oxad.forest/1 snapshot");
  ForestConfig config;
  j.at("config").get_to(config);
  const auto dim = j.at("dimension").get<std::size_t>();
  std::vector<bool> mask;
  if (j.contains("feature_mask")) mask = j.at("feature_mask").get<std::vector<bool>>();
  PointTable points;
  for (const auto& p : j.value("points", json::array())) {
    points.emplace(p.at("id").get<PointId>(), p.at("x").get<FeatureVector>());
  }
  std::vector<std::vector<Node>> trees;
  for (const auto& root : j.at("trees")) {
    std::vector<Node> arena;
    node_from_json(root, arena);
    trees.push_back(std::move(arena));
  }
  return Forest::assemble(config, dim, std::move(mask), std::move(points), std::move(trees));
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw InputError("'" + path.string() + "' is not valid JSON");
  return j;
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

EngineConfig engine_config_from_file(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  EngineConfig config = default_engine_config();
  if (j.contains("engine")) {
    j.at("engine").get_to(config);
  } else {
    j.get_to(config);
  }
  config.validate();
  return config;
}

}  // namespace oxad
