#include "oxad/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <set>

#include "oxad/rng.hpp"

namespace oxad {

using nlohmann::json;

const std::vector<std::string>& jacquard_schema() {
  static const std::vector<std::string> names{
      "Phase Current Balance", "Phase Voltage Stability", "Phase Power Balance",
      "Thermal Stress",        "Current THD Spread",      "Voltage Quality",
      "Phase Reactive Flow",   "Phase Efficiency Ratio",  "Phase Apparent Power",
  };
  return names;
}

IngestError::IngestError(const std::string& message, std::size_t row, std::string column)
    : InputError([&] {
        std::string m;
        if (row > 0) m += "row " + std::to_string(row) + ": ";
        if (!column.empty()) m += "column '" + column + "': ";
        return m + message;
      }()),
      row_(row),
      column_(std::move(column)) {}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string unquote(std::string_view s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

// Missing (empty / NaN) cells return nullopt; malformed ones throw.
std::optional<double> parse_cell(std::string_view cell, std::size_t row, const std::string& column) {
  cell = trim(cell);
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    throw IngestError("non-numeric value '" + std::string(cell) + "'", row, column);
  }
  if (std::isnan(v)) return std::nullopt;
  if (std::isinf(v)) throw IngestError("infinite value", row, column);
  return v;
}

// Column lookup shared by the CSV and JSONL readers.
struct ColumnBinder {
  const SourceSpec& spec;
  std::vector<double> last;
  std::vector<bool> have_last;
  PointId next_id = 1;

  explicit ColumnBinder(const SourceSpec& s)
      : spec(s), last(s.feature_columns.size()), have_last(s.feature_columns.size(), false) {
    if (spec.feature_columns.empty()) throw IngestError("column mapping lists no feature columns");
    std::set<std::string> seen;
    for (const auto& c : spec.feature_columns) {
      if (!seen.insert(c).second) throw IngestError("feature column mapped twice", 0, c);
    }
  }

  double resolve(std::size_t j, std::optional<double> v, std::size_t row) {
    if (!v) {
      if (!spec.impute_last) throw IngestError("missing or NaN value", row, spec.feature_columns[j]);
      if (!have_last[j]) {
        throw IngestError("missing value with nothing to impute from", row, spec.feature_columns[j]);
      }
      return last[j];
    }
    last[j] = *v;
    have_last[j] = true;
    return *v;
  }

  std::int64_t synth_timestamp(PointId id) const { return static_cast<std::int64_t>(id) * 1000; }
};

std::int64_t parse_timestamp(std::string_view cell, std::size_t row, const std::string& column) {
  cell = trim(cell);
  std::int64_t t = 0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), t);
  if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    throw IngestError("timestamp must be integer epoch milliseconds", row, column);
  }
  return t;
}

class CsvSource : public InstanceSource {
 public:
  explicit CsvSource(const SourceSpec& spec) : spec_(spec), in_(spec.path), binder_(spec_) {
    if (!in_) throw IngestError("cannot open '" + spec.path + "'");
    std::string header;
    if (!std::getline(in_, header)) throw IngestError("file is empty; a header row is required", 1);
    line_ = 1;
    std::vector<std::string> names;
    for (const auto cell : split_commas(header)) names.push_back(unquote(cell));
    width_ = names.size();
    auto find = [&](const std::string& c) -> std::size_t {
      const auto it = std::find(names.begin(), names.end(), c);
      if (it == names.end()) throw IngestError("column not found in header", 1, c);
      return static_cast<std::size_t>(it - names.begin());
    };
    if (!spec_.timestamp_column.empty()) ts_index_ = find(spec_.timestamp_column);
    for (const auto& c : spec_.feature_columns) feature_index_.push_back(find(c));
  }

  std::optional<Instance> next() override {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      if (trim(line).empty()) continue;
      const auto cells = split_commas(line);
      if (cells.size() != width_) {
        throw IngestError("expected " + std::to_string(width_) + " cells, found " +
                              std::to_string(cells.size()),
                          line_);
      }
      Instance inst;
      inst.id = binder_.next_id++;
      inst.timestamp = ts_index_ ? parse_timestamp(unquote(cells[*ts_index_]), line_, spec_.timestamp_column)
                                 : binder_.synth_timestamp(inst.id);
      inst.x.resize(feature_index_.size());
      for (std::size_t j = 0; j < feature_index_.size(); ++j) {
        inst.x[j] = binder_.resolve(
            j, parse_cell(unquote(cells[feature_index_[j]]), line_, spec_.feature_columns[j]), line_);
      }
      return inst;
    }
    return std::nullopt;
  }

 private:
  SourceSpec spec_;
  std::ifstream in_;
  ColumnBinder binder_;
  std::size_t line_ = 0;
  std::size_t width_ = 0;
  std::optional<std::size_t> ts_index_;
  std::vector<std::size_t> feature_index_;
};

class JsonlSource : public InstanceSource {
 public:
  explicit JsonlSource(const SourceSpec& spec) : spec_(spec), in_(spec.path), binder_(spec_) {
    if (!in_) throw IngestError("cannot open '" + spec.path + "'");
    // Validate the mapping against the first record without consuming it.
    const auto pos = in_.tellg();
    std::string line;
    std::size_t n = 0;
    while (std::getline(in_, line)) {
      ++n;
      if (trim(line).empty()) continue;
      json first = parse(line, n);
      if (!spec_.timestamp_column.empty() && !first.contains(spec_.timestamp_column)) {
        throw IngestError("column not found in first record", n, spec_.timestamp_column);
      }
      for (const auto& c : spec_.feature_columns) {
        if (!first.contains(c)) throw IngestError("column not found in first record", n, c);
      }
      break;
    }
    in_.clear();
    in_.seekg(pos);
  }

  std::optional<Instance> next() override {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      if (trim(line).empty()) continue;
      const json row = parse(line, line_);
      Instance inst;
      inst.id = binder_.next_id++;
      if (spec_.timestamp_column.empty()) {
        inst.timestamp = binder_.synth_timestamp(inst.id);
      } else {
        const auto it = row.find(spec_.timestamp_column);
        if (it == row.end()) throw IngestError("missing column", line_, spec_.timestamp_column);
        if (!it->is_number_integer()) {
          throw IngestError("timestamp must be integer epoch milliseconds", line_, spec_.timestamp_column);
        }
        inst.timestamp = it->get<std::int64_t>();
      }
      inst.x.resize(spec_.feature_columns.size());
      for (std::size_t j = 0; j < spec_.feature_columns.size(); ++j) {
        const auto& c = spec_.feature_columns[j];
        const auto it = row.find(c);
        if (it == row.end()) throw IngestError("missing column", line_, c);
        std::optional<double> v;
        if (it->is_number()) {
          v = it->get<double>();
        } else if (it->is_null()) {
          v = std::nullopt;
        } else if (it->is_string()) {
          v = parse_cell(it->get_ref<const std::string&>(), line_, c);
        } else {
          throw IngestError("non-numeric value", line_, c);
        }
        if (v && std::isinf(*v)) throw IngestError("infinite value", line_, c);
        if (v && std::isnan(*v)) v = std::nullopt;
        inst.x[j] = binder_.resolve(j, v, line_);
      }
      return inst;
    }
    return std::nullopt;
  }

 private:
  static json parse(const std::string& line, std::size_t row) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw IngestError("line is not a JSON object", row);
    return j;
  }

  SourceSpec spec_;
  std::ifstream in_;
  ColumnBinder binder_;
  std::size_t line_ = 0;
};

class SyntheticSource : public InstanceSource {
 public:
  explicit SyntheticSource(const SyntheticSpec& spec) : data_(gen_synthetic(spec)) {}
  std::optional<Instance> next() override {
    if (pos_ >= data_.instances.size()) return std::nullopt;
    return data_.instances[pos_++];
  }

 private:
  SyntheticData data_;
  std::size_t pos_ = 0;
};

}  // namespace

SourceKind kind_for_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".csv") return SourceKind::csv;
  if (ext == ".jsonl" || ext == ".ndjson" || ext == ".json") return SourceKind::jsonl;
  throw IngestError("cannot infer format from extension '" + ext + "' (use .csv or .jsonl)");
}

std::unique_ptr<InstanceSource> open_source(const SourceSpec& spec) {
  switch (spec.kind) {
    case SourceKind::csv:
      return std::make_unique<CsvSource>(spec);
    case SourceKind::jsonl:
      return std::make_unique<JsonlSource>(spec);
    case SourceKind::synthetic:
      if (!spec.synthetic) throw IngestError("synthetic source requires a synthetic spec");
      return std::make_unique<SyntheticSource>(*spec.synthetic);
  }
  throw IngestError("unknown source kind");
}

std::vector<Instance> read_all(const SourceSpec& spec) {
  auto source = open_source(spec);
  std::vector<Instance> out;
  while (auto inst = source->next()) out.push_back(std::move(*inst));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic streams

void SyntheticSpec::validate() const {
  const std::size_t d = dim();
  if (d == 0) throw ConfigError("synthetic spec needs at least one feature");
  if (length == 0) throw ConfigError("synthetic length must be positive");
  if (regimes.empty() || regimes.front().start != 0) throw ConfigError("first regime must start at 0");
  for (std::size_t r = 0; r < regimes.size(); ++r) {
    const auto& g = regimes[r];
    if (r > 0 && g.start <= regimes[r - 1].start) throw ConfigError("regime starts must be strictly increasing");
    if (g.start >= length) throw ConfigError("regime starts beyond the stream length");
    if (g.mean.size() != d || g.scale.size() != d) throw ConfigError("regime mean/scale must have d entries");
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(g.mean[j]) || !std::isfinite(g.scale[j]) || g.scale[j] < 0.0) {
        throw ConfigError("regime mean/scale must be finite with scale >= 0");
      }
    }
  }
  for (const auto& a : anomalies) {
    if (a.duration == 0) throw ConfigError("anomaly duration must be positive");
    if (a.start + a.duration > length) throw ConfigError("anomaly window exceeds the stream length");
    if (a.features.empty()) throw ConfigError("anomaly must affect at least one feature");
    for (const auto j : a.features) {
      if (j >= d) throw ConfigError("anomaly feature index out of range");
    }
    if (!std::isfinite(a.magnitude)) throw ConfigError("anomaly magnitude must be finite");
  }
  if (!(std::abs(ar) < 1.0)) throw ConfigError("ar coefficient must satisfy |ar| < 1");
  if (period_ms < 0) throw ConfigError("period_ms must be >= 0");
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d = spec.dim();
  SyntheticData out;
  out.feature_names = spec.feature_names;
  out.instances.reserve(spec.length);
  out.truth.reserve(spec.length);
  for (const auto& g : spec.regimes) out.regime_starts.push_back(g.start + 1);

  Rng rng(spec.seed);
  const double innovation = std::sqrt(1.0 - spec.ar * spec.ar);
  std::vector<double> noise(d);
  for (auto& e : noise) e = rng.normal();

  std::size_t regime = 0;
  for (std::size_t t = 0; t < spec.length; ++t) {
    while (regime + 1 < spec.regimes.size() && spec.regimes[regime + 1].start <= t) ++regime;
    const Regime& g = spec.regimes[regime];
    if (t > 0) {
      for (auto& e : noise) e = spec.ar * e + innovation * rng.normal();
    }
    Instance inst;
    inst.id = t + 1;
    inst.timestamp = spec.start_timestamp + static_cast<std::int64_t>(t) * spec.period_ms;
    inst.x.resize(d);
    for (std::size_t j = 0; j < d; ++j) inst.x[j] = g.mean[j] + g.scale[j] * noise[j];

    bool anomalous = false;
    for (const auto& a : spec.anomalies) {
      if (t < a.start || t >= a.start + a.duration) continue;
      anomalous = true;
      const double ramp = a.kind == AnomalyKind::ramp
                              ? static_cast<double>(t - a.start + 1) / static_cast<double>(a.duration)
                              : 1.0;
      for (const auto j : a.features) inst.x[j] += a.magnitude * ramp * g.scale[j];
    }
    out.truth.push_back({inst.id, anomalous});
    out.instances.push_back(std::move(inst));
  }
  return out;
}

SyntheticSpec benchmark_spec(std::uint64_t seed, std::size_t length,
                             std::vector<std::string> feature_names, std::size_t regimes,
                             double anomaly_fraction, double magnitude, std::size_t anomaly_duration) {
  SyntheticSpec spec;
  spec.feature_names = std::move(feature_names);
  spec.length = length;
  spec.seed = seed;
  spec.ar = 0.5;
  const std::size_t d = spec.dim();

  Rng rng = Rng::derived(seed, 0xbe9c);
  std::vector<double> base(d);
  std::vector<double> scale(d);
  for (std::size_t j = 0; j < d; ++j) {
    base[j] = 0.5 + rng.uniform();
    scale[j] = 0.02 + 0.03 * rng.uniform();
  }
  for (std::size_t r = 0; r < std::max<std::size_t>(regimes, 1); ++r) {
    Regime g;
    g.start = r * length / std::max<std::size_t>(regimes, 1);
    g.scale = scale;
    g.mean = base;
    if (r > 0) {
      // Material change between runs: every feature moves 1-3 scale units.
      for (std::size_t j = 0; j < d; ++j) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        g.mean[j] += sign * (1.0 + 2.0 * rng.uniform()) * scale[j];
      }
    }
    spec.regimes.push_back(std::move(g));
  }

  const auto total = static_cast<std::size_t>(std::llround(anomaly_fraction * static_cast<double>(length)));
  const std::size_t count = anomaly_duration > 0 ? total / anomaly_duration : 0;
  if (count > 0) {
    // Evenly sized slots after a lead-in, one spike at a random offset in each.
    const std::size_t lead = std::min(length / 10, std::size_t{2000});
    const std::size_t slot = (length - lead) / count;
    for (std::size_t k = 0; k < count; ++k) {
      AnomalySpec a;
      a.duration = anomaly_duration;
      a.magnitude = magnitude;
      const std::size_t room = slot > anomaly_duration ? slot - anomaly_duration : 1;
      a.start = lead + k * slot + static_cast<std::size_t>(rng.below(room));
      std::vector<std::size_t> pool(d);
      for (std::size_t j = 0; j < d; ++j) pool[j] = j;
      for (std::size_t m = 0; m < std::min<std::size_t>(3, d); ++m) {
        const auto pick = m + static_cast<std::size_t>(rng.below(d - m));
        std::swap(pool[m], pool[pick]);
        a.features.push_back(pool[m]);
      }
      std::sort(a.features.begin(), a.features.end());
      spec.anomalies.push_back(std::move(a));
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Writers

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& feature_names,
               const std::vector<Instance>& instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write '" + path.string() + "'");
  out << "timestamp";
  for (const auto& n : feature_names) out << ',' << n;
  out << '\n';
  for (const auto& inst : instances) {
    out << inst.timestamp;
    for (const double v : inst.x) out << ',' << format_double(v);
    out << '\n';
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<std::string>& feature_names,
                 const std::vector<Instance>& instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write '" + path.string() + "'");
  for (const auto& inst : instances) {
    json row = json::object();
    row["timestamp"] = inst.timestamp;
    for (std::size_t j = 0; j < feature_names.size(); ++j) row[feature_names[j]] = inst.x[j];
    out << row.dump() << '\n';
  }
}

void write_truth(const std::filesystem::path& path, const GroundTruth& truth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write '" + path.string() + "'");
  for (const auto& t : truth) {
    out << json{{"id", t.id}, {"label", t.anomaly ? "anomaly" : "normal"}}.dump() << '\n';
  }
}

GroundTruth read_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  GroundTruth truth;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const json row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.contains("id") || !row.contains("label")) {
      throw IngestError("expected {\"id\", \"label\"}", n);
    }
    const auto label = row.at("label").get<std::string>();
    if (label != "anomaly" && label != "normal") throw IngestError("label must be anomaly or normal", n, "label");
    truth.push_back({row.at("id").get<PointId>(), label == "anomaly"});
  }
  return truth;
}

}  // namespace oxad
