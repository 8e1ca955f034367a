#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oxad/common.hpp"

namespace oxad {

// The nine engineered indices monitored on the loom, in display order.
const std::vector<std::string>& jacquard_schema();

// A malformed input row or file. `row` is the 1-based line number (0 when
// the problem is not tied to a row); `column` names the offending column.
class IngestError : public InputError {
 public:
  IngestError(const std::string& message, std::size_t row = 0, std::string column = {});
  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

struct Regime {
  std::size_t start = 0;
  std::vector<double> mean;
  std::vector<double> scale;
};

enum class AnomalyKind { spike, ramp };

struct AnomalySpec {
  std::size_t start = 0;
  std::size_t duration = 1;
  std::vector<std::size_t> features;
  // In units of the active regime's per-feature scale.
  double magnitude = 0.0;
  AnomalyKind kind = AnomalyKind::spike;
};

struct SyntheticSpec {
  std::vector<std::string> feature_names;
  std::size_t length = 0;
  std::vector<Regime> regimes;
  std::vector<AnomalySpec> anomalies;
  // AR(1) coefficient of the per-feature noise, |ar| < 1.
  double ar = 0.5;
  std::uint64_t seed = 0;
  std::int64_t start_timestamp = 1'700'000'000'000;
  std::int64_t period_ms = 1000;

  std::size_t dim() const { return feature_names.size(); }
  void validate() const;
};

struct TruthRow {
  PointId id = 0;
  bool anomaly = false;

  bool operator==(const TruthRow&) const = default;
};

using GroundTruth = std::vector<TruthRow>;

struct SyntheticData {
  std::vector<std::string> feature_names;
  std::vector<Instance> instances;
  GroundTruth truth;
  // Instance ids at which a regime begins (production-run analogues).
  std::vector<PointId> regime_starts;
};

SyntheticData gen_synthetic(const SyntheticSpec& spec);

// Benchmark stream: `regimes` production runs with mean shifts, and spike
// anomalies of `magnitude` scale units covering `anomaly_fraction` of the
// instances, each spike touching three features.
SyntheticSpec benchmark_spec(std::uint64_t seed, std::size_t length = 20'000,
                             std::vector<std::string> feature_names = jacquard_schema(),
                             std::size_t regimes = 3, double anomaly_fraction = 0.01,
                             double magnitude = 6.0, std::size_t anomaly_duration = 20);

enum class SourceKind { csv, jsonl, synthetic };

struct SourceSpec {
  SourceKind kind = SourceKind::csv;
  std::string path;
  std::optional<SyntheticSpec> synthetic;
  // Empty: timestamps are synthesized as id * 1000.
  std::string timestamp_column = "timestamp";
  std::vector<std::string> feature_columns;
  // Instances per second; 0 means unthrottled.
  double rate = 0.0;
  // Replace NaN or empty cells with the previous valid value of the column.
  bool impute_last = false;
};

class InstanceSource {
 public:
  virtual ~InstanceSource() = default;
  virtual std::optional<Instance> next() = 0;
};

class VectorSource : public InstanceSource {
 public:
  explicit VectorSource(std::vector<Instance> instances) : items_(std::move(instances)) {}
  std::optional<Instance> next() override {
    if (pos_ >= items_.size()) return std::nullopt;
    return items_[pos_++];
  }

 private:
  std::vector<Instance> items_;
  std::size_t pos_ = 0;
};

// Opens a CSV / JSONL replay or a synthetic stream. File headers are
// checked against the column mapping here; row errors surface from next().
std::unique_ptr<InstanceSource> open_source(const SourceSpec& spec);

// Reads every instance of a CSV or JSONL file.
std::vector<Instance> read_all(const SourceSpec& spec);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& feature_names,
               const std::vector<Instance>& instances);
void write_jsonl(const std::filesystem::path& path, const std::vector<std::string>& feature_names,
                 const std::vector<Instance>& instances);
void write_truth(const std::filesystem::path& path, const GroundTruth& truth);
GroundTruth read_truth(const std::filesystem::path& path);

// Picks csv or jsonl from the file extension.
SourceKind kind_for_path(const std::filesystem::path& path);

}  // namespace oxad
