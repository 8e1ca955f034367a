#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oxad/common.hpp"
#include "oxad/explain.hpp"
#include "oxad/forest.hpp"
#include "oxad/window.hpp"

namespace oxad {

struct EngineConfig {
  ForestConfig forest;
  ExplainConfig explain;
  double threshold = 0.68;
  // Flags are suppressed for the first `warmup` instances; -1 selects window / 4.
  long warmup = -1;
  // Flagged records at most this many ids apart belong to one event.
  long event_gap = 5;
  std::vector<std::string> feature_names;
  // Full records kept for snapshots.
  std::size_t record_history = 500;
  // (id, score) pairs kept for threshold suggestion.
  std::size_t score_history = 1'000'000;

  void validate() const;
  std::size_t dim() const { return feature_names.size(); }
  long resolved_warmup() const;

  bool operator==(const EngineConfig&) const = default;
};

// Default engine configuration over the nine loom features.
EngineConfig default_engine_config();

struct ScoredRecord {
  PointId instance_id = 0;
  std::int64_t timestamp = 0;
  double score = 1.0;
  double mean_depth = 0.0;
  std::vector<double> fi;
  bool flagged = false;
  double threshold_used = 0.0;
  bool warmup = false;

  bool operator==(const ScoredRecord&) const = default;
};

enum class Verdict { confirmed_fault, normal, unknown };

const char* to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

struct EventLabel {
  std::uint64_t event_id = 0;
  PointId from = 0;
  PointId to = 0;
  Verdict verdict = Verdict::unknown;
  std::string note;
  std::int64_t created_at = 0;

  bool operator==(const EventLabel&) const = default;
};

// A run of flagged records.
struct Event {
  std::uint64_t event_id = 0;
  PointId from = 0;
  PointId to = 0;
  PointId peak_id = 0;
  double peak_score = 0.0;
  std::size_t flagged_count = 0;
  std::vector<std::string> top_features;

  bool operator==(const Event&) const = default;
};

struct RunMark {
  PointId instance_id = 0;
  std::int64_t timestamp = 0;
  std::string note;

  bool operator==(const RunMark&) const = default;
};

struct ThresholdSuggestion {
  double threshold = 0.0;
  double f1 = 0.0;
};

// Sweeps midpoints between consecutive distinct scores of (score, is_fault)
// pairs and keeps the one with the best F1 of `score > threshold`; ties go
// to the larger threshold. Throws StateError unless both classes appear.
ThresholdSuggestion suggest_threshold(std::span<const std::pair<double, bool>> labeled);

struct EngineSnapshot {
  EngineConfig config;
  double threshold = 0.0;
  std::vector<bool> enabled;
  std::uint64_t processed = 0;
  std::vector<ScoredRecord> records;
  std::vector<PdpSnapshot> pdp;
  std::vector<Event> events;
  std::vector<EventLabel> labels;
  std::vector<RunMark> marks;

  bool operator==(const EngineSnapshot&) const = default;
};

// Receives engine output as it happens. Callbacks run on the engine thread.
class EngineSink {
 public:
  virtual ~EngineSink() = default;
  virtual void on_record(const ScoredRecord&) {}
  // Called when an event opens or grows.
  virtual void on_event(const Event&) {}
  virtual void on_mark(const RunMark&) {}
  virtual void on_label(const EventLabel&) {}
};

// The per-instance pipeline: score (before learning), explain, learn,
// expire. Also owns the operator-facing state: threshold, feature mask,
// events, labels and run marks. Not thread-safe; see EngineLoop.
class Engine {
 public:
  explicit Engine(EngineConfig config);

  ScoredRecord process(const Instance& instance);

  void set_threshold(double threshold);
  double threshold() const { return threshold_; }

  void set_feature_enabled(std::size_t feature, bool enabled);
  const std::vector<bool>& enabled() const { return enabled_; }
  // Index of a feature by name, if known.
  std::optional<std::size_t> feature_index(const std::string& name) const;

  const std::vector<Event>& events() const { return events_; }

  void label_event(const EventLabel& label);
  const std::vector<EventLabel>& labels() const { return labels_; }

  ThresholdSuggestion suggest_threshold() const;

  const RunMark& mark_run_boundary(const std::string& note);
  const std::vector<RunMark>& marks() const { return marks_; }

  EngineSnapshot snapshot() const;

  void set_sink(EngineSink* sink) { sink_ = sink; }

  const EngineConfig& config() const { return config_; }
  const Forest& forest() const { return forest_; }
  const WindowStore& window() const { return window_; }
  const std::vector<PdpState>& pdp_states() const { return pdp_; }
  std::uint64_t processed() const { return processed_; }
  std::optional<PointId> last_id() const { return last_id_; }
  const std::deque<ScoredRecord>& recent_records() const { return recent_; }

 private:
  void track_event(const ScoredRecord& record);

  EngineConfig config_;
  Forest forest_;
  WindowStore window_;
  std::vector<PdpState> pdp_;
  std::vector<bool> enabled_;
  double threshold_;
  long warmup_;

  std::uint64_t processed_ = 0;
  std::optional<PointId> first_id_;
  std::optional<PointId> last_id_;
  std::int64_t last_timestamp_ = 0;

  std::deque<ScoredRecord> recent_;
  std::deque<std::pair<PointId, double>> scores_;
  std::vector<Event> events_;
  std::vector<EventLabel> labels_;
  std::vector<RunMark> marks_;
  std::vector<std::pair<double, double>> ranges_;

  EngineSink* sink_ = nullptr;
};

}  // namespace oxad
