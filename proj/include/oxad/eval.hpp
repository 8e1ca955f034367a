#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "oxad/engine.hpp"
#include "oxad/ingest.hpp"

namespace oxad {

// Mann-Whitney ROC-AUC with tied scores counted as half. O(n log n).
// Throws when either class is empty.
double roc_auc(std::span<const double> scores, const std::vector<bool>& positive);

struct ThresholdMetrics {
  double threshold = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

ThresholdMetrics metrics_at(std::span<const double> scores, const std::vector<bool>& positive,
                            double threshold);

struct EventLatency {
  PointId from = 0;
  PointId to = 0;
  std::optional<PointId> first_flag;
  // Instances between the window start and its first flag.
  std::optional<std::size_t> latency;
};

struct EvalReport {
  std::size_t evaluated = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double auc = 0.0;
  // Precision/recall/F1 of the flags as logged.
  ThresholdMetrics flagged;
  // The same metrics recomputed at each distinct threshold_used in the log.
  std::vector<ThresholdMetrics> per_threshold;
  std::vector<EventLatency> events;
  std::size_t detected_events = 0;
  std::optional<double> mean_latency;
};

// Joins a session log with ground truth by id. Warmup records are skipped
// unless include_warmup is set.
EvalReport evaluate(const std::vector<ScoredRecord>& records, const GroundTruth& truth,
                    bool include_warmup = false);

std::vector<ScoredRecord> read_session_log(const std::filesystem::path& path);

}  // namespace oxad
