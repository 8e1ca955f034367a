#include "oxad/eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#include "oxad/json_io.hpp"

namespace oxad {

double roc_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw InputError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of (1-based, tie-averaged) ranks of the positives.
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t k = i;
    while (k < order.size() && scores[order[k]] == scores[order[i]]) ++k;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + k);
    for (std::size_t m = i; m < k; ++m) {
      if (positive[order[m]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = k;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw InputError("ROC-AUC needs both positive and negative instances");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

namespace {

ThresholdMetrics finish(double threshold, std::size_t tp, std::size_t fp, std::size_t fn) {
  ThresholdMetrics m{threshold, tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (2 * tp + fp + fn > 0) m.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  return m;
}

}  // namespace

ThresholdMetrics metrics_at(std::span<const double> scores, const std::vector<bool>& positive,
                            double threshold) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool alarm = scores[i] > threshold;
    tp += alarm && positive[i];
    fp += alarm && !positive[i];
    fn += !alarm && positive[i];
  }
  return finish(threshold, tp, fp, fn);
}

EvalReport evaluate(const std::vector<ScoredRecord>& records, const GroundTruth& truth,
                    bool include_warmup) {
  std::unordered_map<PointId, bool> label;
  for (const auto& t : truth) label[t.id] = t.anomaly;

  EvalReport report;
  std::vector<double> scores;
  std::vector<bool> flags;
  std::set<double> thresholds;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::unordered_map<PointId, bool> flagged_ids;
  for (const auto& r : records) {
    const auto it = label.find(r.instance_id);
    if (it == label.end()) {
      throw InputError("ground truth has no entry for instance " + std::to_string(r.instance_id));
    }
    if (r.flagged) flagged_ids[r.instance_id] = true;
    if (r.warmup && !include_warmup) continue;
    scores.push_back(r.score);
    flags.push_back(it->second);
    thresholds.insert(r.threshold_used);
    tp += r.flagged && it->second;
    fp += r.flagged && !it->second;
    fn += !r.flagged && it->second;
  }
  report.evaluated = scores.size();
  report.positives = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
  report.negatives = report.evaluated - report.positives;
  if (report.positives > 0 && report.negatives > 0) report.auc = roc_auc(scores, flags);
  report.flagged = finish(0.0, tp, fp, fn);
  for (const double t : thresholds) report.per_threshold.push_back(metrics_at(scores, flags, t));

  // Anomaly windows: maximal runs of consecutive anomalous ids in the truth.
  GroundTruth sorted = truth;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  double latency_sum = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    if (!sorted[i].anomaly) {
      ++i;
      continue;
    }
    std::size_t k = i;
    while (k + 1 < sorted.size() && sorted[k + 1].anomaly && sorted[k + 1].id == sorted[k].id + 1) ++k;
    EventLatency e{sorted[i].id, sorted[k].id, std::nullopt, std::nullopt};
    for (PointId id = e.from; id <= e.to; ++id) {
      if (flagged_ids.contains(id)) {
        e.first_flag = id;
        e.latency = static_cast<std::size_t>(id - e.from);
        break;
      }
    }
    if (e.latency) {
      ++report.detected_events;
      latency_sum += static_cast<double>(*e.latency);
    }
    report.events.push_back(e);
    i = k + 1;
  }
  if (report.detected_events > 0) {
    report.mean_latency = latency_sum / static_cast<double>(report.detected_events);
  }
  return report;
}

std::vector<ScoredRecord> read_session_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::vector<ScoredRecord> records;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IngestError("session log line is not JSON", n);
    try {
      records.push_back(j.get<ScoredRecord>());
    } catch (const json::exception& e) {
      throw IngestError(std::string("malformed record: ") + e.what(), n);
    }
  }
  return records;
}

}  // namespace oxad
