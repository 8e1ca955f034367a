#include "oxad/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oxad/ingest.hpp"

namespace oxad {

void EngineConfig::validate() const {
  forest.validate();
  explain.validate();
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
  if (warmup < -1) throw ConfigError("warmup must be >= 0 (or -1 for window / 4)");
  if (event_gap < 1) throw ConfigError("event_gap must be >= 1");
  if (feature_names.empty()) throw ConfigError("at least one feature name is required");
  std::vector<std::string> sorted = feature_names;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("feature names must be unique");
  }
}

long EngineConfig::resolved_warmup() const {
  return warmup >= 0 ? warmup : static_cast<long>(forest.window / 4);
}

EngineConfig default_engine_config() {
  EngineConfig config;
  config.feature_names = jacquard_schema();
  return config;
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::confirmed_fault:
      return "confirmed_fault";
    case Verdict::normal:
      return "normal";
    case Verdict::unknown:
      return "unknown";
  }
  return "unknown";
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "confirmed_fault") return Verdict::confirmed_fault;
  if (s == "normal") return Verdict::normal;
  if (s == "unknown") return Verdict::unknown;
  throw InputError("invalid verdict '" + s + "' (expected confirmed_fault, normal or unknown)");
}

Engine::Engine(EngineConfig config)
    : config_((config.validate(), std::move(config))),
      forest_(config_.forest, config_.dim()),
      window_(config_.forest.window, config_.dim()),
      enabled_(config_.dim(), true),
      threshold_(config_.threshold),
      warmup_(config_.resolved_warmup()),
      ranges_(config_.dim()) {
  pdp_.reserve(config_.dim());
  for (std::size_t j = 0; j < config_.dim(); ++j) pdp_.emplace_back(static_cast<int>(j), config_.explain);
}

ScoredRecord Engine::process(const Instance& instance) {
  if (last_id_ && instance.id <= *last_id_) {
    throw InputError("instance id " + std::to_string(instance.id) + " is not greater than " +
                     std::to_string(*last_id_));
  }
  if (last_id_ && instance.timestamp < last_timestamp_) {
    throw InputError("timestamp decreased at instance " + std::to_string(instance.id));
  }
  check_vector(instance.x, config_.dim());

  // Prequential: the instance is scored and explained against the forest as
  // it was before the instance arrived.
  const AnomalyScore s = forest_.score(instance.x);

  for (std::size_t j = 0; j < ranges_.size(); ++j) {
    ranges_[j] = window_.empty() ? std::pair{instance.x[j], instance.x[j]} : window_.range(j);
  }
  FiVector fi = explain_instance(forest_, instance.x, pdp_, ranges_, enabled_,
                                 config_.explain.response, instance.id);

  forest_.learn(instance.id, instance.x);
  window_.push(instance);
  if (window_.over_capacity()) {
    const Instance oldest = window_.pop_oldest();
    forest_.forget(oldest.id, oldest.x);
  }

  ++processed_;
  if (!first_id_) first_id_ = instance.id;
  last_id_ = instance.id;
  last_timestamp_ = instance.timestamp;

  ScoredRecord record;
  record.instance_id = instance.id;
  record.timestamp = instance.timestamp;
  record.score = s.score;
  record.mean_depth = s.mean_depth;
  record.fi = std::move(fi.values);
  record.threshold_used = threshold_;
  record.warmup = static_cast<long>(processed_) <= warmup_;
  record.flagged = record.score > threshold_ && !record.warmup;

  recent_.push_back(record);
  if (recent_.size() > config_.record_history) recent_.pop_front();
  scores_.emplace_back(record.instance_id, record.score);
  if (scores_.size() > config_.score_history) scores_.pop_front();

  if (sink_) sink_->on_record(record);
  if (record.flagged) track_event(record);
  return record;
}

void Engine::track_event(const ScoredRecord& record) {
  const bool extends = !events_.empty() &&
                       record.instance_id - events_.back().to <= static_cast<PointId>(config_.event_gap);
  if (!extends) {
    Event e;
    e.event_id = events_.size() + 1;
    e.from = record.instance_id;
    e.peak_score = -1.0;
    events_.push_back(e);
  }
  Event& e = events_.back();
  e.to = record.instance_id;
  ++e.flagged_count;
  if (record.score > e.peak_score) {
    e.peak_score = record.score;
    e.peak_id = record.instance_id;
    std::vector<std::size_t> order(record.fi.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return record.fi[a] > record.fi[b]; });
    e.top_features.clear();
    for (std::size_t k = 0; k < std::min<std::size_t>(3, order.size()); ++k) {
      e.top_features.push_back(config_.feature_names[order[k]]);
    }
  }
  if (sink_) sink_->on_event(e);
}

void Engine::set_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InputError("threshold must be in (0, 1)");
  threshold_ = threshold;
}

void Engine::set_feature_enabled(std::size_t feature, bool enabled) {
  if (feature >= enabled_.size()) throw InputError("feature index out of range");
  std::vector<bool> next = enabled_;
  next[feature] = enabled;
  if (std::none_of(next.begin(), next.end(), [](bool b) { return b; })) {
    throw StateError("cannot disable the last enabled feature");
  }
  forest_.set_feature_mask(next);
  enabled_ = std::move(next);
}

std::optional<std::size_t> Engine::feature_index(const std::string& name) const {
  const auto& names = config_.feature_names;
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

void Engine::label_event(const EventLabel& label) {
  if (label.from > label.to) throw InputError("label range is empty (from > to)");
  if (!first_id_ || label.from < *first_id_ || label.to > *last_id_) {
    throw InputError("label range lies outside the processed session");
  }
  // A new verdict replaces any label it overlaps.
  std::erase_if(labels_, [&](const EventLabel& l) { return l.from <= label.to && label.from <= l.to; });
  labels_.push_back(label);
  if (sink_) sink_->on_label(label);
}

ThresholdSuggestion suggest_threshold(std::span<const std::pair<double, bool>> labeled) {
  const auto faults = std::count_if(labeled.begin(), labeled.end(), [](const auto& p) { return p.second; });
  if (faults == 0 || faults == static_cast<long>(labeled.size())) {
    throw StateError("threshold suggestion needs at least one confirmed_fault and one normal record");
  }

  std::vector<double> distinct;
  for (const auto& p : labeled) distinct.push_back(p.first);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw StateError("labeled records share a single score; no threshold separates them");

  // F1 = 2TP / (2TP + FP + FN), compared as exact fractions.
  long best_num = -1;
  long best_den = 1;
  double best = 0.0;
  for (std::size_t k = 0; k + 1 < distinct.size(); ++k) {
    const double theta = 0.5 * (distinct[k] + distinct[k + 1]);
    long tp = 0, fp = 0, fn = 0;
    for (const auto& [score, fault] : labeled) {
      const bool alarm = score > theta;
      tp += alarm && fault;
      fp += alarm && !fault;
      fn += !alarm && fault;
    }
    const long num = 2 * tp;
    const long den = 2 * tp + fp + fn;
    // Ascending sweep: >= keeps the largest threshold among ties.
    if (best_num < 0 || num * best_den >= best_num * den) {
      best_num = num;
      best_den = den;
      best = theta;
    }
  }
  return {best, static_cast<double>(best_num) / static_cast<double>(best_den)};
}

ThresholdSuggestion Engine::suggest_threshold() const {
  std::vector<std::pair<double, bool>> labeled;  // (score, is_fault)
  for (const auto& l : labels_) {
    if (l.verdict == Verdict::unknown) continue;
    auto it = std::lower_bound(scores_.begin(), scores_.end(), l.from,
                               [](const auto& p, PointId id) { return p.first < id; });
    for (; it != scores_.end() && it->first <= l.to; ++it) {
      labeled.emplace_back(it->second, l.verdict == Verdict::confirmed_fault);
    }
  }
  return oxad::suggest_threshold(labeled);
}

const RunMark& Engine::mark_run_boundary(const std::string& note) {
  marks_.push_back({last_id_.value_or(0), last_timestamp_, note});
  if (sink_) sink_->on_mark(marks_.back());
  return marks_.back();
}

EngineSnapshot Engine::snapshot() const {
  EngineSnapshot s;
  s.config = config_;
  s.threshold = threshold_;
  s.enabled = enabled_;
  s.processed = processed_;
  s.records.assign(recent_.begin(), recent_.end());
  s.pdp.reserve(pdp_.size());
  for (std::size_t j = 0; j < pdp_.size(); ++j) s.pdp.push_back(pdp_[j].snapshot(config_.feature_names[j]));
  s.events = events_;
  s.labels = labels_;
  s.marks = marks_;
  return s;
}

}  // namespace oxad
