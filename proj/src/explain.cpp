#include "oxad/explain.hpp"

#include <algorithm>
#include <cmath>

namespace oxad {

const char* to_string(Response r) { return r == Response::score ? "score" : "mean_depth"; }

Response response_from_string(const std::string& s) {
  if (s == "score") return Response::score;
  if (s == "mean_depth") return Response::mean_depth;
  throw ConfigError("unknown response '" + s + "' (expected score or mean_depth)");
}

void ExplainConfig::validate() const {
  if (grid_size < 2) throw ConfigError("grid_size must be >= 2");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in (0, 1]");
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("beta must be in (0, 1]");
  if (recent < 0) throw ConfigError("recent must be >= 0");
  if (!(regrid_tolerance >= 0.0) || !std::isfinite(regrid_tolerance)) {
    throw ConfigError("regrid_tolerance must be >= 0");
  }
}

Grid Grid::even(int feature, double lo, double hi, int size) {
  if (!(lo <= hi)) throw InputError("grid requires lo <= hi");
  if (size < 2) throw InputError("grid needs at least two points");
  Grid g{feature, lo, hi, std::vector<double>(static_cast<std::size_t>(size))};
  const double step = (hi - lo) / static_cast<double>(size - 1);
  for (int i = 0; i < size; ++i) g.points[static_cast<std::size_t>(i)] = lo + i * step;
  g.points.back() = hi;
  return g;
}

IceCurve compute_ice(const Forest& forest, std::span<const double> x, const Grid& grid,
                     Response response, PointId instance_id) {
  check_vector(x, forest.dim());
  if (grid.feature < 0 || static_cast<std::size_t>(grid.feature) >= forest.dim()) {
    throw InputError("grid feature index out of range");
  }
  IceCurve ice{grid, {}, instance_id};
  ice.values.reserve(grid.points.size());
  FeatureVector probe(x.begin(), x.end());
  const auto j = static_cast<std::size_t>(grid.feature);
  for (const double p : grid.points) {
    probe[j] = p;
    const double depth = forest.mean_depth_unchecked(probe);
    ice.values.push_back(response == Response::score
                             ? score_from_depth(depth, forest.depth_normalizer())
                             : depth);
  }
  return ice;
}

double centered_rms_deviation(std::span<const double> ice, std::span<const double> pdp) {
  if (ice.size() != pdp.size() || ice.empty()) throw InputError("curve length mismatch");
  const auto n = static_cast<double>(ice.size());
  double ice_mean = 0.0;
  double pdp_mean = 0.0;
  for (std::size_t i = 0; i < ice.size(); ++i) {
    ice_mean += ice[i];
    pdp_mean += pdp[i];
  }
  ice_mean /= n;
  pdp_mean /= n;
  double sq = 0.0;
  for (std::size_t i = 0; i < ice.size(); ++i) {
    const double d = (ice[i] - ice_mean) - (pdp[i] - pdp_mean);
    sq += d * d;
  }
  return std::sqrt(sq / n);
}

std::vector<double> resample_linear(std::span<const double> points, std::span<const double> values,
                                    std::span<const double> at) {
  if (points.size() != values.size() || points.empty()) throw InputError("curve length mismatch");
  std::vector<double> out;
  out.reserve(at.size());
  for (const double p : at) {
    if (p <= points.front()) {
      out.push_back(values.front());
    } else if (p >= points.back()) {
      out.push_back(values.back());
    } else {
      // points[k] <= p < points[k + 1]
      const auto k = static_cast<std::size_t>(
          std::upper_bound(points.begin(), points.end(), p) - points.begin() - 1);
      const double t = (p - points[k]) / (points[k + 1] - points[k]);
      out.push_back(values[k] + t * (values[k + 1] - values[k]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

PdpState::PdpState(int feature, const ExplainConfig& config)
    : feature_(feature),
      grid_size_(config.grid_size),
      alpha_(config.alpha),
      beta_(config.beta),
      capacity_(static_cast<std::size_t>(config.recent)),
      tolerance_(config.regrid_tolerance) {
  config.validate();
}

const Grid& PdpState::grid() const {
  if (!grid_) throw StateError("feature has no grid yet");
  return *grid_;
}

bool PdpState::update_grid(double lo, double hi, std::optional<double> incoming) {
  if (!(lo <= hi)) throw InputError("update_grid requires lo <= hi");
  if (!grid_) {
    rebuild_grid(lo, hi);
    return true;
  }
  const double span = grid_->hi - grid_->lo;
  const double slack = tolerance_ * span;
  const bool moved = std::abs(lo - grid_->lo) > slack || std::abs(hi - grid_->hi) > slack;
  const bool outside = incoming && (*incoming < grid_->lo || *incoming > grid_->hi);
  if (!moved && !outside) return false;
  rebuild_grid(lo, hi);
  return true;
}

void PdpState::rebuild_grid(double lo, double hi) {
  Grid next = Grid::even(feature_, lo, hi, grid_size_);
  if (grid_ && updates_seen_ > 0) {
    pdp_ = resample_linear(grid_->points, pdp_, next.points);
    for (auto& r : recent_) r.values = resample_linear(grid_->points, r.values, next.points);
  }
  grid_ = std::move(next);
}

void PdpState::check_grid(const IceCurve& ice) const {
  if (!grid_ || !(ice.grid == *grid_)) throw InputError("ICE grid does not match the PDP grid");
  if (ice.values.size() != grid_->points.size()) throw InputError("ICE length does not match grid");
}

double PdpState::feature_importance(const IceCurve& ice) {
  check_grid(ice);
  if (updates_seen_ == 0) return 0.0;
  const double deviation = centered_rms_deviation(ice.values, pdp_);
  if (fi_initialized_) {
    fi_ = beta_ * deviation + (1.0 - beta_) * fi_;
  } else {
    fi_ = deviation;
    fi_initialized_ = true;
  }
  return deviation;
}

void PdpState::update_pdp(const IceCurve& ice) {
  check_grid(ice);
  if (updates_seen_ == 0) {
    pdp_ = ice.values;
  } else {
    for (std::size_t i = 0; i < pdp_.size(); ++i) {
      pdp_[i] = alpha_ * ice.values[i] + (1.0 - alpha_) * pdp_[i];
    }
  }
  if (capacity_ > 0) {
    recent_.push_front({ice.values, ice.instance_id, updates_seen_});
    if (recent_.size() > capacity_) recent_.pop_back();
  }
  ++updates_seen_;
}

PdpSnapshot PdpState::snapshot(const std::string& feature_name) const {
  PdpSnapshot s;
  s.feature = feature_name;
  if (grid_) s.grid = grid_->points;
  s.pdp = pdp_;
  s.fi = fi_;
  for (const auto& r : recent_) {
    const std::size_t age = updates_seen_ - 1 - r.update_index;
    s.ice.push_back({age, std::pow(1.0 - alpha_, static_cast<double>(age)), r.values});
  }
  return s;
}

void PdpState::set_pdp(std::vector<double> values, std::size_t updates_seen) {
  if (grid_ && values.size() != grid_->points.size()) throw InputError("PDP length does not match grid");
  pdp_ = std::move(values);
  updates_seen_ = updates_seen;
}

void PdpState::set_fi(double fi, bool initialized) {
  if (!(fi >= 0.0) || !std::isfinite(fi)) throw InputError("fi must be finite and non-negative");
  fi_ = fi;
  fi_initialized_ = initialized;
}

// ---------------------------------------------------------------------------

FiVector explain_instance(const Forest& forest, std::span<const double> x,
                          std::vector<PdpState>& states,
                          std::span<const std::pair<double, double>> ranges,
                          const std::vector<bool>& enabled, Response response,
                          PointId instance_id) {
  check_vector(x, forest.dim());
  const std::size_t d = forest.dim();
  if (states.size() != d || ranges.size() != d || enabled.size() != d) {
    throw InputError("explanation state does not cover every feature");
  }
  FiVector out{std::vector<double>(d, 0.0), instance_id};
  for (std::size_t j = 0; j < d; ++j) {
    PdpState& state = states[j];
    if (enabled[j]) {
      const double lo = std::min(ranges[j].first, x[j]);
      const double hi = std::max(ranges[j].second, x[j]);
      state.update_grid(lo, hi, x[j]);
      const IceCurve ice = compute_ice(forest, x, state.grid(), response, instance_id);
      state.feature_importance(ice);
      state.update_pdp(ice);
    }
    out.values[j] = state.fi();
  }
  return out;
}

}  // namespace oxad
