#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oxad/common.hpp"
#include "oxad/forest.hpp"

namespace oxad {

// Which forest output an ICE curve tracks.
enum class Response { score, mean_depth };

const char* to_string(Response r);
Response response_from_string(const std::string& s);

struct ExplainConfig {
  int grid_size = 20;
  // PDP fade.
  double alpha = 0.05;
  // FI fade.
  double beta = 0.05;
  // Recent ICE curves kept for display.
  int recent = 15;
  // Re-grid when an endpoint moves by more than this fraction of the span.
  double regrid_tolerance = 0.10;
  Response response = Response::score;

  void validate() const;
  bool operator==(const ExplainConfig&) const = default;
};

// Evenly spaced evaluation points for one feature.
struct Grid {
  int feature = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> points;

  static Grid even(int feature, double lo, double hi, int size);

  bool operator==(const Grid&) const = default;
};

struct IceCurve {
  Grid grid;
  std::vector<double> values;
  PointId instance_id = 0;
};

struct FiVector {
  std::vector<double> values;
  PointId instance_id = 0;
};

struct IceSnapshot {
  std::size_t age = 0;
  double weight = 1.0;
  std::vector<double> values;

  bool operator==(const IceSnapshot&) const = default;
};

struct PdpSnapshot {
  std::string feature;
  std::vector<double> grid;
  std::vector<double> pdp;
  double fi = 0.0;
  std::vector<IceSnapshot> ice;

  bool operator==(const PdpSnapshot&) const = default;
};

// Forest response at x with coordinate `feature` swept over the grid points.
// The forest is only read.
IceCurve compute_ice(const Forest& forest, std::span<const double> x, const Grid& grid,
                     Response response, PointId instance_id = 0);

// Root-mean-square of the difference between two curves after each is
// centered on its own mean. Constant offsets between the curves cancel.
double centered_rms_deviation(std::span<const double> ice, std::span<const double> pdp);

// Piecewise-linear resampling of (points, values) at `at`, clamped to the
// end values outside [points.front(), points.back()].
std::vector<double> resample_linear(std::span<const double> points, std::span<const double> values,
                                    std::span<const double> at);

// Streaming partial dependence for one feature: the PDP is an exponential
// moving average of ICE curves on an adaptive grid, and the FI is a faded
// RMS of each new ICE curve's shape deviation from the PDP.
class PdpState {
 public:
  PdpState(int feature, const ExplainConfig& config);

  // Moves the grid to [lo, hi] when an endpoint has drifted past the
  // tolerance or when `incoming` falls outside the current grid. The PDP and
  // recent ICE curves are resampled onto the new grid. Returns true when the
  // grid was rebuilt.
  bool update_grid(double lo, double hi, std::optional<double> incoming = std::nullopt);

  // Unconditional rebuild onto [lo, hi].
  void rebuild_grid(double lo, double hi);

  // Shape deviation of `ice` from the current PDP; folds it into fi. Before
  // the first PDP update there is nothing to compare against: returns 0 and
  // leaves fi untouched.
  double feature_importance(const IceCurve& ice);

  void update_pdp(const IceCurve& ice);

  PdpSnapshot snapshot(const std::string& feature_name) const;

  int feature() const { return feature_; }
  bool has_grid() const { return grid_.has_value(); }
  const Grid& grid() const;
  const std::vector<double>& pdp_values() const { return pdp_; }
  double fi() const { return fi_; }
  std::size_t updates_seen() const { return updates_seen_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

  // Newest first.
  struct RecentIce {
    std::vector<double> values;
    PointId instance_id = 0;
    std::size_t update_index = 0;
  };
  const std::deque<RecentIce>& recent_ice() const { return recent_; }

  // Direct state injection for fixtures and snapshot reload.
  void set_pdp(std::vector<double> values, std::size_t updates_seen);
  void set_fi(double fi, bool initialized);

 private:
  void check_grid(const IceCurve& ice) const;

  int feature_;
  int grid_size_;
  double alpha_;
  double beta_;
  std::size_t capacity_;
  double tolerance_;

  std::optional<Grid> grid_;
  std::vector<double> pdp_;
  double fi_ = 0.0;
  bool fi_initialized_ = false;
  std::size_t updates_seen_ = 0;
  std::deque<RecentIce> recent_;
};

// Runs the per-instance explanation for every enabled feature: grid refresh
// against `ranges` (window min/max per feature, extended here to include x),
// ICE, FI against the pre-update PDP, then the PDP update. Disabled features
// keep their previous fi.
FiVector explain_instance(const Forest& forest, std::span<const double> x,
                          std::vector<PdpState>& states,
                          std::span<const std::pair<double, double>> ranges,
                          const std::vector<bool>& enabled, Response response,
                          PointId instance_id = 0);

}  // namespace oxad
