#pragma once

// Brute-force oracles shared by the unit tests and the acceptance runner.
// None of them call into the code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oxad/forest.hpp"
#include "oxad/json_io.hpp"

namespace oxad::oracle {

struct AuditResult {
  std::size_t violations = 0;
  std::string first;

  void fail(const std::string& what) {
    if (violations++ == 0) first = what;
  }
  bool ok() const { return violations == 0; }
};

// Internal count == child sum, leaf sum == live points, leaf count == members.
inline void audit_counts(const Tree& tree, std::size_t live, AuditResult& out) {
  std::size_t leaf_total = 0;
  std::size_t nodes = 0;
  std::vector<std::uint32_t> stack{tree.root()};
  while (!stack.empty()) {
    const Node& n = tree.node(stack.back());
    stack.pop_back();
    ++nodes;
    if (n.is_leaf()) {
      if (n.members.size() != n.count) out.fail("leaf count != member count");
      leaf_total += n.count;
      continue;
    }
    const Node& l = tree.node(n.left);
    const Node& r = tree.node(n.right);
    if (l.count + r.count != n.count) out.fail("internal count != child sum");
    if (l.depth != n.depth + 1 || r.depth != n.depth + 1) out.fail("child depth != parent depth + 1");
    if (l.count == 0 || r.count == 0) out.fail("split with an empty side");
    stack.push_back(n.left);
    stack.push_back(n.right);
  }
  if (leaf_total != live) out.fail("leaf sum != live points");
  if (nodes % 2 != 1) out.fail("even node count");
}

// Every member satisfies the predicates on its root-to-leaf path.
inline void audit_membership(const Tree& tree, const PointTable& points, AuditResult& out) {
  struct Bound {
    std::uint32_t node;
    std::vector<std::pair<int, std::pair<double, bool>>> preds;  // feature, (value, went_left)
  };
  std::vector<Bound> stack{{tree.root(), {}}};
  while (!stack.empty()) {
    Bound b = std::move(stack.back());
    stack.pop_back();
    const Node& n = tree.node(b.node);
    if (n.is_leaf()) {
      for (const auto id : n.members) {
        const auto it = points.find(id);
        if (it == points.end()) {
          out.fail("member not live");
          continue;
        }
        for (const auto& [f, pv] : b.preds) {
          const bool left = it->second[f] < pv.first;
          if (left != pv.second) out.fail("member violates ancestor predicate");
        }
      }
      continue;
    }
    Bound l{n.left, b.preds};
    l.preds.push_back({n.feature, {n.split_value, true}});
    Bound r{n.right, std::move(b.preds)};
    r.preds.push_back({n.feature, {n.split_value, false}});
    stack.push_back(std::move(l));
    stack.push_back(std::move(r));
  }
}

inline int walk_depth(const Tree& tree, std::span<const double> x) {
  std::uint32_t i = tree.root();
  while (!tree.node(i).is_leaf()) {
    const Node& n = tree.node(i);
    i = x[n.feature] < n.split_value ? n.left : n.right;
  }
  return tree.node(i).depth;
}

inline double walk_mean_depth(const Forest& forest, std::span<const double> x) {
  double sum = 0.0;
  for (std::size_t t = 0; t < forest.num_trees(); ++t) sum += walk_depth(forest.tree(t), x);
  return sum / static_cast<double>(forest.num_trees());
}

inline double closed_form_score(double mean_depth, std::size_t window, double eta) {
  return std::pow(2.0, -mean_depth / std::log2(static_cast<double>(window) / eta));
}

// Score recomputed from a serialized forest snapshot.
inline double json_score(const json& snapshot, std::span<const double> x) {
  double sum = 0.0;
  std::size_t trees = 0;
  for (const auto& root : snapshot.at("trees")) {
    const json* n = &root;
    int depth = 0;
    while (n->contains("split")) {
      const auto f = n->at("split").at("feature").get<std::size_t>();
      const double v = n->at("split").at("value").get<double>();
      n = x[f] < v ? &n->at("left") : &n->at("right");
      ++depth;
    }
    sum += depth;
    ++trees;
  }
  const auto& cfg = snapshot.at("config");
  return closed_form_score(sum / static_cast<double>(trees), cfg.at("window").get<std::size_t>(),
                           cfg.at("eta").get<double>());
}

// Probability that a random positive outscores a random negative, ties 1/2.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      if (positive[k]) continue;
      ++pairs;
      if (scores[i] > scores[k]) {
        wins += 1.0;
      } else if (scores[i] == scores[k]) {
        wins += 0.5;
      }
    }
  }
  return wins / static_cast<double>(pairs);
}

// The engine's suggestion recomputed by brute force: every midpoint, F1 in
// floating point, largest threshold among maximal F1 values.
inline double sweep_oracle(const std::vector<std::pair<double, bool>>& labeled) {
  std::vector<double> s;
  for (const auto& p : labeled) s.push_back(p.first);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  double best_f1 = -1.0, best = 0.0;
  for (std::size_t k = s.size() - 1; k-- > 0;) {
    const double theta = (s[k] + s[k + 1]) / 2.0;
    double tp = 0, fp = 0, fn = 0;
    for (const auto& [score, fault] : labeled) {
      if (score > theta && fault) ++tp;
      if (score > theta && !fault) ++fp;
      if (score <= theta && fault) ++fn;
    }
    const double f1 = 2 * tp / (2 * tp + fp + fn);
    if (f1 > best_f1 + 1e-12) {
      best_f1 = f1;
      best = theta;
    }
  }
  return best;
}

// Piecewise-linear interpolation with endpoint clamping, written out longhand.
inline double interp_clamped(const std::vector<double>& xs, const std::vector<double>& ys, double at) {
  if (at <= xs.front()) return ys.front();
  if (at >= xs.back()) return ys.back();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (at <= xs[i]) {
      const double span = xs[i] - xs[i - 1];
      if (span <= 0.0) return ys[i];
      const double t = (at - xs[i - 1]) / span;
      return ys[i - 1] + t * (ys[i] - ys[i - 1]);
    }
  }
  return ys.back();
}

// Keeps every ICE curve ever folded into a PDP, carried onto each new grid,
// and recomputes the fading average as an explicit weighted sum.
class EmaOracle {
 public:
  explicit EmaOracle(double alpha) : alpha_(alpha) {}

  void add(const std::vector<double>& grid, const std::vector<double>& values) {
    if (!grid_.empty() && grid != grid_) {
      for (auto& c : curves_) {
        std::vector<double> moved(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) moved[i] = interp_clamped(grid_, c, grid[i]);
        c = std::move(moved);
      }
    }
    grid_ = grid;
    curves_.push_back(values);
  }

  std::vector<double> expected() const {
    const std::size_t n = curves_.size();
    std::vector<double> out(grid_.size(), 0.0);
    for (std::size_t i = 1; i <= n; ++i) {
      const double w = i == 1 ? std::pow(1.0 - alpha_, static_cast<double>(n - 1))
                              : alpha_ * std::pow(1.0 - alpha_, static_cast<double>(n - i));
      for (std::size_t g = 0; g < out.size(); ++g) out[g] += w * curves_[i - 1][g];
    }
    return out;
  }

  std::size_t size() const { return curves_.size(); }

 private:
  double alpha_;
  std::vector<double> grid_;
  std::vector<std::vector<double>> curves_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("oxad_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oxad::oracle
