#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "oxad/common.hpp"
#include "oxad/rng.hpp"

namespace oxad {

struct ForestConfig {
  int num_trees = 32;
  std::size_t window = 1024;
  double eta = 1.0;
  int split_base = 4;
  double split_growth = 1.5;
  double merge_hysteresis = 0.5;
  // 0 selects ceil(log2(window)) + 4.
  int depth_cap = 0;
  std::uint64_t seed = 0;

  void validate() const;

  int resolved_depth_cap() const;

  // ceil(split_base * split_growth^depth); a leaf splits once its count
  // exceeds this value.
  std::size_t split_threshold(int depth) const;

  // Internal nodes collapse when count <= merge_hysteresis * split_threshold.
  double merge_bar(int depth) const;

  // log2(window / eta), the depth normalizer of the score.
  double depth_normalizer() const;

  bool operator==(const ForestConfig&) const = default;
};

// 2^(-mean_depth / normalizer).
double score_from_depth(double mean_depth, double normalizer);

struct AnomalyScore {
  double score = 1.0;
  double mean_depth = 0.0;
  std::vector<int> per_tree_depths;
};

struct Node {
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  std::uint32_t count = 0;
  int depth = 0;
  // -1 on leaves.
  int feature = -1;
  double split_value = 0.0;
  std::uint32_t left = kNone;
  std::uint32_t right = kNone;
  // Window point ids held by a leaf; always empty on internal nodes.
  std::vector<PointId> members;

  bool is_leaf() const { return feature < 0; }
};

using PointTable = std::unordered_map<PointId, FeatureVector>;

struct TreeUpdate {
  int leaf_depth = 0;
  bool split = false;
  // Depth of the node collapsed or spliced out by a forget, -1 when none.
  int merge_depth = -1;
  // Internal nodes removed by that collapse.
  int merged_nodes = 0;
};

struct UpdateReport {
  std::vector<TreeUpdate> trees;

  int splits() const;
  int merges() const;
};

struct TreeStats {
  std::size_t nodes = 0;
  std::size_t leaves = 0;
  int max_depth = 0;
  // Leaves per depth, indexed by depth.
  std::vector<std::size_t> depth_histogram;
};

struct ForestStats {
  std::vector<TreeStats> trees;
  std::size_t memory_bytes = 0;
};

// One online isolation tree. Nodes live in an arena; freed slots are reused.
class Tree {
 public:
  Tree(const ForestConfig& config, Rng rng);

  // Rebuilds a tree from an explicit node arena (snapshot load, fixtures).
  // Node 0 must be the root.
  static Tree from_nodes(const ForestConfig& config, Rng rng, std::vector<Node> nodes);

  TreeUpdate learn(PointId id, std::span<const double> x, const PointTable& points,
                   const std::vector<bool>& mask);
  TreeUpdate forget(PointId id, std::span<const double> x);

  int depth_of(std::span<const double> x) const;
  std::uint32_t leaf_of(std::span<const double> x) const;

  // Splits a leaf on a random enabled, non-degenerate feature. Returns false
  // (and leaves the node untouched) when every enabled feature is constant
  // over the members.
  bool split_leaf(std::uint32_t leaf, const PointTable& points, const std::vector<bool>& mask);

  // Collapses an internal node into a leaf holding every descendant member.
  // Returns the number of internal nodes removed.
  int merge_subtree(std::uint32_t node);
  // Replaces `parent` with its non-empty child and lifts that subtree one
  // level. A split whose side has drained no longer separates anything.
  int splice_out(std::uint32_t parent, std::uint32_t empty);

  std::uint32_t root() const { return 0; }
  const Node& node(std::uint32_t index) const { return nodes_.at(index); }
  // Arena slots, including freed ones; see is_live().
  std::size_t arena_size() const { return nodes_.size(); }
  bool is_live(std::uint32_t index) const;

  TreeStats stats() const;
  std::size_t memory_bytes() const;

  bool structurally_equal(const Tree& other) const;

 private:
  std::uint32_t allocate(Node node);
  void release(std::uint32_t index);
  void collect_members(std::uint32_t index, std::vector<PointId>& out);
  bool equal_from(const Tree& other, std::uint32_t a, std::uint32_t b) const;

  ForestConfig config_;
  Rng rng_;
  int depth_cap_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> free_;
  std::vector<std::uint32_t> path_;
};

// Ensemble of online isolation trees over a sliding window of points. Every
// learned point updates every tree. The caller owns window policy: it decides
// when to forget(); the forest only keeps the vectors of live points so that
// their paths can be re-descended.
class Forest {
 public:
  Forest(ForestConfig config, std::size_t dim);

  UpdateReport learn(PointId id, std::span<const double> x);
  UpdateReport forget(PointId id, std::span<const double> x);

  AnomalyScore score(std::span<const double> x) const;
  // Unchecked fast path used by explanation sweeps.
  double mean_depth_unchecked(std::span<const double> x) const;

  void set_feature_mask(const std::vector<bool>& enabled);
  const std::vector<bool>& feature_mask() const { return mask_; }

  ForestStats stats() const;

  const ForestConfig& config() const { return config_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_trees() const { return trees_.size(); }
  const Tree& tree(std::size_t i) const { return trees_.at(i); }
  std::size_t live_points() const { return points_.size(); }
  const PointTable& points() const { return points_; }
  double depth_normalizer() const { return normalizer_; }

  // Assembles a forest from explicit parts; used by snapshot loading and
  // by fixtures that need hand-built trees. Validates count and membership
  // consistency.
  static Forest assemble(ForestConfig config, std::size_t dim, std::vector<bool> mask,
                         PointTable points, std::vector<std::vector<Node>> trees);

  bool structurally_equal(const Forest& other) const;

 private:
  ForestConfig config_;
  std::size_t dim_;
  double normalizer_;
  std::vector<bool> mask_;
  std::vector<Tree> trees_;
  PointTable points_;
};

}  // namespace oxad
