#include "oxad/forest.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace oxad {

void ForestConfig::validate() const {
  if (num_trees < 1) throw ConfigError("num_trees must be >= 1");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
  if (!(static_cast<double>(window) / eta > 1.0)) {
    throw ConfigError("window / eta must exceed 1 (score normalizer log2(window/eta) must be positive)");
  }
  if (split_base < 2) throw ConfigError("split_base must be >= 2");
  if (!(split_growth >= 1.0) || !std::isfinite(split_growth)) {
    throw ConfigError("split_growth must be >= 1");
  }
  if (!(merge_hysteresis > 0.0 && merge_hysteresis <= 1.0)) {
    throw ConfigError("merge_hysteresis must be in (0, 1]");
  }
  if (depth_cap < 0) throw ConfigError("depth_cap must be positive (0 = automatic)");
}

int ForestConfig::resolved_depth_cap() const {
  if (depth_cap > 0) return depth_cap;
  return static_cast<int>(std::ceil(std::log2(static_cast<double>(window)))) + 4;
}

std::size_t ForestConfig::split_threshold(int depth) const {
  const double t = std::ceil(static_cast<double>(split_base) * std::pow(split_growth, depth));
  if (t >= static_cast<double>(std::numeric_limits<std::uint32_t>::max())) {
    return std::numeric_limits<std::uint32_t>::max();
  }
  return static_cast<std::size_t>(t);
}

double ForestConfig::merge_bar(int depth) const {
  return merge_hysteresis * static_cast<double>(split_threshold(depth));
}

double ForestConfig::depth_normalizer() const {
  return std::log2(static_cast<double>(window) / eta);
}

double score_from_depth(double mean_depth, double normalizer) {
  return std::exp2(-mean_depth / normalizer);
}

int UpdateReport::splits() const {
  return static_cast<int>(std::count_if(trees.begin(), trees.end(),
                                        [](const TreeUpdate& t) { return t.split; }));
}

int UpdateReport::merges() const {
  return static_cast<int>(std::count_if(trees.begin(), trees.end(),
                                        [](const TreeUpdate& t) { return t.merge_depth >= 0; }));
}

// ---------------------------------------------------------------------------
// Tree

Tree::Tree(const ForestConfig& config, Rng rng)
    : config_(config), rng_(std::move(rng)), depth_cap_(config.resolved_depth_cap()) {
  nodes_.push_back(Node{});
}

Tree Tree::from_nodes(const ForestConfig& config, Rng rng, std::vector<Node> nodes) {
  if (nodes.empty()) throw InputError("tree needs a root node");
  Tree tree(config, std::move(rng));
  tree.nodes_ = std::move(nodes);
  // Unreachable slots go to the free list so arena reuse stays consistent.
  std::vector<bool> reachable(tree.nodes_.size(), false);
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    if (i >= tree.nodes_.size() || reachable[i]) throw InputError("malformed tree arena");
    reachable[i] = true;
    const Node& n = tree.nodes_[i];
    if (!n.is_leaf()) {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  for (std::uint32_t i = 0; i < tree.nodes_.size(); ++i) {
    if (!reachable[i]) {
      tree.nodes_[i] = Node{};
      tree.nodes_[i].depth = -1;
      tree.free_.push_back(i);
    }
  }
  return tree;
}

bool Tree::is_live(std::uint32_t index) const {
  return index < nodes_.size() && nodes_[index].depth >= 0;
}

std::uint32_t Tree::allocate(Node node) {
  if (!free_.empty()) {
    const auto i = free_.back();
    free_.pop_back();
    nodes_[i] = std::move(node);
    return i;
  }
  nodes_.push_back(std::move(node));
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

void Tree::release(std::uint32_t index) {
  nodes_[index] = Node{};
  nodes_[index].depth = -1;
  free_.push_back(index);
}

std::uint32_t Tree::leaf_of(std::span<const double> x) const {
  std::uint32_t i = 0;
  while (!nodes_[i].is_leaf()) {
    const Node& n = nodes_[i];
    i = x[static_cast<std::size_t>(n.feature)] < n.split_value ? n.left : n.right;
  }
  return i;
}

int Tree::depth_of(std::span<const double> x) const { return nodes_[leaf_of(x)].depth; }

TreeUpdate Tree::learn(PointId id, std::span<const double> x, const PointTable& points,
                       const std::vector<bool>& mask) {
  std::uint32_t i = 0;
  for (;;) {
    Node& n = nodes_[i];
    ++n.count;
    if (n.is_leaf()) break;
    i = x[static_cast<std::size_t>(n.feature)] < n.split_value ? n.left : n.right;
  }
  Node& leaf = nodes_[i];
  leaf.members.push_back(id);

  TreeUpdate update;
  update.leaf_depth = leaf.depth;
  if (leaf.count > config_.split_threshold(leaf.depth) && leaf.depth < depth_cap_) {
    update.split = split_leaf(i, points, mask);
  }
  return update;
}

TreeUpdate Tree::forget(PointId id, std::span<const double> x) {
  path_.clear();
  std::uint32_t i = 0;
  for (;;) {
    path_.push_back(i);
    const Node& n = nodes_[i];
    if (n.is_leaf()) break;
    i = x[static_cast<std::size_t>(n.feature)] < n.split_value ? n.left : n.right;
  }
  Node& leaf = nodes_[i];
  auto it = std::find(leaf.members.begin(), leaf.members.end(), id);
  if (it == leaf.members.end()) {
    throw StateError("point " + std::to_string(id) + " is not a member of its leaf");
  }
  *it = leaf.members.back();
  leaf.members.pop_back();
  for (const auto p : path_) --nodes_[p].count;

  TreeUpdate update;
  update.leaf_depth = leaf.depth;
  // Merging the shallowest qualifying ancestor subsumes every deeper one, so
  // scanning top-down is the same as collapsing bottom-up.
  for (std::size_t k = 0; k + 1 < path_.size(); ++k) {
    const Node& n = nodes_[path_[k]];
    if (static_cast<double>(n.count) <= config_.merge_bar(n.depth)) {
      update.merge_depth = n.depth;
      update.merged_nodes = merge_subtree(path_[k]);
      if (k > 0 && nodes_[path_[k]].count == 0) update.merged_nodes += splice_out(path_[k - 1], path_[k]);
      break;
    }
  }
  if (update.merged_nodes == 0 && leaf.count == 0 && path_.size() > 1) {
    update.merge_depth = nodes_[path_[path_.size() - 2]].depth;
    update.merged_nodes = splice_out(path_[path_.size() - 2], path_.back());
  }
  return update;
}

bool Tree::split_leaf(std::uint32_t leaf, const PointTable& points, const std::vector<bool>& mask) {
  // Candidate features with their member extent.
  struct Extent {
    std::size_t feature;
    double lo;
    double hi;
  };
  std::vector<Extent> candidates;
  {
    const Node& n = nodes_[leaf];
    if (!n.is_leaf() || n.members.empty()) return false;
    std::vector<const FeatureVector*> rows;
    rows.reserve(n.members.size());
    for (const auto id : n.members) rows.push_back(&points.at(id));
    for (std::size_t j = 0; j < mask.size(); ++j) {
      if (!mask[j]) continue;
      double lo = (*rows.front())[j];
      double hi = lo;
      for (const auto* r : rows) {
        lo = std::min(lo, (*r)[j]);
        hi = std::max(hi, (*r)[j]);
      }
      if (lo < hi) candidates.push_back({j, lo, hi});
    }
  }
  if (candidates.empty()) return false;

  const Extent& e = candidates[rng_.below(candidates.size())];
  double value = e.lo + rng_.open_uniform() * (e.hi - e.lo);
  if (!(value > e.lo && value < e.hi)) {
    // Extent spans only a few ulps; fall back to a point that still
    // separates the extremes.
    value = e.lo + 0.5 * (e.hi - e.lo);
    if (!(value > e.lo)) value = e.hi;
  }

  Node left;
  Node right;
  left.depth = right.depth = nodes_[leaf].depth + 1;
  for (const auto id : nodes_[leaf].members) {
    if (points.at(id)[e.feature] < value) {
      left.members.push_back(id);
    } else {
      right.members.push_back(id);
    }
  }
  left.count = static_cast<std::uint32_t>(left.members.size());
  right.count = static_cast<std::uint32_t>(right.members.size());

  const auto l = allocate(std::move(left));
  const auto r = allocate(std::move(right));
  Node& n = nodes_[leaf];
  n.feature = static_cast<int>(e.feature);
  n.split_value = value;
  n.left = l;
  n.right = r;
  std::vector<PointId>().swap(n.members);
  return true;
}

int Tree::splice_out(std::uint32_t parent, std::uint32_t empty) {
  const std::uint32_t keep = nodes_[parent].left == empty ? nodes_[parent].right : nodes_[parent].left;
  release(empty);
  nodes_[parent] = std::move(nodes_[keep]);
  release(keep);
  std::vector<std::uint32_t> stack{parent};
  while (!stack.empty()) {
    Node& n = nodes_[stack.back()];
    stack.pop_back();
    --n.depth;
    if (!n.is_leaf()) {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  return 1;
}

void Tree::collect_members(std::uint32_t index, std::vector<PointId>& out) {
  Node& n = nodes_[index];
  if (n.is_leaf()) {
    out.insert(out.end(), n.members.begin(), n.members.end());
    return;
  }
  collect_members(n.left, out);
  collect_members(n.right, out);
}

int Tree::merge_subtree(std::uint32_t index) {
  if (nodes_[index].is_leaf()) return 0;
  std::vector<PointId> members;
  members.reserve(nodes_[index].count);
  collect_members(index, members);

  int removed = 0;
  std::vector<std::uint32_t> stack{nodes_[index].left, nodes_[index].right};
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    if (!nodes_[i].is_leaf()) {
      ++removed;
      stack.push_back(nodes_[i].left);
      stack.push_back(nodes_[i].right);
    }
    release(i);
  }

  Node& n = nodes_[index];
  n.feature = -1;
  n.split_value = 0.0;
  n.left = n.right = Node::kNone;
  n.members = std::move(members);
  return removed + 1;
}

TreeStats Tree::stats() const {
  TreeStats s;
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    ++s.nodes;
    s.max_depth = std::max(s.max_depth, n.depth);
    if (n.is_leaf()) {
      ++s.leaves;
      if (s.depth_histogram.size() <= static_cast<std::size_t>(n.depth)) {
        s.depth_histogram.resize(static_cast<std::size_t>(n.depth) + 1, 0);
      }
      ++s.depth_histogram[static_cast<std::size_t>(n.depth)];
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  return s;
}

std::size_t Tree::memory_bytes() const {
  std::size_t bytes = sizeof(Tree) + nodes_.capacity() * sizeof(Node) +
                      free_.capacity() * sizeof(std::uint32_t);
  for (const auto& n : nodes_) bytes += n.members.capacity() * sizeof(PointId);
  return bytes;
}

bool Tree::equal_from(const Tree& other, std::uint32_t a, std::uint32_t b) const {
  const Node& x = nodes_[a];
  const Node& y = other.nodes_[b];
  if (x.count != y.count || x.depth != y.depth || x.feature != y.feature) return false;
  if (x.is_leaf()) return x.members == y.members;
  return x.split_value == y.split_value && equal_from(other, x.left, y.left) &&
         equal_from(other, x.right, y.right);
}

bool Tree::structurally_equal(const Tree& other) const { return equal_from(other, 0, 0); }

// ---------------------------------------------------------------------------
// Forest

Forest::Forest(ForestConfig config, std::size_t dim)
    : config_(config), dim_(dim), mask_(dim, true) {
  config_.validate();
  if (dim == 0) throw ConfigError("dimension must be >= 1");
  normalizer_ = config_.depth_normalizer();
  trees_.reserve(static_cast<std::size_t>(config_.num_trees));
  for (int t = 0; t < config_.num_trees; ++t) {
    trees_.emplace_back(config_, Rng::derived(config_.seed, static_cast<std::uint64_t>(t)));
  }
}

UpdateReport Forest::learn(PointId id, std::span<const double> x) {
  check_vector(x, dim_);
  auto [it, inserted] = points_.try_emplace(id, x.begin(), x.end());
  if (!inserted) throw StateError("point " + std::to_string(id) + " is already live");
  UpdateReport report;
  report.trees.reserve(trees_.size());
  for (auto& tree : trees_) report.trees.push_back(tree.learn(id, x, points_, mask_));
  return report;
}

UpdateReport Forest::forget(PointId id, std::span<const double> x) {
  check_vector(x, dim_);
  auto it = points_.find(id);
  if (it == points_.end()) throw StateError("unknown point " + std::to_string(id));
  if (!std::equal(x.begin(), x.end(), it->second.begin(), it->second.end())) {
    throw StateError("vector for point " + std::to_string(id) + " differs from the learned one");
  }
  UpdateReport report;
  report.trees.reserve(trees_.size());
  for (auto& tree : trees_) report.trees.push_back(tree.forget(id, x));
  points_.erase(it);
  return report;
}

AnomalyScore Forest::score(std::span<const double> x) const {
  check_vector(x, dim_);
  AnomalyScore s;
  s.per_tree_depths.reserve(trees_.size());
  long total = 0;
  for (const auto& tree : trees_) {
    const int d = tree.depth_of(x);
    s.per_tree_depths.push_back(d);
    total += d;
  }
  s.mean_depth = static_cast<double>(total) / static_cast<double>(trees_.size());
  s.score = score_from_depth(s.mean_depth, normalizer_);
  return s;
}

double Forest::mean_depth_unchecked(std::span<const double> x) const {
  long total = 0;
  for (const auto& tree : trees_) total += tree.depth_of(x);
  return static_cast<double>(total) / static_cast<double>(trees_.size());
}

void Forest::set_feature_mask(const std::vector<bool>& enabled) {
  if (enabled.size() != dim_) throw InputError("feature mask length must equal dimension");
  if (std::none_of(enabled.begin(), enabled.end(), [](bool b) { return b; })) {
    throw InputError("at least one feature must stay enabled");
  }
  mask_ = enabled;
}

ForestStats Forest::stats() const {
  ForestStats s;
  s.memory_bytes = sizeof(Forest);
  for (const auto& tree : trees_) {
    s.trees.push_back(tree.stats());
    s.memory_bytes += tree.memory_bytes();
  }
  // Rough per-entry cost of the hash table: node, bucket pointer, vector payload.
  s.memory_bytes += points_.size() * (sizeof(PointTable::value_type) + 2 * sizeof(void*) +
                                      dim_ * sizeof(double));
  return s;
}

Forest Forest::assemble(ForestConfig config, std::size_t dim, std::vector<bool> mask,
                        PointTable points, std::vector<std::vector<Node>> trees) {
  Forest forest(config, dim);
  if (trees.size() != static_cast<std::size_t>(config.num_trees)) {
    throw InputError("tree count does not match num_trees");
  }
  if (!mask.empty()) forest.set_feature_mask(mask);
  for (const auto& [id, x] : points) check_vector(x, dim);
  forest.points_ = std::move(points);

  for (std::size_t t = 0; t < trees.size(); ++t) {
    Tree tree = Tree::from_nodes(forest.config_, Rng::derived(config.seed, t), std::move(trees[t]));
    // Audit counts, depths and membership soundness.
    std::size_t leaf_total = 0;
    struct Frame {
      std::uint32_t index;
      int depth;
    };
    std::vector<Frame> stack{{0, 0}};
    while (!stack.empty()) {
      const auto [i, depth] = stack.back();
      stack.pop_back();
      const Node& n = tree.node(i);
      if (n.depth != depth) throw InputError("node depth inconsistent with its position");
      if (depth > forest.config_.resolved_depth_cap()) throw InputError("node deeper than depth_cap");
      if (n.is_leaf()) {
        if (n.members.size() != n.count) throw InputError("leaf count differs from member count");
        for (const auto id : n.members) {
          if (!forest.points_.contains(id)) throw InputError("leaf member is not a known point");
        }
        leaf_total += n.count;
      } else {
        if (static_cast<std::size_t>(n.feature) >= dim) throw InputError("split feature out of range");
        if (!n.members.empty()) throw InputError("internal node holds members");
        if (tree.node(n.left).count + tree.node(n.right).count != n.count) {
          throw InputError("internal count differs from child sum");
        }
        stack.push_back({n.left, depth + 1});
        stack.push_back({n.right, depth + 1});
      }
    }
    if (leaf_total != forest.points_.size()) {
      throw InputError("leaf counts do not cover the live point set");
    }
    forest.trees_[t] = std::move(tree);
  }
  return forest;
}

bool Forest::structurally_equal(const Forest& other) const {
  if (config_ != other.config_ || dim_ != other.dim_ || mask_ != other.mask_ ||
      trees_.size() != other.trees_.size() || points_ != other.points_) {
    return false;
  }
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    if (!trees_[t].structurally_equal(other.trees_[t])) return false;
  }
  return true;
}

}  // namespace oxad
