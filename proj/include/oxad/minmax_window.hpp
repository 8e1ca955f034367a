#pragma once

#include <cstdint>
#include <deque>
#include <utility>

#include "oxad/common.hpp"

namespace oxad {

// Exact min and max of a FIFO window. Values enter with a strictly
// increasing sequence number and leave oldest-first through expire_through().
// Both wedges are monotone deques, so every operation is amortized O(1).
class MinMaxWedge {
 public:
  void push(std::uint64_t seq, double value) {
    while (!max_.empty() && max_.back().second <= value) max_.pop_back();
    max_.emplace_back(seq, value);
    while (!min_.empty() && min_.back().second >= value) min_.pop_back();
    min_.emplace_back(seq, value);
  }

  // Drops every entry with sequence number <= seq.
  void expire_through(std::uint64_t seq) {
    while (!max_.empty() && max_.front().first <= seq) max_.pop_front();
    while (!min_.empty() && min_.front().first <= seq) min_.pop_front();
  }

  bool empty() const { return max_.empty(); }

  double min() const {
    if (min_.empty()) throw StateError("min of an empty window");
    return min_.front().second;
  }

  double max() const {
    if (max_.empty()) throw StateError("max of an empty window");
    return max_.front().second;
  }

  std::pair<double, double> range() const { return {min(), max()}; }

  void clear() {
    min_.clear();
    max_.clear();
  }

 private:
  std::deque<std::pair<std::uint64_t, double>> min_;
  std::deque<std::pair<std::uint64_t, double>> max_;
};

}  // namespace oxad
