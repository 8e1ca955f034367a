#pragma once

#include <cstddef>
#include <deque>
#include <utility>
#include <vector>

#include "oxad/common.hpp"
#include "oxad/minmax_window.hpp"

namespace oxad {

// The sliding window of live instances plus per-feature min/max wedges.
class WindowStore {
 public:
  WindowStore(std::size_t capacity, std::size_t dim) : capacity_(capacity), wedges_(dim) {}

  void push(const Instance& instance) {
    items_.push_back(instance);
    for (std::size_t j = 0; j < wedges_.size(); ++j) wedges_[j].push(instance.id, instance.x[j]);
  }

  Instance pop_oldest() {
    if (items_.empty()) throw StateError("pop from an empty window");
    Instance oldest = std::move(items_.front());
    items_.pop_front();
    for (auto& w : wedges_) w.expire_through(oldest.id);
    return oldest;
  }

  bool over_capacity() const { return items_.size() > capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Instance>& items() const { return items_; }

  // Exact (min, max) of feature j over the window.
  std::pair<double, double> range(std::size_t j) const {
    if (items_.empty()) throw StateError("range of an empty window");
    return wedges_.at(j).range();
  }

 private:
  std::size_t capacity_;
  std::deque<Instance> items_;
  std::vector<MinMaxWedge> wedges_;
};

}  // namespace oxad
