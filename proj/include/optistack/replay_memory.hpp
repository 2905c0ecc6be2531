#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "optistack/errors.hpp"

namespace optistack::agent {

using Rng = std::mt19937_64;

// FIFO ring buffer with softmax-over-loss prioritized sampling. `T` must
// expose a mutable `double last_loss`.
template <typename T>
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 5000, std::size_t min_fill = 500)
      : capacity_(capacity), min_fill_(min_fill) {
    if (capacity_ == 0) throw InvalidInputError("replay capacity must be positive");
    items_.reserve(capacity_);
  }

  // New entries get the current maximum loss (1.0 when empty) so they are
  // sampled at least as often as anything already stored.
  void push(T item) {
    item.last_loss = max_loss();
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[cursor_] = std::move(item);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t min_fill() const { return min_fill_; }
  bool empty() const { return items_.empty(); }
  bool ready(std::size_t batch_size) const { return size() >= std::max(batch_size, min_fill_); }

  const T& operator[](std::size_t i) const { return items_[i]; }
  T& operator[](std::size_t i) { return items_[i]; }
  std::span<const T> items() const { return items_; }

  // Slot that the next push overwrites once the buffer is full.
  std::size_t cursor() const { return cursor_; }

  double max_loss() const {
    if (items_.empty()) return 1.0;
    double m = items_.front().last_loss;
    for (const auto& t : items_) m = std::max(m, t.last_loss);
    return m;
  }

  // P(i) = exp(loss_i - max) / sum_j exp(loss_j - max)
  std::vector<double> probabilities() const {
    std::vector<double> p(items_.size());
    if (items_.empty()) return p;
    const double m = max_loss();
    double z = 0.0;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      p[i] = std::exp(items_[i].last_loss - m);
      z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
  }

  // Indices drawn with replacement; nullopt while under-filled.
  std::optional<std::vector<std::size_t>> sample(std::size_t batch_size, Rng& rng, bool prioritized = true) const {
    if (!ready(batch_size)) return std::nullopt;
    std::vector<std::size_t> out(batch_size);
    if (!prioritized) {
      std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
      for (auto& i : out) i = pick(rng);
      return out;
    }
    const auto p = probabilities();
    std::vector<double> cdf(p.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) cdf[i] = (acc += p[i]);
    std::uniform_real_distribution<double> u(0.0, acc);
    for (auto& i : out) {
      const auto it = std::upper_bound(cdf.begin(), cdf.end(), u(rng));
      i = std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t min_fill_;
  std::vector<T> items_;
  std::size_t cursor_ = 0;
};

}  // namespace optistack::agent
