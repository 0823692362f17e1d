#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include <Eigen/Core>

#include "fab/flow.hpp"
#include "fab/random.hpp"

namespace fab {

struct BufferEntry {
  Eigen::VectorXd x;
  double log_w;
  double log_q_old;
};

/// Entries drawn from the buffer together with their weight corrections.
/// Nothing in the buffer changes until the draw is committed.
struct BufferDraw {
  std::vector<std::uint64_t> ids;   // stable entry identifiers
  Points xs;
  Eigen::VectorXd log_q_old;
  Eigen::VectorXd log_w_correction;
  Eigen::VectorXd log_q_new;

  // Fills log_q_new and log w_correction = (1 - alpha)(log q_new - log q_old).
  void correct(const Eigen::VectorXd& log_q, double alpha);
};

/// Ring of past AIS samples with prioritised draws.
///
/// Inserting beyond `max_length` evicts the oldest entries. Draws are taken
/// without replacement with probability proportional to the stored weights
/// (softmax over log_w), which is equivalent to sequential weighted draws
/// with removal.
class ReplayBuffer {
 public:
  ReplayBuffer(int dim, std::size_t min_length, std::size_t max_length);

  // Skips and counts entries with a non-finite x, log_w or log_q.
  std::size_t insert(const Points& xs, const Eigen::VectorXd& log_ws,
                     const Eigen::VectorXd& log_qs);

  std::size_t size() const { return entries_.size(); }
  std::size_t min_length() const { return min_length_; }
  std::size_t max_length() const { return max_length_; }
  bool ready() const { return entries_.size() >= min_length_; }

  // Oldest first.
  const BufferEntry& at(std::size_t i) const { return entries_.at(i); }
  std::uint64_t id_at(std::size_t i) const { return first_id_ + i; }

  // Positions (oldest first) of n entries drawn without replacement, in
  // draw order. Throws ConfigError when n exceeds the length or the buffer
  // is below min_length.
  std::vector<std::size_t> draw(std::size_t n, Rng& rng) const;

  // Draws without computing corrections.
  BufferDraw sample(std::size_t n, Rng& rng) const;

  // log w_correction = (1 - alpha)(log q_theta - log q_old); for alpha = 2
  // this is log q_old - log q_theta.
  BufferDraw sample_and_correct(const FlowModel& flow, std::size_t n, Rng& rng,
                                double alpha = 2.0) const;

  // Adds the corrections to the stored log_w and replaces log_q_old for every
  // drawn entry still present; non-finite corrections leave the entry alone.
  void commit(const BufferDraw& draw);

 private:
  int dim_;
  std::size_t min_length_;
  std::size_t max_length_;
  std::deque<BufferEntry> entries_;
  std::uint64_t first_id_ = 0;
};

}  // namespace fab
