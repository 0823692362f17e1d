#include "fab/buffer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fab/errors.hpp"

namespace fab {

ReplayBuffer::ReplayBuffer(int dim, std::size_t min_length, std::size_t max_length)
    : dim_(dim), min_length_(min_length), max_length_(max_length) {
  if (dim < 1) throw ConfigError("buffer dimension must be positive");
  if (max_length == 0 || min_length > max_length)
    throw ConfigError("buffer needs 0 <= min_length <= max_length and max_length > 0");
}

std::size_t ReplayBuffer::insert(const Points& xs, const Eigen::VectorXd& log_ws,
                                 const Eigen::VectorXd& log_qs) {
  if (xs.rows() != dim_) throw ConfigError("buffer insert: wrong point dimension");
  if (xs.cols() != log_ws.size() || xs.cols() != log_qs.size())
    throw ConfigError("buffer insert: lengths differ");
  std::size_t skipped = 0;
  for (Eigen::Index i = 0; i < xs.cols(); ++i) {
    if (!xs.col(i).allFinite() || !std::isfinite(log_ws[i]) ||
        !std::isfinite(log_qs[i])) {
      ++skipped;
      continue;
    }
    entries_.push_back({xs.col(i), log_ws[i], log_qs[i]});
    if (entries_.size() > max_length_) {
      entries_.pop_front();
      ++first_id_;
    }
  }
  return skipped;
}

std::vector<std::size_t> ReplayBuffer::draw(std::size_t n, Rng& rng) const {
  if (!ready()) throw ConfigError("buffer is below its minimum length");
  if (n > entries_.size()) throw ConfigError("cannot draw more entries than stored");
  // Gumbel top-k: the order of the largest log_w + Gumbel keys has the law of
  // sequential proportional draws without replacement.
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> key(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i)
    key[i] = entries_[i].log_w - std::log(expo(rng));
  std::vector<std::size_t> idx(entries_.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                    [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  idx.resize(n);
  return idx;
}

void BufferDraw::correct(const Eigen::VectorXd& log_q, double alpha) {
  if (log_q.size() != log_q_old.size())
    throw ConfigError("correction needs one log q per drawn entry");
  log_q_new = log_q;
  log_w_correction = (1.0 - alpha) * (log_q_new - log_q_old);
}

BufferDraw ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  const std::vector<std::size_t> pos = draw(n, rng);
  BufferDraw out;
  out.xs.resize(dim_, static_cast<Eigen::Index>(n));
  out.log_q_old.resize(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    out.ids.push_back(id_at(pos[k]));
    out.xs.col(k) = entries_[pos[k]].x;
    out.log_q_old[k] = entries_[pos[k]].log_q_old;
  }
  return out;
}

BufferDraw ReplayBuffer::sample_and_correct(const FlowModel& flow, std::size_t n,
                                            Rng& rng, double alpha) const {
  BufferDraw out = sample(n, rng);
  out.correct(flow.log_prob(out.xs), alpha);
  return out;
}

void ReplayBuffer::commit(const BufferDraw& draw) {
  for (std::size_t k = 0; k < draw.ids.size(); ++k) {
    if (draw.ids[k] < first_id_) continue;
    const std::size_t i = draw.ids[k] - first_id_;
    if (i >= entries_.size()) continue;
    const double c = draw.log_w_correction[k];
    if (!std::isfinite(c) || !std::isfinite(entries_[i].log_w + c)) continue;
    entries_[i].log_w += c;
    entries_[i].log_q_old = draw.log_q_new[k];
  }
}

}  // namespace fab
