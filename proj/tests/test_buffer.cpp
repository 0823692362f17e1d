#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "fab/buffer.hpp"
#include "fab/errors.hpp"
#include "fab/targets.hpp"
#include "test_util.hpp"

namespace fab {
namespace {

using testing::perturbed_flow;

FlowArchitecture small_arch() {
  FlowArchitecture a;
  a.dim = 2;
  a.n_layers = 3;
  a.conditioner_widths = {8};
  return a;
}

// Entry k has x = (k, -k), so positions can be traced back to insertion order.
void insert_range(ReplayBuffer& b, int first, int count, const Eigen::VectorXd* log_ws = nullptr) {
  Points xs(2, count);
  for (int i = 0; i < count; ++i) xs.col(i) << first + i, -(first + i);
  const Eigen::VectorXd lw = log_ws ? *log_ws : Eigen::VectorXd::Zero(count);
  b.insert(xs, lw, Eigen::VectorXd::Constant(count, -1.0));
}

double chi_square_critical(int dof) {
  return boost::math::quantile(boost::math::chi_squared(dof), 0.99);
}

TEST(ReplayBuffer, InsertIntoEmpty) {
  ReplayBuffer b(2, 4, 100);
  insert_range(b, 0, 7);
  EXPECT_EQ(b.size(), 7u);
  EXPECT_TRUE(b.ready());
}

TEST(ReplayBuffer, EvictsOldestFirst) {
  ReplayBuffer b(2, 1, 5);
  insert_range(b, 0, 8);
  ASSERT_EQ(b.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(b.at(i).x[0], 3.0 + static_cast<double>(i));
}

TEST(ReplayBuffer, SkipsNonFiniteEntries) {
  ReplayBuffer b(2, 1, 10);
  Points xs = Points::Zero(2, 4);
  xs(1, 2) = std::nan("");
  Eigen::VectorXd lw = Eigen::VectorXd::Zero(4);
  lw[0] = HUGE_VAL;
  Eigen::VectorXd lq = Eigen::VectorXd::Zero(4);
  lq[3] = -HUGE_VAL;
  EXPECT_EQ(b.insert(xs, lw, lq), 3u);
  EXPECT_EQ(b.size(), 1u);
}

TEST(ReplayBuffer, DrawsGuardedByLength) {
  ReplayBuffer b(2, 5, 10);
  insert_range(b, 0, 4);
  Rng rng(1);
  EXPECT_FALSE(b.ready());
  EXPECT_THROW(b.draw(1, rng), ConfigError);
  insert_range(b, 4, 2);
  EXPECT_THROW(b.draw(7, rng), ConfigError);
  EXPECT_NO_THROW(b.draw(6, rng));
}

TEST(ReplayBuffer, EvictedEntriesNeverDrawnExhaustive) {
  // Every fill level of a 10-slot buffer and every draw size.
  for (int inserted = 1; inserted <= 30; ++inserted) {
    ReplayBuffer b(2, 1, 10);
    for (int k = 0; k < inserted; ++k) insert_range(b, k, 1);
    const int live = std::min(inserted, 10);
    ASSERT_EQ(b.size(), static_cast<std::size_t>(live));
    const int oldest = inserted - live;
    for (int i = 0; i < live; ++i) {
      EXPECT_EQ(b.at(i).x[0], oldest + i);
      EXPECT_EQ(b.id_at(i), static_cast<std::uint64_t>(oldest + i));
    }
    Rng rng(static_cast<std::uint64_t>(inserted));
    for (int n = 1; n <= live; ++n)
      for (int rep = 0; rep < 20; ++rep) {
        const BufferDraw d = b.sample(n, rng);
        std::set<std::uint64_t> seen;
        for (int j = 0; j < n; ++j) {
          EXPECT_GE(d.xs(0, j), oldest);
          EXPECT_EQ(d.ids[j], static_cast<std::uint64_t>(d.xs(0, j)));
          seen.insert(d.ids[j]);
        }
        EXPECT_EQ(seen.size(), static_cast<std::size_t>(n));
      }
  }
}

TEST(ReplayBuffer, SingleDrawFrequenciesMatchWeights) {
  const std::vector<double> w{1, 2, 3, 4, 10};
  Eigen::VectorXd lw(5);
  for (int i = 0; i < 5; ++i) lw[i] = std::log(w[i]);
  ReplayBuffer b(2, 1, 5);
  insert_range(b, 0, 5, &lw);
  Rng rng(2024);
  std::vector<double> counts(5, 0.0);
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) counts[b.draw(1, rng)[0]] += 1.0;
  double chi2 = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double expected = trials * w[i] / 20.0;
    chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
  }
  EXPECT_LT(chi2, chi_square_critical(4));
}

TEST(ReplayBuffer, OrderedPairsFollowSequentialRemoval) {
  const std::vector<double> w{1, 2, 3, 4, 10};
  Eigen::VectorXd lw(5);
  for (int i = 0; i < 5; ++i) lw[i] = std::log(w[i]);
  ReplayBuffer b(2, 1, 5);
  insert_range(b, 0, 5, &lw);
  Rng rng(7);
  std::map<std::pair<std::size_t, std::size_t>, double> counts;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) {
    const auto d = b.draw(2, rng);
    counts[{d[0], d[1]}] += 1.0;
  }
  double chi2 = 0.0;
  int cells = 0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      if (i == j) continue;
      const double p = w[i] / 20.0 * w[j] / (20.0 - w[i]);
      const double expected = trials * p;
      const double c = counts.count({i, j}) ? counts[{i, j}] : 0.0;
      chi2 += (c - expected) * (c - expected) / expected;
      ++cells;
    }
  EXPECT_LT(chi2, chi_square_critical(cells - 1));
}

TEST(ReplayBuffer, NoCorrectionWhenThetaUnchanged) {
  const FlowModel flow = perturbed_flow(small_arch(), 3);
  Rng rng(3);
  const FlowSample s = flow.sample(20, rng);
  ReplayBuffer b(2, 10, 20);
  b.insert(s.xs, Eigen::VectorXd::LinSpaced(20, -1.0, 1.0), flow.log_prob(s.xs));
  std::vector<BufferEntry> before;
  for (std::size_t i = 0; i < b.size(); ++i) before.push_back(b.at(i));
  BufferDraw d = b.sample_and_correct(flow, 12, rng);
  for (Eigen::Index i = 0; i < d.log_w_correction.size(); ++i)
    EXPECT_EQ(d.log_w_correction[i], 0.0);
  b.commit(d);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(b.at(i).log_w, before[i].log_w);
    EXPECT_EQ(b.at(i).log_q_old, before[i].log_q_old);
  }
}

TEST(ReplayBuffer, SampledLogQAgreesWithDensityPass) {
  // Entries stored with the log q of the sampling pass get corrections at
  // rounding level only.
  const FlowModel flow = perturbed_flow(small_arch(), 10);
  Rng rng(8);
  const FlowSample s = flow.sample(50, rng);
  ReplayBuffer b(2, 50, 50);
  b.insert(s.xs, Eigen::VectorXd::Zero(50), s.log_q);
  const BufferDraw d = b.sample_and_correct(flow, 50, rng);
  EXPECT_LT(d.log_w_correction.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ReplayBuffer, CorrectionIsTargetRatio) {
  // For g = p^2/q: log g_new - log g_old = log q_old - log q_new.
  const FlowModel old_flow = perturbed_flow(small_arch(), 4);
  const FlowModel new_flow = perturbed_flow(small_arch(), 5);
  const DiagonalGaussian p(Eigen::Vector2d(0.5, -0.3), Eigen::Vector2d(1.2, 0.8));
  Rng rng(4);
  const FlowSample s = old_flow.sample(30, rng);
  ReplayBuffer b(2, 30, 30);
  b.insert(s.xs, Eigen::VectorXd::Zero(30), s.log_q);
  const BufferDraw d = b.sample_and_correct(new_flow, 30, rng);
  const Eigen::VectorXd lp = p.log_prob(d.xs);
  const Eigen::VectorXd g_old = 2.0 * lp - old_flow.log_prob(d.xs);
  const Eigen::VectorXd g_new = 2.0 * lp - new_flow.log_prob(d.xs);
  for (int i = 0; i < 30; ++i) {
    EXPECT_NEAR(g_new[i] - g_old[i], d.log_w_correction[i], 1e-12);
    EXPECT_NEAR(d.log_w_correction[i], d.log_q_old[i] - d.log_q_new[i], 0.0);
  }
}

TEST(ReplayBuffer, CommitUpdatesOnlyDrawnEntries) {
  const FlowModel old_flow = perturbed_flow(small_arch(), 6);
  const FlowModel new_flow = perturbed_flow(small_arch(), 7);
  Rng rng(5);
  const FlowSample s = old_flow.sample(10, rng);
  ReplayBuffer b(2, 5, 10);
  b.insert(s.xs, Eigen::VectorXd::Zero(10), s.log_q);
  const BufferDraw d = b.sample_and_correct(new_flow, 4, rng);
  b.commit(d);
  std::set<std::uint64_t> drawn(d.ids.begin(), d.ids.end());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto it = std::find(d.ids.begin(), d.ids.end(), b.id_at(i));
    if (it == d.ids.end()) {
      EXPECT_EQ(b.at(i).log_w, 0.0);
      EXPECT_EQ(b.at(i).log_q_old, s.log_q[static_cast<Eigen::Index>(i)]);
    } else {
      const auto j = static_cast<Eigen::Index>(it - d.ids.begin());
      EXPECT_EQ(b.at(i).log_w, d.log_w_correction[j]);
      EXPECT_EQ(b.at(i).log_q_old, d.log_q_new[j]);
    }
  }
}

TEST(ReplayBuffer, CorrectionIdempotent) {
  const FlowModel old_flow = perturbed_flow(small_arch(), 8);
  const FlowModel new_flow = perturbed_flow(small_arch(), 9);
  Rng rng(6);
  const FlowSample s = old_flow.sample(16, rng);
  ReplayBuffer b(2, 16, 16);
  b.insert(s.xs, Eigen::VectorXd::Zero(16), old_flow.log_prob(s.xs));
  b.commit(b.sample_and_correct(new_flow, 16, rng));
  const BufferDraw again = b.sample_and_correct(new_flow, 16, rng);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(again.log_w_correction[i], 0.0);
}

TEST(ReplayBuffer, CommitSkipsEvictedAndNonFinite) {
  ReplayBuffer b(2, 1, 4);
  insert_range(b, 0, 4);
  Rng rng(7);
  BufferDraw d = b.sample(4, rng);
  d.correct(Eigen::VectorXd::Constant(4, -2.0), 2.0);
  d.log_w_correction[1] = std::nan("");
  const std::uint64_t nan_id = d.ids[1];
  insert_range(b, 4, 2);
  b.commit(d);
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.id_at(i) >= 4 || b.id_at(i) == nan_id)
      EXPECT_EQ(b.at(i).log_w, 0.0);
    else
      EXPECT_DOUBLE_EQ(b.at(i).log_w, 1.0);
  }
}

TEST(BufferDraw, GenericAlphaCorrection) {
  BufferDraw d;
  d.log_q_old = Eigen::Vector2d(-1.0, -3.0);
  d.correct(Eigen::Vector2d(-2.0, -2.5), 3.0);
  EXPECT_DOUBLE_EQ(d.log_w_correction[0], -2.0 * (-2.0 + 1.0));
  EXPECT_DOUBLE_EQ(d.log_w_correction[1], -2.0 * (-2.5 + 3.0));
}

}  // namespace
}  // namespace fab
