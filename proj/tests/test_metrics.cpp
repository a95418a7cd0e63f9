#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ssc/metrics.hpp"
#include "ssc/voxel.hpp"

using namespace ssc;

namespace {

struct Volumes {
  TensorU8 pred, gt, vis;
};

Volumes random_volumes(std::mt19937_64& rng, std::size_t n, std::size_t classes) {
  Volumes v{TensorU8({n, n, n}), TensorU8({n, n, n}), TensorU8({n, n, n})};
  for (std::size_t i = 0; i < v.gt.size(); ++i) {
    v.vis[i] = static_cast<std::uint8_t>(rng() % 4);
    v.gt[i] = rng() % 7 == 0 ? kUnlabeled : static_cast<std::uint8_t>(rng() % (classes + 1));
    // correlated prediction so IoUs are not all near zero
    v.pred[i] = rng() % 3 && v.gt[i] != kUnlabeled ? v.gt[i] : static_cast<std::uint8_t>(rng() % (classes + 1));
  }
  return v;
}

double ratio(std::size_t num, std::size_t den) { return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den); }

}  // namespace

TEST(Metrics, MatchConfusionOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 30; ++t) {
    const std::size_t N = 1 + rng() % 6;
    const auto v = random_volumes(rng, 8, N);
    std::size_t stp = 0, sfp = 0, sfn = 0;
    std::vector<std::size_t> tp(N + 1), fp(N + 1), fn(N + 1);
    for (std::size_t i = 0; i < v.gt.size(); ++i) {
      if (v.gt[i] == kUnlabeled) continue;
      const auto st = static_cast<VoxelState>(v.vis[i]);
      if (st == VoxelState::Occluded) {
        const bool g = v.gt[i] != 0, p = v.pred[i] != 0;
        stp += g && p;
        sfp += !g && p;
        sfn += g && !p;
      }
      if (st == VoxelState::OutsideFrustum) continue;
      for (std::size_t k = 1; k <= N; ++k) {
        const bool g = v.gt[i] == k, p = v.pred[i] == k;
        tp[k] += g && p;
        fp[k] += !g && p;
        fn[k] += g && !p;
      }
    }
    const auto sc = sc_metrics(v.pred, v.gt, v.vis);
    EXPECT_EQ(sc.tp, stp);
    EXPECT_EQ(sc.fp, sfp);
    EXPECT_EQ(sc.fn, sfn);
    EXPECT_DOUBLE_EQ(sc.precision, ratio(stp, stp + sfp));
    EXPECT_DOUBLE_EQ(sc.recall, ratio(stp, stp + sfn));
    EXPECT_DOUBLE_EQ(sc.iou, ratio(stp, stp + sfp + sfn));

    const auto ssc = ssc_metrics(v.pred, v.gt, v.vis, N);
    double sum = 0;
    std::size_t present = 0;
    ASSERT_EQ(ssc.class_iou.size(), N);
    for (std::size_t k = 1; k <= N; ++k) {
      EXPECT_EQ(ssc.tp[k - 1], tp[k]);
      EXPECT_EQ(ssc.fp[k - 1], fp[k]);
      EXPECT_EQ(ssc.fn[k - 1], fn[k]);
      const std::size_t den = tp[k] + fp[k] + fn[k];
      if (den == 0) {
        EXPECT_FALSE(ssc.class_iou[k - 1].has_value());
        continue;
      }
      ASSERT_TRUE(ssc.class_iou[k - 1].has_value());
      EXPECT_DOUBLE_EQ(*ssc.class_iou[k - 1], ratio(tp[k], den));
      sum += ratio(tp[k], den);
      ++present;
    }
    EXPECT_NEAR(ssc.miou, present ? sum / present : 1.0, 1e-15);
  }
}

TEST(Metrics, IouPrecisionRecallIdentity) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto v = random_volumes(rng, 8, 3);
    const auto sc = sc_metrics(v.pred, v.gt, v.vis);
    ASSERT_GT(sc.tp, 0u);
    EXPECT_NEAR(1.0 / sc.iou, 1.0 / sc.precision + 1.0 / sc.recall - 1.0, 1e-12);
  }
}

TEST(Metrics, EmptyVolumesScoreOne) {
  TensorU8 z({2, 2, 2}, 0), vis({2, 2, 2}, static_cast<std::uint8_t>(VoxelState::Occluded));
  const auto sc = sc_metrics(z, z, vis);
  EXPECT_EQ(sc.iou, 1.0);
  EXPECT_EQ(sc.precision, 1.0);
  const auto ssc = ssc_metrics(z, z, vis, 3);
  EXPECT_EQ(ssc.miou, 1.0);
  for (const auto& c : ssc.class_iou) EXPECT_FALSE(c.has_value());
}

TEST(Metrics, PerfectPredictionScoresOne) {
  std::mt19937_64 rng(3);
  auto v = random_volumes(rng, 8, 4);
  for (std::size_t i = 0; i < v.gt.size(); ++i)
    if (v.gt[i] != kUnlabeled) v.pred[i] = v.gt[i];
  EXPECT_EQ(sc_metrics(v.pred, v.gt, v.vis).iou, 1.0);
  EXPECT_EQ(ssc_metrics(v.pred, v.gt, v.vis, 4).miou, 1.0);
}

TEST(Metrics, InvariantUnderVoxelPermutation) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto v = random_volumes(rng, 8, 5);
    std::vector<std::size_t> perm(v.gt.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Volumes p{TensorU8(v.gt.shape()), TensorU8(v.gt.shape()), TensorU8(v.gt.shape())};
    for (std::size_t i = 0; i < perm.size(); ++i) {
      p.pred[i] = v.pred[perm[i]];
      p.gt[i] = v.gt[perm[i]];
      p.vis[i] = v.vis[perm[i]];
    }
    const auto a = ssc_metrics(v.pred, v.gt, v.vis, 5), b = ssc_metrics(p.pred, p.gt, p.vis, 5);
    EXPECT_EQ(a.tp, b.tp);
    EXPECT_EQ(a.fp, b.fp);
    EXPECT_EQ(a.fn, b.fn);
    EXPECT_EQ(a.miou, b.miou);
    EXPECT_EQ(sc_metrics(v.pred, v.gt, v.vis).iou, sc_metrics(p.pred, p.gt, p.vis).iou);
  }
}

TEST(Metrics, AccumulatorSumsCounts) {
  std::mt19937_64 rng(5);
  const auto a = random_volumes(rng, 4, 3), b = random_volumes(rng, 4, 3);
  MetricsAccumulator acc(3);
  acc.add(a.pred, a.gt, a.vis);
  acc.add(b.pred, b.gt, b.vis);
  // the same counts come from one volume holding both
  Volumes cat{TensorU8({8, 4, 4}), TensorU8({8, 4, 4}), TensorU8({8, 4, 4})};
  for (std::size_t i = 0; i < 64; ++i) {
    cat.pred[i] = a.pred[i], cat.gt[i] = a.gt[i], cat.vis[i] = a.vis[i];
    cat.pred[64 + i] = b.pred[i], cat.gt[64 + i] = b.gt[i], cat.vis[64 + i] = b.vis[i];
  }
  const auto whole = ssc_metrics(cat.pred, cat.gt, cat.vis, 3);
  EXPECT_EQ(acc.ssc().tp, whole.tp);
  EXPECT_EQ(acc.ssc().miou, whole.miou);
  EXPECT_EQ(acc.sc().iou, sc_metrics(cat.pred, cat.gt, cat.vis).iou);
  std::size_t occ = 0, fr = 0;
  for (std::size_t i = 0; i < 128; ++i) {
    if (cat.gt[i] == kUnlabeled) continue;
    occ += cat.vis[i] == static_cast<std::uint8_t>(VoxelState::Occluded);
    fr += cat.vis[i] != static_cast<std::uint8_t>(VoxelState::OutsideFrustum);
  }
  EXPECT_EQ(acc.occluded_voxels(), occ);
  EXPECT_EQ(acc.frustum_voxels(), fr);
}

TEST(Metrics, ShapeMismatchRejected) {
  TensorU8 a({2, 2, 2}), b({2, 2, 3});
  EXPECT_THROW(sc_metrics(a, b, a), std::invalid_argument);
}

TEST(Report, CsvRoundTripIsIdempotent) {
  std::mt19937_64 rng(6);
  const auto v = random_volumes(rng, 8, 6);
  MetricsAccumulator acc(6);
  TensorU8 pred = v.pred;
  for (auto& p : pred.data())
    if (p == 6) p = 0;  // class 6 may now be absent from pred
  acc.add(pred, v.gt, v.vis);
  const auto r = MetricsReport::from(acc);
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.rfind("class,iou\n", 0), 0u);
  const auto back = MetricsReport::parse_csv(csv);
  EXPECT_EQ(back.to_csv(), csv);
  EXPECT_DOUBLE_EQ(back.ssc_miou, r.ssc_miou);
  EXPECT_DOUBLE_EQ(back.sc_iou, r.sc_iou);
  EXPECT_EQ(back.class_iou.size(), r.class_iou.size());

  MetricsAccumulator empty(2);
  const std::string nan_csv = MetricsReport::from(empty).to_csv();
  EXPECT_NE(nan_csv.find("nan"), std::string::npos);
  EXPECT_EQ(MetricsReport::parse_csv(nan_csv).to_csv(), nan_csv);
  EXPECT_THROW(MetricsReport::parse_csv("garbage"), std::invalid_argument);
}

TEST(Report, TextHasHeadlineNumbers) {
  MetricsAccumulator acc(2);
  const auto text = MetricsReport::from(acc).to_text();
  EXPECT_NE(text.find("SC-IoU="), std::string::npos);
  EXPECT_NE(text.find("SSC-mIoU="), std::string::npos);
}
