#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"
#include "twinseg/metrics.hpp"

using namespace twinseg;
using testing_support::rect_mask;
using testing_support::to_mask;

TEST(Metrics, IouAndFMatchEnumeration) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 300; ++i) {
    const int w = 1 + static_cast<int>(rng() % 40), h = 1 + static_cast<int>(rng() % 40);
    const auto a = oracle::random_raster(rng, w, h);
    const auto b = rng() % 3 == 0 ? oracle::shifted(a, static_cast<int>(rng() % 5) - 2, static_cast<int>(rng() % 5) - 2)
                                  : oracle::random_raster(rng, w, h);
    const int tol = static_cast<int>(rng() % 4);
    ASSERT_NEAR(mask_iou(to_mask(a), to_mask(b)), oracle::iou(a, b), 1e-12);
    ASSERT_NEAR(f_measure(to_mask(a), to_mask(b), tol), oracle::f_measure(a, b, tol), 1e-12);
  }
}

TEST(Metrics, BoundaryMatchesDefinition) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const int w = 1 + static_cast<int>(rng() % 20), h = 1 + static_cast<int>(rng() % 20);
    const auto r = oracle::random_raster(rng, w, h);
    const Bitmap b = mask_boundary(to_mask(r));
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (b.at(x, y)) pts.push_back({x, y});
    ASSERT_EQ(pts, oracle::boundary(r));
  }
}

TEST(Metrics, JIsMeanOfFrames) {
  const Mask full = rect_mask(4, 4, 0, 0, 3, 3), half = rect_mask(4, 4, 0, 0, 1, 3), none = rect_mask(4, 4, 0, 0, 0, 0);
  const Mask other = rect_mask(4, 4, 3, 3, 3, 3);
  const std::vector<Mask> pred = {full, half, none};
  const std::vector<Mask> gt = {full, full, other};
  EXPECT_DOUBLE_EQ(j_measure(pred, gt), 0.5);
  EXPECT_THROW(j_measure(pred, std::vector<Mask>{full}), ValidationError);
  EXPECT_THROW(j_measure(std::vector<Mask>{}, std::vector<Mask>{}), ValidationError);
}

TEST(Metrics, FToleratesOnePixelShift) {
  const Mask gt = rect_mask(20, 20, 4, 4, 11, 11);
  const Mask moved = rect_mask(20, 20, 5, 4, 12, 11);
  EXPECT_DOUBLE_EQ(f_measure(moved, gt, 1), 1.0);
  EXPECT_LT(f_measure(moved, gt, 0), 1.0);
  EXPECT_DOUBLE_EQ(f_measure(Mask::empty(20, 20), Mask::empty(20, 20), 1), 1.0);
  EXPECT_DOUBLE_EQ(f_measure(Mask::empty(20, 20), gt, 1), 0.0);
  EXPECT_THROW(f_measure(gt, gt, -1), ValidationError);
}

TEST(Metrics, DiagonalTolerance) {
  EXPECT_EQ(diagonal_tolerance(64, 48), 1);    // 0.008 * 80 = 0.64
  EXPECT_EQ(diagonal_tolerance(854, 480), 8);  // 0.008 * 979.6 = 7.84
  EXPECT_EQ(diagonal_tolerance(300, 400), 4);  // 0.008 * 500 = 4 exactly
}

TEST(Metrics, SequenceEval) {
  const std::vector<Mask> gt = {rect_mask(10, 10, 2, 2, 5, 5), rect_mask(10, 10, 3, 3, 6, 6)};
  const auto same = evaluate_sequence(gt, gt);
  EXPECT_EQ(same.j, 1.0);
  EXPECT_EQ(same.f, 1.0);
  EXPECT_EQ(same.jf, 1.0);
  const std::vector<Mask> pred = {gt[0], Mask::empty(10, 10)};
  const auto half = evaluate_sequence(pred, gt);
  EXPECT_EQ(half.frame_iou, (std::vector<double>{1.0, 0.0}));
  EXPECT_DOUBLE_EQ(half.j, 0.5);
  EXPECT_DOUBLE_EQ(half.f, 0.5);
}

TEST(Metrics, GiouAndCiouExamples) {
  // IoUs 0.2 and 0.8 average to 0.5.
  const std::vector<SampleCounts> s = {{2, 10, 0.2}, {8, 10, 0.8}};
  const auto e = dataset_eval(std::span<const SampleCounts>(s));
  EXPECT_DOUBLE_EQ(e.giou, 0.5);
  EXPECT_DOUBLE_EQ(e.ciou, 0.5);

  // Pooling weights large samples: 1/1 and 0/9 give gIoU 0.5, cIoU 0.1.
  const std::vector<std::pair<Mask, Mask>> pairs = {
      {rect_mask(3, 3, 0, 0, 0, 0), rect_mask(3, 3, 0, 0, 0, 0)},
      {Mask::empty(3, 3), rect_mask(3, 3, 0, 0, 2, 2)}};
  const auto p = dataset_eval(std::span<const std::pair<Mask, Mask>>(pairs));
  EXPECT_DOUBLE_EQ(p.giou, 0.5);
  EXPECT_DOUBLE_EQ(p.ciou, 0.1);
  EXPECT_THROW(dataset_eval(std::span<const SampleCounts>()), ValidationError);
}

TEST(Metrics, DatasetMatchesEnumeration) {
  std::mt19937_64 rng(33);
  std::vector<std::pair<Mask, Mask>> pairs;
  double iou_sum = 0.0;
  long inter = 0, uni = 0;
  for (int i = 0; i < 200; ++i) {
    const int w = 1 + static_cast<int>(rng() % 30), h = 1 + static_cast<int>(rng() % 30);
    const auto a = oracle::random_raster(rng, w, h), b = oracle::random_raster(rng, w, h);
    pairs.push_back({to_mask(a), to_mask(b)});
    iou_sum += oracle::iou(a, b);
    inter += oracle::inter(a, b);
    uni += oracle::uni(a, b);
  }
  const auto e = dataset_eval(std::span<const std::pair<Mask, Mask>>(pairs));
  EXPECT_NEAR(e.giou, iou_sum / 200.0, 1e-12);
  EXPECT_NEAR(e.ciou, double(inter) / double(uni), 1e-12);
  EXPECT_EQ(e.n_samples, 200u);
}

TEST(Metrics, ShapeMismatchRejected) {
  EXPECT_THROW(f_measure(rect_mask(4, 4, 0, 0, 1, 1), rect_mask(5, 4, 0, 0, 1, 1)), ValidationError);
  EXPECT_THROW(sample_counts(rect_mask(4, 4, 0, 0, 1, 1), rect_mask(4, 5, 0, 0, 1, 1)), ValidationError);
}
