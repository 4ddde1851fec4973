#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "insegan/eval.hpp"

#include <algorithm>
#include <random>

using namespace insegan;

namespace {

// Per-GT best-overlap IoU by direct pixel counting.
double miou_oracle(const LabelImage& pred, const LabelImage& gt) {
  double sum = 0;
  int segments = 0;
  for (int g = 1; g <= gt.maxCoeff(); ++g) {
    long gt_area = 0;
    for (Index i = 0; i < gt.size(); ++i) gt_area += gt.data()[i] == g;
    if (gt_area == 0) continue;
    ++segments;
    long best_shared = 0;
    double best_iou = 0;
    for (int p = 1; p <= std::max(pred.maxCoeff(), 1); ++p) {
      long shared = 0, pred_area = 0;
      for (Index i = 0; i < gt.size(); ++i) {
        shared += gt.data()[i] == g && pred.data()[i] == p;
        pred_area += pred.data()[i] == p;
      }
      const double iou = shared > 0 ? double(shared) / double(gt_area + pred_area - shared) : 0.0;
      if (shared > best_shared || (shared == best_shared && iou > best_iou)) {
        best_shared = shared;
        best_iou = iou;
      }
    }
    sum += best_iou;
  }
  return sum / segments;
}

LabelImage random_labels(std::mt19937_64& rng, Index size, int labels) {
  std::uniform_int_distribution<int> u(0, labels);
  LabelImage m(size, size);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

LabelImage relabel(const LabelImage& m, const std::vector<int>& map) {
  LabelImage out = m;
  for (Index i = 0; i < m.size(); ++i) out.data()[i] = map[m.data()[i]];
  return out;
}

DepthMap two_squares(float floor, float h1, float h2) {
  DepthMap d = DepthMap::Constant(64, 64, floor);
  d.block(5, 5, 12, 12) = h1;
  d.block(40, 38, 14, 10) = h2;
  return d;
}

LabelImage two_squares_gt() {
  LabelImage g = LabelImage::Zero(64, 64);
  g.block(5, 5, 12, 12) = 1;
  g.block(40, 38, 14, 10) = 2;
  return g;
}

}  // namespace

TEST_CASE("miou: examples from the definition") {
  const LabelImage gt = two_squares_gt();
  CHECK(miou(gt, gt) == 1.0);
  CHECK(miou(LabelImage::Zero(64, 64), gt) == 0.0);

  LabelImage disjoint = LabelImage::Zero(64, 64);
  disjoint.block(25, 25, 5, 5) = 1;
  CHECK(miou(disjoint, gt) == 0.0);

  // 10-pixel GT segment, 10-pixel prediction sharing 5 pixels
  LabelImage g1 = LabelImage::Zero(4, 10), p1 = LabelImage::Zero(4, 10);
  g1.row(0).setConstant(1);
  p1.row(0).head(5).setConstant(1);
  p1.row(1).head(5).setConstant(1);
  CHECK(miou(p1, g1) == 1.0 / 3.0);

  CHECK_THROWS_AS(miou(LabelImage::Zero(4, 4), gt), std::invalid_argument);
  CHECK_THROWS_AS(miou(gt, LabelImage::Zero(64, 64)), std::invalid_argument);
}

TEST_CASE("miou: reuse of a predicted segment and empty GT segments") {
  LabelImage gt = LabelImage::Zero(2, 4);
  gt << 1, 1, 2, 2, 1, 1, 2, 2;
  const LabelImage merged = (gt > 0).select(LabelImage::Ones(2, 4), 0);
  CHECK(miou(merged, gt) == doctest::Approx(0.5));
  CHECK(miou_bijective(merged, masks_from_labels(gt, 2)) == doctest::Approx(0.25));
  // a GT instance with no pixels is skipped
  CHECK(miou(gt, masks_from_labels(gt, 3)) == 1.0);
}

TEST_CASE("miou: random masks against the counting oracle, permutation invariance, range") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + trial % 5;
    const LabelImage gt = random_labels(rng, 12, k);
    const LabelImage pred = random_labels(rng, 12, 1 + (trial * 7) % 6);
    const double v = miou(pred, gt);
    CHECK(v == doctest::Approx(miou_oracle(pred, gt)).epsilon(1e-12));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);

    std::vector<int> map(8);
    std::iota(map.begin(), map.end(), 0);
    std::shuffle(map.begin() + 1, map.end(), rng);
    CHECK(miou(relabel(pred, map), gt) == v);
    auto masks = masks_from_labels(gt, k);
    std::shuffle(masks.begin(), masks.end(), rng);
    CHECK(miou(pred, masks) == doctest::Approx(v).epsilon(1e-12));
    CHECK(miou_bijective(pred, masks) >= 0.0);
    CHECK(miou_bijective(pred, masks) <= 1.0);
  }
  // exactly 1 iff every GT segment equals some predicted segment
  const LabelImage gt = random_labels(rng, 10, 3);
  CHECK(miou(relabel(gt, {0, 3, 1, 2}), gt) == 1.0);
  LabelImage off = gt;
  off(0, 0) = off(0, 0) == 1 ? 2 : 1;
  CHECK(miou(off, gt) < 1.0);
}

TEST_CASE("kmeans_segment: separable scene, empty scene, determinism, fallback") {
  const DepthMap d = two_squares(-1.0f, 2.0f, 1.0f);
  std::mt19937_64 rng(2);
  const LabelImage seg = kmeans_segment(d, 2, -1.0f, rng);
  CHECK(miou(seg, two_squares_gt()) == 1.0);

  std::mt19937_64 a(3), b(3);
  CHECK((kmeans_segment(d, 2, -1.0f, a) == kmeans_segment(d, 2, -1.0f, b)).all());

  CHECK((kmeans_segment(DepthMap::Constant(64, 64, -1.0f), 3, -1.0f, rng) == 0).all());

  DepthMap tiny = DepthMap::Constant(8, 8, 0.0f);
  tiny(3, 3) = 1.0f;
  const LabelImage fallback = kmeans_segment(tiny, 3, 0.0f, rng);
  CHECK(fallback(3, 3) == 1);
  CHECK(fallback.sum() == 1);
  CHECK_THROWS_AS(kmeans_segment(d, 0, -1.0f, rng), std::invalid_argument);
}

TEST_CASE("kmeans: k-means++ recovers well separated clusters") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.1);
  Eigen::MatrixX3d pts(90, 3);
  for (Index i = 0; i < 90; ++i) pts.row(i) << 10.0 * (i % 3) + noise(rng), noise(rng), noise(rng);
  const auto labels = kmeans(pts, 3, rng);
  for (Index i = 3; i < 90; ++i) CHECK(labels[i] == labels[i % 3]);
  CHECK(labels[0] != labels[1]);
  CHECK(labels[1] != labels[2]);
  CHECK(labels[0] != labels[2]);
}

TEST_CASE("spectral_segment: far blobs, single cluster, determinism") {
  const DepthMap d = two_squares(-1.0f, 1.5f, 1.5f);
  const LabelImage seg = spectral_segment(d, 2, -1.0f);
  CHECK(miou(seg, two_squares_gt()) == 1.0);
  CHECK((spectral_segment(d, 2, -1.0f) == seg).all());
  const LabelImage one = spectral_segment(d, 1, -1.0f);
  CHECK(((one == 1) == (two_squares_gt() > 0)).all());
  CHECK((spectral_segment(DepthMap::Constant(64, 64, -1.0f), 2, -1.0f) == 0).all());

  // subsampled path still labels every foreground pixel
  BaselineOptions capped;
  capped.max_points = 50;
  const LabelImage sub = spectral_segment(d, 2, -1.0f, capped);
  CHECK(((sub > 0) == (two_squares_gt() > 0)).all());
  CHECK(miou(sub, two_squares_gt()) == 1.0);
}

TEST_CASE("EvalReport: mean, range and structured output") {
  EvalReport r;
  r.add("a", 0.25);
  r.add("b", 0.75);
  r.add("c", 0.5);
  CHECK(r.mean() == 0.5);
  r.per_class["box"] = r.mean();
  const auto j = r.to_json();
  CHECK(j.at("scenes").size() == 3);
  CHECK(j.at("mean") == 0.5);
  CHECK(r.summary_table().find("box") != std::string::npos);
  CHECK_THROWS_AS(r.add("d", 1.5), std::invalid_argument);
}

TEST_CASE("lift_foreground: automatic and fixed depth scale") {
  DepthMap d = DepthMap::Constant(8, 16, -1.0f);
  d(2, 3) = 1.0f;
  d(5, 7) = 0.0f;
  const auto automatic = lift_foreground(d, -1.0f, 0.05f);
  REQUIRE(automatic.points.rows() == 2);
  CHECK(automatic.points(0, 0) == 3);
  CHECK(automatic.points(0, 1) == 2);
  CHECK(automatic.points(0, 2) == doctest::Approx(16.0));
  CHECK(automatic.points(1, 2) == doctest::Approx(8.0));
  const auto fixed = lift_foreground(d, -1.0f, 0.05f, 3.0);
  CHECK(fixed.points(0, 2) == doctest::Approx(6.0));
  CHECK(fixed.points(1, 2) == doctest::Approx(3.0));
}
