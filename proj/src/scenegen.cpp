#include "insegan/scenegen.hpp"

#include "insegan/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace insegan::scenegen {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "scene files are little-endian");

namespace {

constexpr int kPolygonSides = 24;
constexpr int kMaxPlacementAttempts = 10000;

ConvexPiece box_piece(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  ConvexPiece p;
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::Vector3d n = Eigen::Vector3d::Zero();
    n[axis] = 1;
    p.normals.push_back(n);
    p.offsets.push_back(hi[axis]);
    p.normals.push_back(-n);
    p.offsets.push_back(-lo[axis]);
  }
  return p;
}

ConvexPiece polygon_piece(double radius, double height, bool apex) {
  ConvexPiece p;
  const double apothem = radius * std::cos(std::numbers::pi / kPolygonSides);
  for (int k = 0; k < kPolygonSides; ++k) {
    const double a = 2 * std::numbers::pi * k / kPolygonSides;
    if (apex) {
      // side plane through the base edge and the apex (0, 0, h/2)
      Eigen::Vector3d n(height * std::cos(a), height * std::sin(a), apothem);
      p.normals.push_back(n);
      p.offsets.push_back(apothem * height / 2);
    } else {
      p.normals.emplace_back(std::cos(a), std::sin(a), 0);
      p.offsets.push_back(apothem);
    }
  }
  p.normals.emplace_back(0, 0, -1);
  p.offsets.push_back(height / 2);
  if (!apex) {
    p.normals.emplace_back(0, 0, 1);
    p.offsets.push_back(height / 2);
  }
  return p;
}

// Vertical extent of a convex piece along the ray through (x, y).
bool clip_ray(const ConvexPiece& piece, const std::vector<Eigen::Vector3d>& world_normals, double x, double y,
              double& lo, double& hi) {
  lo = -std::numeric_limits<double>::infinity();
  hi = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < world_normals.size(); ++i) {
    const Eigen::Vector3d& m = world_normals[i];
    const double rest = piece.offsets[i] - m.x() * x - m.y() * y;
    if (std::abs(m.z()) < 1e-12) {
      if (rest < 0) return false;
      continue;
    }
    const double t = rest / m.z();
    if (m.z() > 0) {
      hi = std::min(hi, t);
    } else {
      lo = std::max(lo, t);
    }
    if (lo >= hi) return false;
  }
  return true;
}

// Oriented top and bottom surfaces of one instance relative to its centre,
// over the pixel window it can touch.
struct Profile {
  Index row0 = 0, col0 = 0;
  Image<double> bottom, top;
  Image<std::uint8_t> covered;
};

Profile render_profile(const std::vector<ConvexPiece>& pieces, double radius, const Placement& place,
                       double pixel) {
  const Eigen::Matrix3d R = geometry::axis_angle_to_rotation<double>(place.omega);
  std::vector<std::vector<Eigen::Vector3d>> normals(pieces.size());
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    for (const auto& n : pieces[k].normals) normals[k].push_back(R * n);
  }
  Profile p;
  const auto first = [&](double centre) {
    return std::clamp<Index>(static_cast<Index>(std::floor((centre - radius) / pixel)), 0, kNativeSize);
  };
  const auto last = [&](double centre) {
    return std::clamp<Index>(static_cast<Index>(std::ceil((centre + radius) / pixel)), 0, kNativeSize);
  };
  p.row0 = first(place.y);
  p.col0 = first(place.x);
  const Index rows = last(place.y) - p.row0, cols = last(place.x) - p.col0;
  p.bottom = Image<double>::Zero(rows, cols);
  p.top = Image<double>::Zero(rows, cols);
  p.covered = Image<std::uint8_t>::Zero(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const double y = (static_cast<double>(p.row0 + r) + 0.5) * pixel - place.y;
    for (Index c = 0; c < cols; ++c) {
      const double x = (static_cast<double>(p.col0 + c) + 0.5) * pixel - place.x;
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t k = 0; k < pieces.size(); ++k) {
        double a, b;
        if (!clip_ray(pieces[k], normals[k], x, y, a, b)) continue;
        lo = std::min(lo, a);
        hi = std::max(hi, b);
      }
      if (hi - lo > 1e-9) {
        p.bottom(r, c) = lo;
        p.top(r, c) = hi;
        p.covered(r, c) = 1;
      }
    }
  }
  return p;
}

Placement random_placement(double bin, double radius, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(radius, bin - radius);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> normal;
  Placement p;
  p.x = pos(rng);
  p.y = pos(rng);
  Eigen::Vector3d axis;
  do {
    axis = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
  } while (axis.norm() < 1e-9);
  p.omega = axis.normalized() * angle(rng);
  return p;
}

template <typename T>
void write_array(const fs::path& path, const T* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

template <typename T>
void read_array(const fs::path& path, T* data, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(T))) {
    throw std::runtime_error("truncated scene file " + path.string());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("oversized scene file " + path.string());
}

fs::path scene_path(const fs::path& dir, Index index, const char* ext) {
  char name[32];
  std::snprintf(name, sizeof name, "scene_%06lld.%s", static_cast<long long>(index), ext);
  return dir / name;
}

std::string placement_name(PlacementMode mode) {
  return mode == PlacementMode::kNonOverlapping ? "non-overlapping" : "random";
}

json record_json(const SceneRecord& r) {
  return {{"index", r.index}, {"seed", r.seed}, {"split", r.split}, {"occluded", r.occluded}};
}

}  // namespace

ShapeKind parse_shape_kind(std::string_view name) {
  if (name == "box") return ShapeKind::kBox;
  if (name == "cylinder") return ShapeKind::kCylinder;
  if (name == "cone") return ShapeKind::kCone;
  if (name == "l-block") return ShapeKind::kLBlock;
  if (name == "t-block") return ShapeKind::kTBlock;
  throw std::invalid_argument("unknown shape '" + std::string(name) + "' (box, cylinder, cone, l-block, t-block)");
}

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kBox: return "box";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kCone: return "cone";
    case ShapeKind::kLBlock: return "l-block";
    case ShapeKind::kTBlock: return "t-block";
  }
  throw std::logic_error("bad ShapeKind");
}

ShapeSpec ShapeSpec::preset(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kBox: return {kind, {1.0, 0.6, 0.4}};
    case ShapeKind::kCylinder: return {kind, {0.6, 0.6, 1.0}};
    case ShapeKind::kCone: return {kind, {0.8, 0.8, 0.8}};
    case ShapeKind::kLBlock:
    case ShapeKind::kTBlock: return {kind, {0.9, 0.9, 0.3}};
  }
  throw std::logic_error("bad ShapeKind");
}

void ShapeSpec::validate() const {
  if (!(dims.array() > 0).all() || !dims.allFinite()) throw std::invalid_argument("shape dimensions must be positive");
  if ((kind == ShapeKind::kCylinder || kind == ShapeKind::kCone) && dims.x() != dims.y()) {
    throw std::invalid_argument("round shapes need equal x and y diameters");
  }
}

double ShapeSpec::diameter() const {
  if (kind == ShapeKind::kCylinder || kind == ShapeKind::kCone) {
    return 2 * std::hypot(dims.x() / 2, dims.z() / 2);
  }
  return dims.norm();
}

std::vector<ConvexPiece> shape_pieces(const ShapeSpec& shape) {
  shape.validate();
  const Eigen::Vector3d h = shape.dims / 2;
  const double w = shape.dims.x(), d = shape.dims.y();
  switch (shape.kind) {
    case ShapeKind::kBox: return {box_piece(-h, h)};
    case ShapeKind::kCylinder: return {polygon_piece(h.x(), shape.dims.z(), false)};
    case ShapeKind::kCone: return {polygon_piece(h.x(), shape.dims.z(), true)};
    case ShapeKind::kLBlock:
      return {box_piece({-h.x(), -h.y(), -h.z()}, {h.x(), -h.y() + d / 3, h.z()}),
              box_piece({-h.x(), -h.y(), -h.z()}, {-h.x() + w / 3, h.y(), h.z()})};
    case ShapeKind::kTBlock:
      return {box_piece({-h.x(), h.y() - d / 3, -h.z()}, {h.x(), h.y(), h.z()}),
              box_piece({-w / 6, -h.y(), -h.z()}, {w / 6, h.y(), h.z()})};
  }
  throw std::logic_error("bad ShapeKind");
}

std::vector<BinaryMask> Scene::gt_masks() const {
  return masks_from_labels(labels, static_cast<int>(poses.size()));
}

Scene drop_and_settle(const ShapeSpec& shape, int n, double bin_extent, std::mt19937_64& rng, PlacementMode mode,
                      const std::vector<Placement>& placements) {
  if (n < 1) throw std::invalid_argument("drop_and_settle: need at least one instance");
  shape.validate();
  const double diameter = shape.diameter();
  if (!(bin_extent > diameter)) {
    throw std::invalid_argument("drop_and_settle: shape diameter " + std::to_string(diameter) +
                                " does not fit a bin of extent " + std::to_string(bin_extent));
  }
  if (!placements.empty() && static_cast<int>(placements.size()) != n) {
    throw std::invalid_argument("drop_and_settle: need one placement per instance");
  }
  const auto pieces = shape_pieces(shape);
  const double radius = diameter / 2;
  const double pixel = bin_extent / static_cast<double>(kNativeSize);

  Scene scene;
  Image<double> height = Image<double>::Zero(kNativeSize, kNativeSize);
  scene.labels = LabelImage::Zero(kNativeSize, kNativeSize);
  std::vector<Eigen::Vector2d> centres;
  for (int k = 0; k < n; ++k) {
    Placement place;
    if (!placements.empty()) {
      place = placements[static_cast<std::size_t>(k)];
    } else {
      int attempts = 0;
      do {
        if (++attempts > kMaxPlacementAttempts) {
          throw std::runtime_error("drop_and_settle: cannot place " + std::to_string(n) +
                                   " non-overlapping instances in this bin");
        }
        place = random_placement(bin_extent, radius, rng);
      } while (mode == PlacementMode::kNonOverlapping &&
               std::any_of(centres.begin(), centres.end(), [&](const Eigen::Vector2d& c) {
                 return (c - Eigen::Vector2d(place.x, place.y)).norm() < diameter;
               }));
    }
    centres.emplace_back(place.x, place.y);
    const Profile p = render_profile(pieces, radius, place, pixel);

    // Lowest point of the instance, then the lift that makes it rest on
    // the highest surface beneath its footprint.
    double bottom_min = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < p.covered.size(); ++i) {
      if (p.covered.data()[i]) bottom_min = std::min(bottom_min, p.bottom.data()[i]);
    }
    if (!std::isfinite(bottom_min)) throw std::runtime_error("drop_and_settle: instance has an empty footprint");
    double lift = 0;
    for (Index r = 0; r < p.covered.rows(); ++r) {
      for (Index c = 0; c < p.covered.cols(); ++c) {
        if (p.covered(r, c)) lift = std::max(lift, height(p.row0 + r, p.col0 + c) - (p.bottom(r, c) - bottom_min));
      }
    }
    for (Index r = 0; r < p.covered.rows(); ++r) {
      for (Index c = 0; c < p.covered.cols(); ++c) {
        if (!p.covered(r, c)) continue;
        height(p.row0 + r, p.col0 + c) = lift + p.top(r, c) - bottom_min;
        scene.labels(p.row0 + r, p.col0 + c) = k + 1;
      }
    }
    Eigen::Matrix<float, 6, 1> pose;
    pose << place.omega.cast<float>(), static_cast<float>(place.x), static_cast<float>(place.y),
        static_cast<float>(lift - bottom_min);
    scene.poses.push_back(pose);
  }
  scene.depth = (height + kFloorDepth).cast<float>();
  scene.occluded.assign(static_cast<std::size_t>(n), true);
  for (Index i = 0; i < scene.labels.size(); ++i) {
    if (scene.labels.data()[i] > 0) scene.occluded[static_cast<std::size_t>(scene.labels.data()[i] - 1)] = false;
  }
  return scene;
}

DepthMap resize_bilinear(const DepthMap& image, Index rows, Index cols) {
  if (image.size() == 0 || rows <= 0 || cols <= 0) throw std::invalid_argument("resize_bilinear: empty size");
  DepthMap out(rows, cols);
  const double sy = static_cast<double>(image.rows()) / static_cast<double>(rows);
  const double sx = static_cast<double>(image.cols()) / static_cast<double>(cols);
  const auto source = [](Index dst, double scale, Index size, Index& i0, Index& i1, double& w) {
    const double s = std::max(0.0, (static_cast<double>(dst) + 0.5) * scale - 0.5);
    i0 = std::min<Index>(static_cast<Index>(s), size - 1);
    i1 = std::min<Index>(i0 + 1, size - 1);
    w = s - static_cast<double>(i0);
  };
  for (Index r = 0; r < rows; ++r) {
    Index r0, r1;
    double wy;
    source(r, sy, image.rows(), r0, r1, wy);
    for (Index c = 0; c < cols; ++c) {
      Index c0, c1;
      double wx;
      source(c, sx, image.cols(), c0, c1, wx);
      const double top = (1 - wx) * image(r0, c0) + wx * image(r0, c1);
      const double bottom = (1 - wx) * image(r1, c0) + wx * image(r1, c1);
      out(r, c) = static_cast<float>((1 - wy) * top + wy * bottom);
    }
  }
  return out;
}

LabelImage resize_labels(const LabelImage& labels, Index rows, Index cols) {
  if (labels.size() == 0 || rows <= 0 || cols <= 0) throw std::invalid_argument("resize_labels: empty size");
  LabelImage out(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Index sr = std::min(labels.rows() - 1, (2 * r + 1) * labels.rows() / (2 * rows));
    for (Index c = 0; c < cols; ++c) {
      out(r, c) = labels(sr, std::min(labels.cols() - 1, (2 * c + 1) * labels.cols() / (2 * cols)));
    }
  }
  return out;
}

DepthMap normalize_and_resize(const DepthMap& depth, const std::optional<Normalization>& norm) {
  if (!norm) throw std::invalid_argument("normalize_and_resize: normalization constants missing");
  if (!(norm->std > 0) || !std::isfinite(norm->mean)) {
    throw std::invalid_argument("normalize_and_resize: invalid normalization constants");
  }
  const DepthMap small = resize_bilinear(depth, kImageSize, kImageSize);
  return ((small.cast<double>() - norm->mean) / norm->std).cast<float>();
}

void DatasetConfig::validate() const {
  shape.validate();
  if (instances < 1) throw std::invalid_argument("dataset: instances must be >= 1");
  if (!(bin_extent() > shape.diameter())) throw std::invalid_argument("dataset: shape larger than bin");
  if (train_count < 1) throw std::invalid_argument("dataset: need at least one training scene");
  if (val_count < 0 || test_count < 0 || hard_test_count < 0 || hard_candidates < 0) {
    throw std::invalid_argument("dataset: negative split size");
  }
  if (hard_test_count > 0 && hard_candidates < hard_test_count) {
    throw std::invalid_argument("dataset: fewer hard-test candidates than requested hard-test scenes");
  }
}

void write_scene(const fs::path& dir, Index index, const Scene& scene) {
  write_array(scene_path(dir, index, "depth"), scene.depth.data(), static_cast<std::size_t>(scene.depth.size()));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(scene.labels.size()));
  for (Index i = 0; i < scene.labels.size(); ++i) {
    if (scene.labels.data()[i] < 0 || scene.labels.data()[i] > 255) throw std::invalid_argument("label exceeds 8 bits");
    mask[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(scene.labels.data()[i]);
  }
  write_array(scene_path(dir, index, "mask"), mask.data(), mask.size());
  std::vector<float> poses;
  for (const auto& p : scene.poses) poses.insert(poses.end(), p.data(), p.data() + 6);
  write_array(scene_path(dir, index, "pose"), poses.data(), poses.size());
}

Scene read_scene(const fs::path& dir, Index index, int n) {
  Scene s;
  s.depth.resize(kNativeSize, kNativeSize);
  read_array(scene_path(dir, index, "depth"), s.depth.data(), static_cast<std::size_t>(s.depth.size()));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(kNativeSize * kNativeSize));
  read_array(scene_path(dir, index, "mask"), mask.data(), mask.size());
  s.labels.resize(kNativeSize, kNativeSize);
  std::copy(mask.begin(), mask.end(), s.labels.data());
  std::vector<float> poses(static_cast<std::size_t>(6 * n));
  read_array(scene_path(dir, index, "pose"), poses.data(), poses.size());
  for (int k = 0; k < n; ++k) s.poses.emplace_back(Eigen::Map<const Eigen::Matrix<float, 6, 1>>(poses.data() + 6 * k));
  s.occluded.assign(static_cast<std::size_t>(n), true);
  for (const auto v : mask) {
    if (v > 0 && v <= n) s.occluded[v - 1u] = false;
  }
  return s;
}

double metric_depth_scale(const Normalization& norm, double bin_extent) {
  return norm.std * static_cast<double>(kImageSize) / bin_extent;
}

double kmeans_scene_miou(const DepthMap& normalized, const LabelImage& labels64, int n, float background,
                         std::uint64_t seed, const BaselineOptions& options) {
  std::mt19937_64 rng(seed);
  const LabelImage pred = kmeans_segment(normalized, n, background, rng, options);
  return miou(pred, masks_from_labels(labels64, n));
}

Dataset build_dataset(const DatasetConfig& config, const fs::path& dir) {
  config.validate();
  fs::create_directories(dir);
  const double bin = config.bin_extent();
  const auto generate = [&](Index index) {
    const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(index);
    std::mt19937_64 rng(seed);
    Scene s = drop_and_settle(config.shape, config.instances, bin, rng, config.placement);
    s.seed = seed;
    return s;
  };

  std::vector<SceneRecord> records;
  const auto store = [&](Index index, const Scene& s, const char* split) {
    write_scene(dir, index, s);
    records.push_back({index, s.seed, split, s.occluded});
  };

  // Training statistics at the working resolution.
  double sum = 0, sum_sq = 0;
  for (Index i = 0; i < config.train_count; ++i) {
    const Scene s = generate(i);
    const DepthMap small = resize_bilinear(s.depth, kImageSize, kImageSize);
    sum += small.cast<double>().sum();
    sum_sq += small.cast<double>().square().sum();
    store(i, s, "train");
  }
  const double count = static_cast<double>(config.train_count * kImageSize * kImageSize);
  Normalization norm;
  norm.mean = sum / count;
  norm.variance = std::max(0.0, sum_sq / count - norm.mean * norm.mean);
  norm.std = std::sqrt(norm.variance);
  if (!(norm.std > 0)) throw std::runtime_error("dataset: training depth has zero variance");
  const float background = static_cast<float>((kFloorDepth - norm.mean) / norm.std);

  Index next = config.train_count;
  for (Index i = 0; i < config.val_count; ++i, ++next) store(next, generate(next), "val");

  BaselineOptions baseline;
  baseline.depth_scale = metric_depth_scale(norm, bin);

  json hard = nullptr;
  if (config.hard_test_count > 0) {
    std::vector<std::pair<double, Index>> scored;
    std::vector<Scene> candidates;
    for (Index i = 0; i < config.hard_candidates; ++i, ++next) {
      Scene s = generate(next);
      const double score = kmeans_scene_miou(normalize_and_resize(s.depth, norm),
                                             resize_labels(s.labels, kImageSize, kImageSize), config.instances,
                                             background, s.seed, baseline);
      scored.emplace_back(score, next);
      candidates.push_back(std::move(s));
    }
    std::vector<std::pair<double, Index>> ranked = scored;
    std::stable_sort(ranked.begin(), ranked.end());
    ranked.resize(static_cast<std::size_t>(config.hard_test_count));
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    for (const auto& [score, index] : ranked) {
      store(index, candidates[static_cast<std::size_t>(index - config.train_count - config.val_count)], "test");
    }
    hard = json::array();
    for (const auto& [score, index] : scored) hard.push_back({{"index", index}, {"kmeans_miou", score}});
  } else {
    for (Index i = 0; i < config.test_count; ++i, ++next) store(next, generate(next), "test");
  }

  json manifest = {
      {"format", "insegan-dataset/1"},
      {"class", to_string(config.shape.kind)},
      {"shape", {{"kind", to_string(config.shape.kind)}, {"dims", {config.shape.dims.x(), config.shape.dims.y(), config.shape.dims.z()}}}},
      {"n_instances", config.instances},
      {"native_size", kNativeSize},
      {"image_size", kImageSize},
      {"bin_extent", bin},
      {"bin_factor", config.bin_factor},
      {"placement", placement_name(config.placement)},
      {"base_seed", config.base_seed},
      {"count", records.size()},
      {"floor_depth", kFloorDepth},
      {"background_level", background},
      {"normalization", {{"mean", norm.mean}, {"std", norm.std}, {"variance", norm.variance}, {"divide_by", "std"}}},
      {"hard_test_candidates", hard},
      {"scenes", json::array()}};
  for (const auto& r : records) manifest["scenes"].push_back(record_json(r));
  const fs::path tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << manifest.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, dir / "manifest.json");
  return Dataset::open(dir);
}

Dataset Dataset::open(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no dataset manifest in " + dir.string());
  Dataset d;
  d.dir_ = dir;
  try {
    d.manifest_ = json::parse(in);
    for (const auto& s : d.manifest_.at("scenes")) {
      d.scenes_.push_back({s.at("index").get<Index>(), s.at("seed").get<std::uint64_t>(),
                           s.at("split").get<std::string>(), s.at("occluded").get<std::vector<bool>>()});
    }
    if (d.manifest_.at("count").get<std::size_t>() != d.scenes_.size()) {
      throw std::runtime_error("manifest count disagrees with its scene list");
    }
    d.normalization();
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
  return d;
}

Normalization Dataset::normalization() const {
  const auto& n = manifest_.at("normalization");
  Normalization out{n.at("mean").get<double>(), n.at("std").get<double>(), n.at("variance").get<double>()};
  if (!(out.std > 0)) throw std::runtime_error("dataset normalization has non-positive scale");
  return out;
}

int Dataset::instances() const { return manifest_.at("n_instances").get<int>(); }

float Dataset::background_level() const { return manifest_.at("background_level").get<float>(); }

std::string Dataset::class_name() const { return manifest_.at("class").get<std::string>(); }

double Dataset::bin_extent() const { return manifest_.at("bin_extent").get<double>(); }

BaselineOptions Dataset::baseline_options() const {
  BaselineOptions options;
  options.depth_scale = metric_depth_scale(normalization(), bin_extent());
  return options;
}

std::vector<Index> Dataset::split(std::string_view name) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < scenes_.size(); ++i) {
    if (scenes_[i].split == name) out.push_back(static_cast<Index>(i));
  }
  return out;
}

Scene Dataset::load_scene(Index position) const {
  const SceneRecord& r = scenes_.at(static_cast<std::size_t>(position));
  Scene s = read_scene(dir_, r.index, instances());
  s.seed = r.seed;
  return s;
}

Tensorf Dataset::images(const std::vector<Index>& positions, double noise_sigma, std::uint64_t noise_seed) const {
  const Index per = kImageSize * kImageSize;
  Tensorf out({static_cast<Index>(positions.size()), 1, kImageSize, kImageSize});
  const Normalization norm = normalization();
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(noise_sigma));
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const DepthMap x = normalize_and_resize(load_scene(positions[i]).depth, norm);
    float* dst = out.data() + static_cast<Index>(i) * per;
    std::copy_n(x.data(), per, dst);
    if (noise_sigma > 0) {
      for (Index p = 0; p < per; ++p) dst[p] += noise(rng);
    }
  }
  return out;
}

LabelImage Dataset::labels64(Index position) const {
  const SceneRecord& r = scenes_.at(static_cast<std::size_t>(position));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(kNativeSize * kNativeSize));
  read_array(scene_path(dir_, r.index, "mask"), mask.data(), mask.size());
  LabelImage labels(kNativeSize, kNativeSize);
  std::copy(mask.begin(), mask.end(), labels.data());
  return resize_labels(labels, kImageSize, kImageSize);
}

}  // namespace insegan::scenegen
