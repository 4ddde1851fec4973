#include "insegan/inference.hpp"

#include <algorithm>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>

namespace insegan {

namespace {

void require_compatible(const Generator& g, const Encoder& e) {
  if (!(g.config() == e.config())) throw std::invalid_argument("segment: generator and encoder configs differ");
  if (!g.all_finite() || !e.all_finite()) throw std::invalid_argument("segment: model has non-finite weights");
}

DepthMap plane(const Tensorf& t, Index index) {
  DepthMap out(kImageSize, kImageSize);
  std::copy_n(t.data() + index * kImageSize * kImageSize, kImageSize * kImageSize, out.data());
  return out;
}

}  // namespace

SegmentationResult segment_stack(DepthStack stack, const SegmentOptions& options) {
  if (stack.empty()) throw std::invalid_argument("segment_stack: empty stack");
  const auto composite = geometry::zbuffer_composite<float>(std::span<const DepthMap>(stack));
  SegmentationResult r;
  r.composite = composite.depth;
  const DepthMap cut = options.median_radius > 0 ? median_filter(composite.depth, options.median_radius) : composite.depth;
  r.mask = (cut > options.tau).select(composite.labels, 0);
  if (options.min_area > 0) r.mask = clean_mask(r.mask, options.min_area);
  r.instance_depths = std::move(stack);
  return r;
}

std::vector<SegmentationResult> segment_batch(const Tensorf& images, const Generator& generator,
                                              const Encoder& encoder, const SegmentOptions& options, Index chunk) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != kImageSize || images.dim(3) != kImageSize) {
    throw std::invalid_argument("segment: expected N×1×64×64 images, got " + shape_string(images.shape()));
  }
  require_compatible(generator, encoder);
  const Index n = generator.config().instances;
  const Index total = images.dim(0);
  const Index per = kImageSize * kImageSize;
  std::vector<SegmentationResult> results;
  results.reserve(static_cast<std::size_t>(total));
  chunk = std::max<Index>(1, chunk);
  for (Index first = 0; first < total; first += chunk) {
    const Index count = std::min(chunk, total - first);
    const Tensorf part({count, 1, kImageSize, kImageSize}, images.array().segment(first * per, count * per));
    const Tensorf latents = encoder.encode(ad::constant(part)).latents.value();
    const Tensorf renders = generator.generate_single(ad::constant(latents)).value();
    for (Index b = 0; b < count; ++b) {
      DepthStack stack;
      for (Index k = 0; k < n; ++k) stack.push_back(plane(renders, b * n + k));
      SegmentationResult r = segment_stack(std::move(stack), options);
      r.latents = var_to_latents(latents, b, n);
      results.push_back(std::move(r));
    }
  }
  return results;
}

SegmentationResult segment(const Tensorf& image, const Generator& generator, const Encoder& encoder,
                           const SegmentOptions& options) {
  if (image.size() != kImageSize * kImageSize) {
    throw std::invalid_argument("segment: expected a 64×64 image, got " + shape_string(image.shape()));
  }
  return std::move(segment_batch(image.reshaped({1, 1, kImageSize, kImageSize}), generator, encoder, options).front());
}

LabelImage clean_mask(const LabelImage& mask, int min_area) {
  LabelImage out = mask;
  if (min_area <= 0) return out;
  const Index rows = mask.rows(), cols = mask.cols();
  Image<std::uint8_t> seen = Image<std::uint8_t>::Zero(rows, cols);
  std::vector<std::pair<Index, Index>> component, stack;
  for (Index r0 = 0; r0 < rows; ++r0) {
    for (Index c0 = 0; c0 < cols; ++c0) {
      if (seen(r0, c0) || mask(r0, c0) == 0) continue;
      const std::int32_t label = mask(r0, c0);
      component.clear();
      stack.assign(1, {r0, c0});
      seen(r0, c0) = 1;
      while (!stack.empty()) {
        const auto [r, c] = stack.back();
        stack.pop_back();
        component.emplace_back(r, c);
        const Index nr[4] = {r - 1, r + 1, r, r};
        const Index nc[4] = {c, c, c - 1, c + 1};
        for (int k = 0; k < 4; ++k) {
          if (nr[k] < 0 || nr[k] >= rows || nc[k] < 0 || nc[k] >= cols) continue;
          if (seen(nr[k], nc[k]) || mask(nr[k], nc[k]) != label) continue;
          seen(nr[k], nc[k]) = 1;
          stack.emplace_back(nr[k], nc[k]);
        }
      }
      if (static_cast<Index>(component.size()) < min_area) {
        for (const auto& [r, c] : component) out(r, c) = 0;
      }
    }
  }
  return out;
}

DepthMap median_filter(const DepthMap& image, int radius) {
  if (radius <= 0) return image;
  const Index rows = image.rows(), cols = image.cols();
  DepthMap out(rows, cols);
  std::vector<float> window;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      window.clear();
      for (Index dr = -radius; dr <= radius; ++dr) {
        for (Index dc = -radius; dc <= radius; ++dc) {
          const Index rr = std::clamp<Index>(r + dr, 0, rows - 1), cc = std::clamp<Index>(c + dc, 0, cols - 1);
          window.push_back(image(rr, cc));
        }
      }
      auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
      std::nth_element(window.begin(), mid, window.end());
      out(r, c) = *mid;
    }
  }
  return out;
}

void write_label_pgm(const std::filesystem::path& path, const LabelImage& mask) {
  if (mask.size() > 0 && (mask.minCoeff() < 0 || mask.maxCoeff() > 255)) {
    throw std::invalid_argument("write_label_pgm: labels must fit in 8 bits");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << mask.cols() << ' ' << mask.rows() << "\n255\n";
  for (Index i = 0; i < mask.size(); ++i) out.put(static_cast<char>(static_cast<std::uint8_t>(mask.data()[i])));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

LabelImage read_label_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  Index cols = 0, rows = 0;
  int maxval = 0;
  in >> magic >> cols >> rows >> maxval;
  if (magic != "P5" || cols <= 0 || rows <= 0 || maxval != 255) {
    throw std::runtime_error("not an 8-bit binary PGM: " + path.string());
  }
  in.get();
  LabelImage mask(rows, cols);
  for (Index i = 0; i < mask.size(); ++i) {
    const int v = in.get();
    if (v == std::char_traits<char>::eof()) throw std::runtime_error("truncated PGM: " + path.string());
    mask.data()[i] = v;
  }
  return mask;
}

void write_mask_with_sidecar(const std::filesystem::path& stem, const LabelImage& mask, const nlohmann::json& record) {
  write_label_pgm(stem.string() + ".pgm", mask);
  std::ofstream out(stem.string() + ".json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + stem.string() + ".json");
  out << record.dump(2) << '\n';
}

}  // namespace insegan
