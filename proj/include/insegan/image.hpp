#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace insegan {

/// Row-major H×W raster; (row, col) indexing matches image conventions.
template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using DepthMap = Image<float>;

/// Per-pixel instance ids, 0 = background.
using LabelImage = Image<std::int32_t>;

}  // namespace insegan
