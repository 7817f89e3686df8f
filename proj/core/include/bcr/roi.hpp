#pragma once

#include <cstdint>
#include <vector>

#include "bcr/types.hpp"

namespace bcr {

// Binary H x W mask, row-major.
class PixelMask {
 public:
  PixelMask(int height, int width, std::vector<std::uint8_t> bits);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  std::size_t count() const noexcept { return count_; }
  double coverage() const noexcept {
    return static_cast<double>(count_) / (static_cast<double>(height_) * width_);
  }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  static PixelMask full(int height, int width);

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

// Token layout: index 0 is CLS, then patches in row-major grid order.
struct TokenPartition {
  std::vector<int> roi_indices;
  std::vector<int> background_indices;
  int cls_index = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  int patch_size = 0;

  int token_count() const noexcept { return grid_rows * grid_cols + 1; }
};

// Union of the boxes. Throws BoundsError.
PixelMask build_pixel_mask(const RoiSpec& roi, int height, int width);

// A patch joins the ROI set when it overlaps the ROI mask and its covered
// fraction is at least `overlap_threshold` (0 means any overlap).
// Throws GeometryError, BoundsError, EmptyBackgroundError.
TokenPartition partition_tokens(const RoiSpec& roi, int height, int width, int patch_size,
                                double overlap_threshold = 0.0);

// Same rule as partition_tokens, but never throws EmptyBackgroundError.
TokenPartition partition_tokens_unchecked(const RoiSpec& roi, int height, int width, int patch_size,
                                          double overlap_threshold = 0.0);

}  // namespace bcr
