#include "bcr/roi.hpp"

#include <numeric>
#include <sstream>

#include "bcr/errors.hpp"

namespace bcr {

PixelMask::PixelMask(int height, int width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  if (height <= 0 || width <= 0 || bits_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("pixel mask size does not match its dimensions");
  }
  for (auto& b : bits_) {
    b = b ? 1 : 0;
    count_ += b;
  }
}

PixelMask PixelMask::full(int height, int width) {
  return PixelMask(height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 1));
}

PixelMask build_pixel_mask(const RoiSpec& roi, int height, int width) {
  check_roi(roi, height, width);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(height) * width, 0);
  for (const Box& b : roi.boxes) {
    for (int y = b.y_min; y < b.y_max; ++y) {
      for (int x = b.x_min; x < b.x_max; ++x) bits[static_cast<std::size_t>(y) * width + x] = 1;
    }
  }
  return PixelMask(height, width, std::move(bits));
}

TokenPartition partition_tokens_unchecked(const RoiSpec& roi, int height, int width, int patch_size,
                                          double overlap_threshold) {
  if (patch_size <= 0 || height % patch_size != 0 || width % patch_size != 0) {
    std::ostringstream os;
    os << "image " << width << "x" << height << " is not divisible into " << patch_size << "-pixel patches";
    throw GeometryError(os.str());
  }
  const PixelMask mask = build_pixel_mask(roi, height, width);
  TokenPartition part;
  part.grid_rows = height / patch_size;
  part.grid_cols = width / patch_size;
  part.patch_size = patch_size;
  const double patch_area = static_cast<double>(patch_size) * patch_size;
  for (int gy = 0; gy < part.grid_rows; ++gy) {
    for (int gx = 0; gx < part.grid_cols; ++gx) {
      int covered = 0;
      for (int dy = 0; dy < patch_size; ++dy) {
        for (int dx = 0; dx < patch_size; ++dx) covered += mask.at(gy * patch_size + dy, gx * patch_size + dx);
      }
      const int token = 1 + gy * part.grid_cols + gx;
      const bool in_roi = covered > 0 && covered / patch_area >= overlap_threshold;
      (in_roi ? part.roi_indices : part.background_indices).push_back(token);
    }
  }
  return part;
}

TokenPartition partition_tokens(const RoiSpec& roi, int height, int width, int patch_size,
                                double overlap_threshold) {
  TokenPartition part = partition_tokens_unchecked(roi, height, width, patch_size, overlap_threshold);
  if (part.background_indices.empty()) {
    throw EmptyBackgroundError("ROI covers every patch token; no background tokens remain");
  }
  if (part.roi_indices.empty()) {
    // Only reachable with a positive overlap threshold.
    throw BoundsError("no patch meets the ROI overlap threshold");
  }
  return part;
}

}  // namespace bcr
