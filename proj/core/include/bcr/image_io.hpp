#pragma once

#include <filesystem>

#include "bcr/types.hpp"

namespace bcr::io {

// Binary PPM (P6, maxval 255). Lossless 8-bit storage; values are quantised
// with round(v * 255) on write and divided by 255 on read.
ImageTensor read_ppm(const std::filesystem::path& path);
void write_ppm(const ImageTensor& image, const std::filesystem::path& path);

// Worst-case l-inf change introduced by write_ppm + read_ppm.
inline constexpr double kQuantizationStep = 1.0 / 255.0;

ImageTensor quantize_8bit(const ImageTensor& image);

}  // namespace bcr::io
