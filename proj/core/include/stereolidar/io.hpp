#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stereolidar/scenegen.hpp"
#include "stereolidar/sparse.hpp"

namespace stereolidar::io {

/// Binary P6 with maxval 255. Values are clamped to [0,1] and rounded.
void write_ppm(const std::filesystem::path& path, const scenegen::RgbImage& image);
scenegen::RgbImage read_ppm(const std::filesystem::path& path);

/// Single-channel float map [H,W] in row-major top-down order.
struct FloatMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;
};

/// "Pf" with a negative scale (little-endian); rows stored bottom-up.
void write_pfm(const std::filesystem::path& path, const FloatMap& map);
FloatMap read_pfm(const std::filesystem::path& path);

FloatMap to_float_map(std::size_t height, std::size_t width, const std::vector<double>& values);

/// Rows "i,j,disparity" with a header line.
void write_sparse_csv(const std::filesystem::path& path, const SparseDisparity& sp);
SparseDisparity read_sparse_csv(const std::filesystem::path& path, std::size_t height, std::size_t width);

/// Mask as a P5 (8-bit gray) image, 255 = true.
void write_mask_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                    const std::vector<std::uint8_t>& mask);
std::vector<std::uint8_t> read_mask_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace stereolidar::io
