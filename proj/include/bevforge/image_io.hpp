#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevforge/errors.hpp"

namespace bevforge {

// RGB as binary PPM (P6, 8-bit). Input/output is [3×H×W] channel-planar
// doubles in [0,1]; values are clamped and rounded on write.
void write_ppm(const std::string& path, const std::vector<double>& rgb_chw, int height,
               int width);
std::vector<double> read_ppm(const std::string& path, int& height, int& width);

// Depth as 16-bit big-endian PGM (P5), millimeters; 0 is the invalid/sky
// sentinel. In-memory unit is meters.
void write_pgm16(const std::string& path, const std::vector<double>& depth_m, int height,
                 int width);
std::vector<double> read_pgm16(const std::string& path, int& height, int& width);

// Class maps as 8-bit PGM (P5).
void write_pgm8(const std::string& path, const std::vector<std::uint8_t>& values, int height,
                int width);
std::vector<std::uint8_t> read_pgm8(const std::string& path, int& height, int& width);

// Box-filter downsample of a [C×H×W] planar image by an integer factor
// (H and W must be divisible by it).
std::vector<double> downsample_area(const std::vector<double>& chw, int channels, int height,
                                    int width, int factor);

}  // namespace bevforge
