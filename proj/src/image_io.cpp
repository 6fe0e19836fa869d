#include "bevforge/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace bevforge {
namespace {

void expect_header(std::ifstream& in, const std::string& path, const char* magic, int& w, int& h,
                   int& maxval) {
  std::string tag;
  in >> tag;
  if (tag != magic) throw IoError(path + ": expected " + magic + " header, got '" + tag + "'");
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0) throw IoError(path + ": malformed header");
  in.get();  // single whitespace before binary payload
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

std::uint8_t quantize8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

void write_ppm(const std::string& path, const std::vector<double>& rgb, int height, int width) {
  if (rgb.size() != static_cast<std::size_t>(3) * height * width)
    throw IoError("write_ppm: size mismatch");
  auto out = open_out(path);
  out << "P6\n" << width << " " << height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * 3);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x) * 3 + c] =
            quantize8(rgb[c * plane + static_cast<std::size_t>(y) * width + x]);
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw IoError("write_ppm: write failed: " + path);
}

std::vector<double> read_ppm(const std::string& path, int& height, int& width) {
  auto in = open_in(path);
  int maxval = 0;
  expect_header(in, path, "P6", width, height, maxval);
  if (maxval != 255) throw IoError(path + ": only 8-bit PPM supported");
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(3) * height * width);
  in.read(reinterpret_cast<char*>(raw.data()), raw.size());
  if (!in) throw IoError(path + ": truncated pixel data");
  std::vector<double> rgb(raw.size());
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        rgb[c * plane + static_cast<std::size_t>(y) * width + x] =
            raw[(static_cast<std::size_t>(y) * width + x) * 3 + c] / 255.0;
  return rgb;
}

void write_pgm16(const std::string& path, const std::vector<double>& depth_m, int height,
                 int width) {
  if (depth_m.size() != static_cast<std::size_t>(height) * width)
    throw IoError("write_pgm16: size mismatch");
  auto out = open_out(path);
  out << "P5\n" << width << " " << height << "\n65535\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * 2);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double mm = depth_m[static_cast<std::size_t>(y) * width + x] * 1000.0;
      const std::uint16_t q =
          static_cast<std::uint16_t>(std::clamp<long>(std::lround(mm), 0, 65535));
      row[2 * x] = static_cast<std::uint8_t>(q >> 8);  // big-endian per PGM spec
      row[2 * x + 1] = static_cast<std::uint8_t>(q & 0xff);
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw IoError("write_pgm16: write failed: " + path);
}

std::vector<double> read_pgm16(const std::string& path, int& height, int& width) {
  auto in = open_in(path);
  int maxval = 0;
  expect_header(in, path, "P5", width, height, maxval);
  if (maxval != 65535) throw IoError(path + ": expected 16-bit PGM");
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(2) * height * width);
  in.read(reinterpret_cast<char*>(raw.data()), raw.size());
  if (!in) throw IoError(path + ": truncated pixel data");
  std::vector<double> depth(static_cast<std::size_t>(height) * width);
  for (std::size_t i = 0; i < depth.size(); ++i)
    depth[i] = ((raw[2 * i] << 8) | raw[2 * i + 1]) / 1000.0;
  return depth;
}

void write_pgm8(const std::string& path, const std::vector<std::uint8_t>& values, int height,
                int width) {
  if (values.size() != static_cast<std::size_t>(height) * width)
    throw IoError("write_pgm8: size mismatch");
  auto out = open_out(path);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(values.data()), values.size());
  if (!out) throw IoError("write_pgm8: write failed: " + path);
}

std::vector<std::uint8_t> read_pgm8(const std::string& path, int& height, int& width) {
  auto in = open_in(path);
  int maxval = 0;
  expect_header(in, path, "P5", width, height, maxval);
  if (maxval != 255) throw IoError(path + ": expected 8-bit PGM");
  std::vector<std::uint8_t> values(static_cast<std::size_t>(height) * width);
  in.read(reinterpret_cast<char*>(values.data()), values.size());
  if (!in) throw IoError(path + ": truncated pixel data");
  return values;
}

std::vector<double> downsample_area(const std::vector<double>& chw, int channels, int height,
                                    int width, int factor) {
  if (height % factor != 0 || width % factor != 0)
    throw ShapeMismatch("downsample_area: dims must divide by factor");
  const int ho = height / factor, wo = width / factor;
  std::vector<double> out(static_cast<std::size_t>(channels) * ho * wo, 0.0);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += chw[(static_cast<std::size_t>(c) * height + y * factor + dy) * width +
                       x * factor + dx];
        out[(static_cast<std::size_t>(c) * ho + y) * wo + x] = acc * inv;
      }
  return out;
}

}  // namespace bevforge
