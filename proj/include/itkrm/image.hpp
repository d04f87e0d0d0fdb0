#pragma once

// Grayscale images on the unit scale: PGM/raw loading, Gaussian noise,
// patch extraction and PSNR.

#include "itkrm/linalg.hpp"
#include "itkrm/parallel.hpp"
#include "itkrm/rng.hpp"
#include "itkrm/signals.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace itkrm {

/// Image rows x cols, values in [0, 1].
using Image = Matrix;

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::size_t skip_pgm_space(const std::vector<unsigned char>& buf, std::size_t pos) {
  for (;;) {
    while (pos < buf.size() && std::isspace(buf[pos])) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    return pos;
  }
}

inline long read_pgm_int(const std::vector<unsigned char>& buf, std::size_t& pos) {
  pos = skip_pgm_space(buf, pos);
  if (pos >= buf.size() || !std::isdigit(buf[pos])) throw ImageError("malformed PGM header");
  long v = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    v = v * 10 + (buf[pos] - '0');
    if (v > 1'000'000) throw ImageError("malformed PGM header: value too large");
    ++pos;
  }
  return v;
}

inline Image bytes_to_image(const unsigned char* data, Index rows, Index cols) {
  Image img(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) img(r, c) = static_cast<double>(data[r * cols + c]) / 255.0;
  return img;
}

}  // namespace detail

/// Decodes 8-bit binary PGM (P5, maxval 255) or headerless raw bytes of a
/// square image.
inline Image decode_image_gray(const std::vector<unsigned char>& buf) {
  if (buf.empty()) throw ImageError("malformed image: empty file");
  if (buf.size() >= 2 && buf[0] == 'P' && buf[1] >= '1' && buf[1] <= '7') {
    if (buf[1] == '3' || buf[1] == '6' || buf[1] == '7') throw ImageError("non-grayscale image");
    if (buf[1] != '5') throw ImageError("unsupported PGM variant; expected binary P5");
    std::size_t pos = 2;
    const long w = detail::read_pgm_int(buf, pos);
    const long h = detail::read_pgm_int(buf, pos);
    const long maxval = detail::read_pgm_int(buf, pos);
    if (w < 1 || h < 1) throw ImageError("malformed PGM header: empty image");
    if (maxval != 255) throw ImageError("unsupported PGM maxval; expected 255");
    if (pos >= buf.size() || !std::isspace(buf[pos])) throw ImageError("malformed PGM header");
    ++pos;
    const auto need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (buf.size() - pos < need) throw ImageError("malformed PGM: truncated pixel data");
    return detail::bytes_to_image(buf.data() + pos, h, w);
  }
  const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(buf.size()))));
  if (side * side != static_cast<Index>(buf.size())) throw ImageError("malformed raw image: size is not a square");
  return detail::bytes_to_image(buf.data(), side, side);
}

inline Image load_image_gray(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_image_gray(buf);
}

/// Writes a P5 PGM; values are clamped to [0, 1] and rounded to 8 bits.
inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write image: " + path);
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  for (Index r = 0; r < img.rows(); ++r)
    for (Index c = 0; c < img.cols(); ++c)
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(img(r, c), 0.0, 1.0) * 255.0))));
  if (!out) throw ImageError("failed writing image: " + path);
}

/// I.i.d. Gaussian noise with std sigma/255 per pixel; no clipping.
inline Image add_image_noise(const Image& img, double sigma, CounterRng& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  Image out = img;
  if (sigma == 0.0) return out;
  const double s = sigma / 255.0;
  for (Index r = 0; r < out.rows(); ++r)
    for (Index c = 0; c < out.cols(); ++c) out(r, c) += s * rng.normal();
  return out;
}

struct PatchConfig {
  Index patch_side = 8;
  Index stride = 1;
  bool remove_mean = true;
};

/// All p x p patches, top-left corners in row-major order, each patch
/// vectorized column by column.
inline SignalBatch extract_patches(const Image& img, const PatchConfig& cfg = {}) {
  const Index p = cfg.patch_side;
  if (p < 1 || cfg.stride < 1) throw std::invalid_argument("patch side and stride must be >= 1");
  if (img.rows() < p || img.cols() < p) throw std::invalid_argument("image smaller than patch side");
  const Index nr = (img.rows() - p) / cfg.stride + 1;
  const Index nc = (img.cols() - p) / cfg.stride + 1;
  SignalBatch batch;
  batch.signals.resize(p * p, nr * nc);
  parallel_for(static_cast<std::size_t>(nr), [&](std::size_t ri) {
    const Index i = static_cast<Index>(ri);
    for (Index j = 0; j < nc; ++j) {
      auto col = batch.signals.col(i * nc + j);
      for (Index c = 0; c < p; ++c)
        for (Index r = 0; r < p; ++r) col(c * p + r) = img(i * cfg.stride + r, j * cfg.stride + c);
      if (cfg.remove_mean) col.array() -= col.mean();
    }
  });
  return batch;
}

/// 10 log10(1 / MSE) on the unit scale; +inf for identical images.
inline double psnr(const Image& clean, const Image& other) {
  if (clean.rows() != other.rows() || clean.cols() != other.cols()) throw std::invalid_argument("image sizes differ");
  if (clean.size() == 0) throw std::invalid_argument("empty image");
  const double mse = (clean - other).squaredNorm() / static_cast<double>(clean.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace itkrm
