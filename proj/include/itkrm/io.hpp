#pragma once

// Binary containers: dense matrices ("SPDK1", d and K as u64 little endian,
// then column-major f64) and the signal truth sidecar ("SPTR1").

#include "itkrm/linalg.hpp"
#include "itkrm/signals.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace itkrm {

static_assert(std::endian::native == std::endian::little, "containers assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 5> kMatrixMagic{'S', 'P', 'D', 'K', '1'};
inline constexpr std::array<char, 5> kTruthMagic{'S', 'P', 'T', 'R', '1'};

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated container");
  return v;
}

inline void expect_magic(std::istream& is, const std::array<char, 5>& magic) {
  std::array<char, 5> got{};
  if (!is.read(got.data(), got.size()) || got != magic) throw FormatError("bad container magic");
}

}  // namespace detail

inline void write_matrix(std::ostream& os, const Matrix& m) {
  os.write(kMatrixMagic.data(), kMatrixMagic.size());
  detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!os) throw FormatError("failed writing matrix container");
}

inline Matrix read_matrix(std::istream& is) {
  detail::expect_magic(is, kMatrixMagic);
  const auto rows = detail::get<std::uint64_t>(is);
  const auto cols = detail::get<std::uint64_t>(is);
  if (rows > (1ULL << 31) || cols > (1ULL << 31)) throw FormatError("implausible matrix dimensions");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size())))
    throw FormatError("truncated matrix data");
  return m;
}

inline void write_dictionary(std::ostream& os, const Dictionary& dico) { write_matrix(os, dico.atoms()); }

inline Dictionary read_dictionary(std::istream& is) {
  Matrix m = read_matrix(is);
  for (Index k = 0; k < m.cols(); ++k)
    if (std::abs(m.col(k).norm() - 1.0) > 1e-8) throw FormatError("dictionary column " + std::to_string(k) + " is not unit norm");
  return Dictionary::normalized(std::move(m));
}

inline void save_dictionary(const std::string& path, const Dictionary& dico) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  write_dictionary(out, dico);
}

inline Dictionary load_dictionary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_dictionary(in);
}

/// Per signal: sparsity u32, indices i32, signs i8, outlier flag i8.
inline void write_truth(std::ostream& os, const std::vector<SignalTruth>& truth) {
  os.write(kTruthMagic.data(), kTruthMagic.size());
  detail::put<std::uint64_t>(os, truth.size());
  for (const auto& t : truth) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.support.size()));
    for (Index k : t.support) detail::put<std::int32_t>(os, static_cast<std::int32_t>(k));
    for (double c : t.coeffs) detail::put<std::int8_t>(os, static_cast<std::int8_t>(sign_of(c)));
    detail::put<std::int8_t>(os, static_cast<std::int8_t>(t.is_outlier ? 1 : 0));
  }
  if (!os) throw FormatError("failed writing truth sidecar");
}

/// Reads the sidecar; coefficient magnitudes are not stored, so `coeffs`
/// holds the signs only.
inline std::vector<SignalTruth> read_truth(std::istream& is) {
  detail::expect_magic(is, kTruthMagic);
  const auto n = detail::get<std::uint64_t>(is);
  std::vector<SignalTruth> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 24)));
  for (std::uint64_t i = 0; i < n; ++i) {
    SignalTruth t;
    const auto s = detail::get<std::uint32_t>(is);
    if (s > (1u << 20)) throw FormatError("implausible sparsity in truth sidecar");
    for (std::uint32_t j = 0; j < s; ++j) t.support.push_back(detail::get<std::int32_t>(is));
    for (std::uint32_t j = 0; j < s; ++j) t.coeffs.push_back(detail::get<std::int8_t>(is));
    t.sparsity = static_cast<int>(s);
    t.is_outlier = detail::get<std::int8_t>(is) != 0;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace itkrm
