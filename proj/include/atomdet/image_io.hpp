#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "atomdet/model.hpp"

namespace atomdet::io {

struct RawImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major
};

/// Linear quantization used for PGM export: value = offset + scale * q.
struct PgmQuantization {
  double scale = 1.0;
  double offset = 0.0;
};

/// 16-bit big-endian binary PGM (P5, maxval 65535) plus `<path>.json`
/// recording width, height, scale and offset.
PgmQuantization write_pgm16(const std::filesystem::path& path, int width, int height,
                            std::span<const double> pixels);
/// Reads a PGM written by write_pgm16 and undoes the quantization using the
/// sidecar (identity when the sidecar is absent).
RawImage read_pgm16(const std::filesystem::path& path);

/// Little-endian float64 pixels plus a `<path>.json` header {width, height}.
void write_raw_f64(const std::filesystem::path& path, int width, int height,
                   std::span<const double> pixels);
RawImage read_raw_f64(const std::filesystem::path& path);

/// Dispatches on extension: `.pgm` or anything else as raw float64.
RawImage read_image(const std::filesystem::path& path);

/// CSV with columns site,row,col,occupied,brightness.
void write_truth_csv(const std::filesystem::path& path, const ArrayGeometry& geometry,
                     const GroundTruth& truth);
GroundTruth read_truth_csv(const std::filesystem::path& path);

}  // namespace atomdet::io
