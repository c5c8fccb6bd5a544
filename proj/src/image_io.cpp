#include "atomdet/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace atomdet::io {

namespace fs = std::filesystem;

namespace {

fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".json"); }

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

void check_dims(int width, int height, std::size_t n) {
  if (width <= 0 || height <= 0 || static_cast<std::size_t>(width) * height != n) {
    throw std::invalid_argument("image dimensions do not match the pixel count");
  }
}

std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw std::runtime_error("truncated PGM header");
}

}  // namespace

PgmQuantization write_pgm16(const fs::path& path, int width, int height,
                            std::span<const double> pixels) {
  check_dims(width, height, pixels.size());
  const auto [lo, hi] = std::minmax_element(pixels.begin(), pixels.end());
  PgmQuantization q;
  q.offset = *lo;
  q.scale = (*hi > *lo) ? (*hi - *lo) / 65535.0 : 1.0;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n65535\n";
  std::vector<unsigned char> buf(pixels.size() * 2);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double level = std::round((pixels[i] - q.offset) / q.scale);
    const auto v = static_cast<std::uint16_t>(std::clamp(level, 0.0, 65535.0));
    buf[2 * i] = static_cast<unsigned char>(v >> 8);
    buf[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));

  write_json(sidecar(path), {{"width", width},
                             {"height", height},
                             {"maxval", 65535},
                             {"scale", q.scale},
                             {"offset", q.offset}});
  return q;
}

RawImage read_pgm16(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  if (next_token(in) != "P5") throw std::runtime_error(path.string() + " is not a binary PGM");
  RawImage img;
  img.width = std::stoi(next_token(in));
  img.height = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  in.get();  // single whitespace before the raster
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error("bad PGM dimensions");
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  const bool wide = maxval > 255;
  std::vector<unsigned char> buf(n * (wide ? 2 : 1));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error("truncated PGM raster in " + path.string());

  PgmQuantization q;
  if (fs::exists(sidecar(path))) {
    const auto j = read_json(sidecar(path));
    q.scale = j.at("scale").get<double>();
    q.offset = j.at("offset").get<double>();
  }
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = wide ? (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
    img.pixels[i] = q.offset + q.scale * v;
  }
  return img;
}

void write_raw_f64(const fs::path& path, int width, int height, std::span<const double> pixels) {
  check_dims(width, height, pixels.size());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::vector<unsigned char> buf(pixels.size() * 8);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(pixels[i]);
    for (int b = 0; b < 8; ++b) buf[8 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  write_json(sidecar(path), {{"width", width}, {"height", height}, {"dtype", "float64-le"}});
}

RawImage read_raw_f64(const fs::path& path) {
  const auto header = read_json(sidecar(path));
  RawImage img;
  img.width = header.at("width").get<int>();
  img.height = header.at("height").get<int>();
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<unsigned char> buf(n * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error("truncated raster in " + path.string());
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[8 * i + b]) << (8 * b);
    img.pixels[i] = std::bit_cast<double>(bits);
  }
  return img;
}

RawImage read_image(const fs::path& path) {
  if (path.extension() == ".pgm") return read_pgm16(path);
  return read_raw_f64(path);
}

void write_truth_csv(const fs::path& path, const ArrayGeometry& geometry, const GroundTruth& truth) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "site,row,col,occupied,brightness\n";
  out.precision(17);
  for (int s = 0; s < geometry.n_sites(); ++s) {
    out << s << ',' << s / geometry.n_cols() << ',' << s % geometry.n_cols() << ','
        << (truth.occupied[s] ? 1 : 0) << ',' << truth.brightness[s] << '\n';
  }
}

GroundTruth read_truth_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  GroundTruth truth;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5) throw std::runtime_error("malformed truth row: " + line);
    truth.occupied.push_back(std::stoi(fields[3]) != 0);
    truth.brightness.push_back(std::stod(fields[4]));
  }
  return truth;
}

}  // namespace atomdet::io
