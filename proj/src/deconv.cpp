#include "atomdet/deconv.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>

#include <fftw3.h>

#include "atomdet/forward.hpp"

namespace atomdet {

namespace {

// The FFTW planner is not re-entrant; execution with new-array calls is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
std::unique_ptr<T, FftwDeleter> fftw_buffer(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
  if (!p) throw std::bad_alloc();
  return std::unique_ptr<T, FftwDeleter>(p);
}

}  // namespace

Grid2D::Grid2D(int w, int h, std::vector<double> v) : width(w), height(h), values(std::move(v)) {
  if (w < 0 || h < 0 || values.size() != static_cast<std::size_t>(w) * h) {
    throw std::invalid_argument("grid dimensions do not match its values");
  }
}

Grid2D::Grid2D(int w, int h, double fill)
    : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

void DeconvConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be positive");
  if (!(disk_radius > 0.0) || !std::isfinite(disk_radius)) {
    throw std::invalid_argument("disk radius must be positive");
  }
}

void AffineCalibration::apply(std::span<double> values) const {
  for (double& v : values) v = gain * (v - offset);
}

Grid2D psf_kernel(const PsfModel& psf) {
  const int r = static_cast<int>(std::ceil(psf.truncation_radius() - 1e-9));
  const int size = 2 * r + 1;
  Grid2D k(size, size);
  double total = 0.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      k.at(x, y) = pixel_psf_integral({static_cast<double>(r), static_cast<double>(r)}, x, y, psf.hwhm);
      total += k.at(x, y);
    }
  }
  for (double& v : k.values) v /= total;
  return k;
}

DiskKernel make_disk_kernel(double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw std::invalid_argument("disk radius must be positive");
  constexpr int kSub = 4;
  DiskKernel kernel;
  kernel.radius = radius;
  const int reach = static_cast<int>(std::ceil(radius + 0.5));
  double total = 0.0;
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      int covered = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        const double y = dy + (sy + 0.5) / kSub - 0.5;
        for (int sx = 0; sx < kSub; ++sx) {
          const double x = dx + (sx + 0.5) / kSub - 0.5;
          if (x * x + y * y <= radius * radius) ++covered;
        }
      }
      if (covered == 0) continue;
      const double w = static_cast<double>(covered) / (kSub * kSub);
      kernel.taps.push_back({dx, dy, w});
      total += w;
    }
  }
  if (kernel.taps.empty()) {
    kernel.taps.push_back({0, 0, 1.0});
    return kernel;
  }
  for (auto& t : kernel.taps) t.weight /= total;
  return kernel;
}

namespace {

int smooth_size(int n) {
  for (;; ++n) {
    int m = n;
    for (int f : {2, 3, 5, 7}) {
      while (m % f == 0) m /= f;
    }
    if (m == 1) return n;
  }
}

}  // namespace

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

struct WienerFilter::Plans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
  ~Plans() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (inverse) fftw_destroy_plan(inverse);
  }
};

WienerFilter::WienerFilter(int width, int height, const PsfModel& psf)
    : width_(width), height_(height), plans_(std::make_unique<Plans>()) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("image must be non-empty");
  const Grid2D kernel = psf_kernel(psf);
  pad_ = kernel.width / 2;
  padded_w_ = smooth_size(width + 2 * pad_);
  padded_h_ = smooth_size(height + 2 * pad_);
  const std::size_t n_real = static_cast<std::size_t>(padded_w_) * padded_h_;
  const std::size_t n_freq = static_cast<std::size_t>(padded_h_) * (padded_w_ / 2 + 1);

  auto real = fftw_buffer<double>(n_real);
  auto freq = fftw_buffer<fftw_complex>(n_freq);
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    plans_->forward = fftw_plan_dft_r2c_2d(padded_h_, padded_w_, real.get(), freq.get(), FFTW_ESTIMATE);
    plans_->inverse = fftw_plan_dft_c2r_2d(padded_h_, padded_w_, freq.get(), real.get(), FFTW_ESTIMATE);
  }
  if (!plans_->forward || !plans_->inverse) throw std::runtime_error("FFTW planning failed");

  // Kernel centre goes to the origin with wrap-around so the OTF carries no phase ramp.
  std::fill(real.get(), real.get() + n_real, 0.0);
  for (int ky = 0; ky < kernel.height; ++ky) {
    for (int kx = 0; kx < kernel.width; ++kx) {
      const int x = ((kx - pad_) % padded_w_ + padded_w_) % padded_w_;
      const int y = ((ky - pad_) % padded_h_ + padded_h_) % padded_h_;
      real.get()[static_cast<std::size_t>(y) * padded_w_ + x] += kernel.at(kx, ky);
    }
  }
  fftw_execute_dft_r2c(plans_->forward, real.get(), freq.get());
  otf_re_.resize(n_freq);
  otf_im_.resize(n_freq);
  for (std::size_t i = 0; i < n_freq; ++i) {
    otf_re_[i] = freq.get()[i][0];
    otf_im_[i] = freq.get()[i][1];
  }
}

WienerFilter::~WienerFilter() = default;

Grid2D WienerFilter::apply(const Grid2D& image, double lambda) const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be positive");
  if (image.width != width_ || image.height != height_) {
    throw std::invalid_argument("image size does not match the Wiener filter");
  }
  const std::size_t n_real = static_cast<std::size_t>(padded_w_) * padded_h_;
  const std::size_t n_freq = otf_re_.size();
  auto real = fftw_buffer<double>(n_real);
  auto freq = fftw_buffer<fftw_complex>(n_freq);

  std::vector<int> sx(padded_w_);
  for (int x = 0; x < padded_w_; ++x) sx[x] = reflect_index(x - pad_, width_);
  for (int y = 0; y < padded_h_; ++y) {
    const double* row = image.values.data() + static_cast<std::size_t>(reflect_index(y - pad_, height_)) * width_;
    double* dst = real.get() + static_cast<std::size_t>(y) * padded_w_;
    for (int x = 0; x < padded_w_; ++x) dst[x] = row[sx[x]];
  }
  fftw_execute_dft_r2c(plans_->forward, real.get(), freq.get());
  const double norm = 1.0 / static_cast<double>(n_real);
  for (std::size_t i = 0; i < n_freq; ++i) {
    const double hr = otf_re_[i], hi = otf_im_[i];
    const double yr = freq.get()[i][0], yi = freq.get()[i][1];
    const double g = norm / (hr * hr + hi * hi + lambda);
    // conj(H) * Y
    freq.get()[i][0] = (hr * yr + hi * yi) * g;
    freq.get()[i][1] = (hr * yi - hi * yr) * g;
  }
  fftw_execute_dft_c2r(plans_->inverse, freq.get(), real.get());

  Grid2D out(width_, height_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      out.at(x, y) = real.get()[static_cast<std::size_t>(y + pad_) * padded_w_ + (x + pad_)];
    }
  }
  return out;
}

Grid2D wiener_deconvolve(const Grid2D& image, const PsfModel& psf, double lambda) {
  return WienerFilter(image.width, image.height, psf).apply(image, lambda);
}

std::vector<double> disk_extract(const Grid2D& filtered, const ArrayGeometry& geometry,
                                 const DiskKernel& kernel) {
  const int w = filtered.width;
  const int h = filtered.height;
  int reach = 0;
  for (const auto& t : kernel.taps) reach = std::max({reach, std::abs(t.dx), std::abs(t.dy)});
  auto disk_value = [&](int px, int py) {
    double s = 0.0;
    if (px >= reach && py >= reach && px + reach < w && py + reach < h) {
      for (const auto& t : kernel.taps) s += t.weight * filtered.at(px + t.dx, py + t.dy);
      return s;
    }
    for (const auto& t : kernel.taps) {
      s += t.weight * filtered.at(reflect_index(px + t.dx, w), reflect_index(py + t.dy, h));
    }
    return s;
  };
  std::vector<double> out(geometry.n_sites());
  for (int s = 0; s < geometry.n_sites(); ++s) {
    const Point2 c = geometry.site_position(s);
    if (!(c.x >= 0.0 && c.x <= w - 1 && c.y >= 0.0 && c.y <= h - 1)) {
      throw std::out_of_range("site " + std::to_string(s) + " lies outside the filtered image");
    }
    const int x0 = std::min(static_cast<int>(std::floor(c.x)), w - 1);
    const int y0 = std::min(static_cast<int>(std::floor(c.y)), h - 1);
    const double fx = c.x - x0;
    const double fy = c.y - y0;
    double v = (1.0 - fx) * (1.0 - fy) * disk_value(x0, y0);
    if (fx > 0.0) v += fx * (1.0 - fy) * disk_value(x0 + 1, y0);
    if (fy > 0.0) v += (1.0 - fx) * fy * disk_value(x0, y0 + 1);
    if (fx > 0.0 && fy > 0.0) v += fx * fy * disk_value(x0 + 1, y0 + 1);
    out[s] = v;
  }
  return out;
}

std::vector<double> disk_extract(const Grid2D& filtered, const ArrayGeometry& geometry, double d) {
  return disk_extract(filtered, geometry, make_disk_kernel(d));
}

DeconvEstimator::DeconvEstimator(ArrayGeometry geometry, PsfModel psf)
    : geometry_(std::move(geometry)), psf_(psf), wiener_(geometry_.width(), geometry_.height(), psf_) {}

Grid2D DeconvEstimator::centered(std::span<const double> pixels) const {
  if (pixels.size() != static_cast<std::size_t>(geometry_.n_pixels())) {
    throw std::invalid_argument("image length does not match the geometry");
  }
  const double mean = std::accumulate(pixels.begin(), pixels.end(), 0.0) / static_cast<double>(pixels.size());
  Grid2D g(geometry_.width(), geometry_.height());
  for (std::size_t i = 0; i < pixels.size(); ++i) g.values[i] = pixels[i] - mean;
  return g;
}

std::vector<double> DeconvEstimator::estimate(std::span<const double> pixels, const DeconvConfig& config,
                                              bool remove_mean) const {
  config.validate();
  Grid2D image = remove_mean
                     ? centered(pixels)
                     : Grid2D(geometry_.width(), geometry_.height(), std::vector<double>(pixels.begin(), pixels.end()));
  return disk_extract(filter(image, config.lambda), geometry_, config.disk_radius);
}

std::vector<double> deconv_estimate(const ImageSample& image, const ArrayGeometry& geometry,
                                    const PsfModel& psf, const DeconvConfig& config,
                                    const AffineCalibration& calibration) {
  std::vector<double> x = DeconvEstimator(geometry, psf).estimate(image.pixels, config);
  calibration.apply(x);
  return x;
}

}  // namespace atomdet
