#pragma once

// Mollweide rendering of SO(3) marginals: the image of a canonical object
// axis gives the position on the sphere, the remaining rotation about that
// axis gives the hue, and probability mass gives the intensity.

#include <fstream>

#include "spyro/inference.hpp"

namespace spyro {

struct MollweideOptions {
  int width = 512;
  int height = 256;
  bool grayscale = false;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitX();
  std::optional<UnitQuaternion> truth;
};

struct SpherePoint {
  double x = 0.0, y = 0.0;  // Mollweide plane, x in [−2√2, 2√2], y in [−√2, √2]
  double hue = 0.0;         // [0, 1)
};

/// Mollweide coordinates of a unit direction (longitude atan2(y, x), latitude asin z).
inline Eigen::Vector2d mollweide_forward(const Eigen::Vector3d& d) {
  const double lon = std::atan2(d.y(), d.x());
  const double lat = std::asin(std::clamp(d.z(), -1.0, 1.0));
  double theta = lat;
  if (std::abs(std::abs(lat) - kPi / 2) > 1e-9) {
    const double target = kPi * std::sin(lat);
    for (int i = 0; i < 50; ++i) {
      const double f = 2.0 * theta + std::sin(2.0 * theta) - target;
      const double df = 2.0 + 2.0 * std::cos(2.0 * theta);
      if (df < 1e-15) break;
      const double step = f / df;
      theta -= step;
      if (std::abs(step) < 1e-13) break;
    }
  }
  return {2.0 * std::sqrt(2.0) / kPi * lon * std::cos(theta), std::sqrt(2.0) * std::sin(theta)};
}

/// Axis direction in the Mollweide plane; the hue is the roll ψ in
/// R·G⁻¹ = Rz(lon)·Ry(−lat)·Rx(ψ), where G is the fixed rotation taking the
/// axis to +x. Continuous everywhere except at the poles.
inline SpherePoint rotation_to_sphere(const UnitQuaternion& q, const Eigen::Vector3d& axis) {
  const Eigen::Vector3d a = axis.normalized();
  const Eigen::Vector3d d = q.rotate(a);
  const Eigen::Vector2d xy = mollweide_forward(d);
  Eigen::Matrix3d g = Eigen::Quaterniond::FromTwoVectors(a, Eigen::Vector3d::UnitX()).toRotationMatrix();
  if (a.x() < -1.0 + 1e-12) g = Eigen::AngleAxisd(kPi, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const double lon = std::atan2(d.y(), d.x());
  const double lat = std::asin(std::clamp(d.z(), -1.0, 1.0));
  const Eigen::Matrix3d frame = (Eigen::AngleAxisd(lon, Eigen::Vector3d::UnitZ()) *
                                 Eigen::AngleAxisd(-lat, Eigen::Vector3d::UnitY())).toRotationMatrix();
  const Eigen::Matrix3d roll = frame.transpose() * q.matrix() * g.transpose();
  double hue = std::atan2(roll(2, 1), roll(1, 1)) / kTwoPi;
  hue -= std::floor(hue);
  return {xy.x(), xy.y(), hue};
}

inline Eigen::Vector3d hue_to_rgb(double h) {
  const double s = 6.0 * (h - std::floor(h));
  const int i = static_cast<int>(s) % 6;
  const double f = s - std::floor(s);
  switch (i) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

class MollweideImage {
 public:
  MollweideImage(int width, int height) : w_(width), h_(height), mass_(std::size_t(width) * height, 0.0),
                                          color_(std::size_t(width) * height, Eigen::Vector3d::Zero()) {
    if (width < 8 || height < 4) throw ConfigError("image too small");
  }

  int width() const { return w_; }
  int height() const { return h_; }

  Eigen::Vector2d to_pixel(double x, double y) const {
    return {(x / (2.0 * std::sqrt(2.0)) + 1.0) * 0.5 * w_, (1.0 - y / std::sqrt(2.0)) * 0.5 * h_};
  }

  bool inside_ellipse(int px, int py) const {
    const double u = (px + 0.5) / w_ * 2.0 - 1.0;
    const double v = (py + 0.5) / h_ * 2.0 - 1.0;
    return u * u + v * v <= 1.0;
  }

  /// Deposits `mass` at a plane point, split bilinearly over the four nearest pixels.
  void deposit(const SpherePoint& p, double mass) {
    const Eigen::Vector2d c = to_pixel(p.x, p.y) - Eigen::Vector2d(0.5, 0.5);
    const int x0 = static_cast<int>(std::floor(c.x())), y0 = static_cast<int>(std::floor(c.y()));
    const double fx = c.x() - x0, fy = c.y() - y0;
    const Eigen::Vector3d rgb = hue_to_rgb(p.hue);
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    for (int k = 0; k < 4; ++k) {
      const int x = std::clamp(x0 + (k & 1), 0, w_ - 1), y = std::clamp(y0 + (k >> 1), 0, h_ - 1);
      const std::size_t i = std::size_t(y) * w_ + x;
      mass_[i] += mass * w[k];
      color_[i] += mass * w[k] * rgb;
    }
  }

  /// Separable Gaussian blur that scatters each pixel over its in-bounds
  /// neighbours with renormalized weights, so the painted total is unchanged.
  void blur(double sigma) {
    if (!(sigma > 0.0)) return;
    const int reach = static_cast<int>(std::ceil(2.5 * sigma));
    std::vector<double> kernel(2 * reach + 1);
    for (int d = -reach; d <= reach; ++d) kernel[d + reach] = std::exp(-0.5 * d * d / (sigma * sigma));
    auto pass = [&](bool horizontal) {
      std::vector<double> mass(mass_.size(), 0.0);
      std::vector<Eigen::Vector3d> color(color_.size(), Eigen::Vector3d::Zero());
      const int len = horizontal ? w_ : h_;
      for (int y = 0; y < h_; ++y)
        for (int x = 0; x < w_; ++x) {
          const std::size_t i = std::size_t(y) * w_ + x;
          if (mass_[i] == 0.0) continue;
          const int pos = horizontal ? x : y;
          double total = 0.0;
          for (int d = std::max(-reach, -pos); d <= std::min(reach, len - 1 - pos); ++d) total += kernel[d + reach];
          for (int d = std::max(-reach, -pos); d <= std::min(reach, len - 1 - pos); ++d) {
            const std::size_t j = horizontal ? i + d : i + std::ptrdiff_t(d) * w_;
            const double f = kernel[d + reach] / total;
            mass[j] += f * mass_[i];
            color[j] += f * color_[i];
          }
        }
      mass_.swap(mass);
      color_.swap(color);
    };
    pass(true);
    pass(false);
  }

  const std::vector<double>& mass() const { return mass_; }
  double painted_mass() const {
    double s = 0.0;
    for (double m : mass_) s += m;
    return s;
  }

  /// 8-bit RGB over a white background with a light gray ellipse.
  std::vector<std::uint8_t> rgb(bool grayscale) const {
    double peak = 0.0;
    for (double m : mass_) peak = std::max(peak, m);
    std::vector<std::uint8_t> out(std::size_t(w_) * h_ * 3, 255);
    for (int py = 0; py < h_; ++py)
      for (int px = 0; px < w_; ++px) {
        const std::size_t i = std::size_t(py) * w_ + px;
        Eigen::Vector3d pix = Eigen::Vector3d::Ones();
        if (inside_ellipse(px, py)) pix *= 0.97;
        if (peak > 0.0 && mass_[i] > 0.0) {
          const double alpha = mass_[i] / peak;
          const Eigen::Vector3d col = grayscale ? Eigen::Vector3d::Zero() : Eigen::Vector3d(color_[i] / mass_[i]);
          pix = (1.0 - alpha) * pix + alpha * col;
        }
        for (int k = 0; k < 3; ++k) out[3 * i + k] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(pix[k], 0.0, 1.0)));
      }
    for (const auto& [px, py, col] : marks_)
      for (int k = 0; k < 3; ++k) out[3 * (std::size_t(py) * w_ + px) + k] = col[k];
    return out;
  }

  /// Circle outline around a plane point, in the given hue (black in grayscale).
  void mark(const SpherePoint& p, double radius_px, bool grayscale) {
    const Eigen::Vector2d c = to_pixel(p.x, p.y);
    const Eigen::Vector3d rgb = grayscale ? Eigen::Vector3d::Zero() : hue_to_rgb(p.hue);
    const std::array<std::uint8_t, 3> col{static_cast<std::uint8_t>(255 * rgb[0]), static_cast<std::uint8_t>(255 * rgb[1]),
                                          static_cast<std::uint8_t>(255 * rgb[2])};
    const int steps = std::max(32, static_cast<int>(8 * radius_px));
    for (int s = 0; s < steps; ++s) {
      const double t = kTwoPi * s / steps;
      for (double rr : {radius_px, radius_px + 1.0}) {
        const int px = static_cast<int>(std::floor(c.x() + rr * std::cos(t)));
        const int py = static_cast<int>(std::floor(c.y() + rr * std::sin(t)));
        if (px >= 0 && px < w_ && py >= 0 && py < h_) marks_.push_back({px, py, col});
      }
    }
  }

  void write_ppm(const std::string& path, bool grayscale) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write image '" + path + "'");
    out << "P6\n" << w_ << ' ' << h_ << "\n255\n";
    const auto bytes = rgb(grayscale);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }

 private:
  struct Mark {
    int x, y;
    std::array<std::uint8_t, 3> color;
  };
  int w_, h_;
  std::vector<double> mass_;
  std::vector<Eigen::Vector3d> color_;
  std::vector<Mark> marks_;
};

/// Paints every entry of the marginal at the centers of its cells at the
/// marginal's recursion (coarser entries are spread over their descendants).
inline MollweideImage render_mollweide(const So3Marginal& m, const MollweideOptions& opt) {
  MollweideImage img(opt.width, opt.height);
  const So3Grid grid;
  // Blur by the angular cell size on the sphere of axis directions, in pixels.
  const double nside = std::ldexp(1.0, m.recursion);
  const double cell_rad = std::sqrt(4.0 * kPi / (12.0 * nside * nside));
  const double radius = cell_rad * opt.width / kTwoPi;
  for (const auto& [key, mass] : m.mass) {
    if (mass <= 0.0) continue;
    const auto [r, index] = key;
    const CellIndex span = CellIndex{1} << (3 * (m.recursion - r));
    for (CellIndex j = 0; j < span; ++j) {
      const UnitQuaternion q = grid.center(So3CellId{m.recursion, index * span + j});
      img.deposit(rotation_to_sphere(q, opt.axis), mass / static_cast<double>(span));
    }
  }
  img.blur(radius);
  if (opt.truth) img.mark(rotation_to_sphere(*opt.truth, opt.axis), std::max(4.0, opt.width / 64.0), opt.grayscale);
  return img;
}

}  // namespace spyro
