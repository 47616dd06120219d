#include "ssk/landmarks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "ssk/log.hpp"

namespace ssk {
namespace {

std::vector<std::size_t> range(std::size_t a, std::size_t b) {
  std::vector<std::size_t> v;
  if (a <= b)
    for (std::size_t i = a; i <= b; ++i) v.push_back(i);
  else
    for (std::size_t i = a + 1; i-- > b;) v.push_back(i);
  return v;
}

std::vector<std::size_t> concat(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Dense Gaussian elimination with partial pivoting; systems here have at most
// a few dozen unknowns.
std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    if (a[c][c] == 0.0) throw std::runtime_error("spline: singular system");
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      if (f == 0.0) continue;
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

// Second derivatives of a 1-D cubic spline through (t, y).
std::vector<double> spline_moments(const std::vector<double>& t, const std::vector<double>& y, bool periodic,
                                   double slope0, double slope1) {
  if (periodic) {
    // t and y have n+1 entries with y[n] == y[0]; unknowns M_0..M_{n-1}.
    const std::size_t n = y.size() - 1;
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    std::vector<double> rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t im = (i + n - 1) % n, ip = (i + 1) % n;
      const double hp = t[i == 0 ? n : i] - t[i == 0 ? n - 1 : i - 1];
      const double hn = t[i + 1] - t[i];
      const double yp = y[i == 0 ? n - 1 : i - 1];
      a[i][im] += hp / 6.0;
      a[i][i] += (hp + hn) / 3.0;
      a[i][ip] += hn / 6.0;
      rhs[i] = (y[i + 1] - y[i]) / hn - (y[i] - yp) / hp;
    }
    auto m = solve(a, rhs);
    m.push_back(m[0]);
    return m;
  }
  const std::size_t n = y.size();
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  std::vector<double> rhs(n);
  const double h0 = t[1] - t[0], hl = t[n - 1] - t[n - 2];
  a[0][0] = h0 / 3.0;
  a[0][1] = h0 / 6.0;
  rhs[0] = (y[1] - y[0]) / h0 - slope0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double hp = t[i] - t[i - 1], hn = t[i + 1] - t[i];
    a[i][i - 1] = hp / 6.0;
    a[i][i] = (hp + hn) / 3.0;
    a[i][i + 1] = hn / 6.0;
    rhs[i] = (y[i + 1] - y[i]) / hn - (y[i] - y[i - 1]) / hp;
  }
  a[n - 1][n - 2] = hl / 6.0;
  a[n - 1][n - 1] = hl / 3.0;
  rhs[n - 1] = slope1 - (y[n - 1] - y[n - 2]) / hl;
  return solve(a, rhs);
}

double eval_segment(double t0, double t1, double y0, double y1, double m0, double m1, double t) {
  const double h = t1 - t0;
  const double a = (t1 - t) / h, b = (t - t0) / h;
  return a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
}

// Samples a spline through `pts` (pts.front() == pts.back() when periodic),
// appending every sample except the final knot.
void sample_spline(const std::vector<Point>& pts, bool periodic, std::size_t samples, std::vector<Point>& out) {
  const std::size_t n = pts.size();
  if (n == 2) {
    for (std::size_t s = 0; s < samples; ++s) {
      const double u = double(s) / double(samples);
      out.push_back({pts[0].x + u * (pts[1].x - pts[0].x), pts[0].y + u * (pts[1].y - pts[0].y)});
    }
    return;
  }
  std::vector<double> t(n, 0.0), xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = pts[i].x;
    ys[i] = pts[i].y;
    if (i) t[i] = t[i - 1] + std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  }
  const double h0 = t[1] - t[0], hl = t[n - 1] - t[n - 2];
  const auto mx = spline_moments(t, xs, periodic, (xs[1] - xs[0]) / h0, (xs[n - 1] - xs[n - 2]) / hl);
  const auto my = spline_moments(t, ys, periodic, (ys[1] - ys[0]) / h0, (ys[n - 1] - ys[n - 2]) / hl);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t s = 0; s < samples; ++s) {
      const double tt = t[i] + (t[i + 1] - t[i]) * double(s) / double(samples);
      out.push_back({eval_segment(t[i], t[i + 1], xs[i], xs[i + 1], mx[i], mx[i + 1], tt),
                     eval_segment(t[i], t[i + 1], ys[i], ys[i + 1], my[i], my[i + 1], tt)});
    }
  }
}

}  // namespace

const std::vector<RegionContour>& landmark_regions() {
  static const std::vector<RegionContour> regions = {
      {"skin", kSkin, concat(range(0, 16), range(26, 17)), {0, 16, 26, 17}},
      {"outer_mouth", kOuterMouth, range(48, 59), {48, 54}},
      {"inner_mouth", kInnerMouth, range(60, 67), {60, 64}},
      {"left_eye", kEyes, range(36, 41), {36, 39}},
      {"right_eye", kEyes, range(42, 47), {42, 45}},
  };
  return regions;
}

std::vector<Point> closed_cubic_spline(const std::vector<Point>& points, const std::vector<std::size_t>& corners,
                                       std::size_t samples_per_segment) {
  if (points.size() < 3) throw std::invalid_argument("closed_cubic_spline: need at least 3 points");
  if (samples_per_segment == 0) throw std::invalid_argument("closed_cubic_spline: zero samples per segment");
  for (auto c : corners)
    if (c >= points.size()) throw std::invalid_argument("closed_cubic_spline: corner index out of range");

  // Drop consecutive duplicates (cyclically), carrying corner flags over.
  std::vector<Point> pts;
  std::vector<bool> corner;
  bool dropped = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const bool is_corner = std::find(corners.begin(), corners.end(), i) != corners.end();
    if (!pts.empty() && points[i] == pts.back()) {
      dropped = true;
      if (is_corner) corner.back() = true;
      continue;
    }
    pts.push_back(points[i]);
    corner.push_back(is_corner);
  }
  while (pts.size() > 1 && pts.back() == pts.front()) {
    dropped = true;
    if (corner.back()) corner.front() = true;
    pts.pop_back();
    corner.pop_back();
  }
  if (dropped) log_warn("closed_cubic_spline: consecutive duplicate points removed");
  if (pts.size() < 3) {
    std::vector<Point> out = pts;
    out.push_back(pts.front());
    return out;
  }

  const std::size_t n = pts.size();
  std::vector<Point> out;
  std::vector<std::size_t> cidx;
  for (std::size_t i = 0; i < n; ++i)
    if (corner[i]) cidx.push_back(i);
  if (cidx.empty()) {
    std::vector<Point> loop = pts;
    loop.push_back(pts.front());
    sample_spline(loop, true, samples_per_segment, out);
  } else {
    for (std::size_t k = 0; k < cidx.size(); ++k) {
      const std::size_t a = cidx[k], b = cidx[(k + 1) % cidx.size()];
      std::vector<Point> piece{pts[a]};
      for (std::size_t i = (a + 1) % n;; i = (i + 1) % n) {
        piece.push_back(pts[i]);
        if (i == b) break;
      }
      sample_spline(piece, false, samples_per_segment, out);
    }
  }
  out.push_back(out.front());
  return out;
}

double polygon_area(const std::vector<Point>& polygon) {
  double a = 0;
  for (std::size_t i = 0; i + 1 < polygon.size(); ++i)
    a += polygon[i].x * polygon[i + 1].y - polygon[i + 1].x * polygon[i].y;
  return 0.5 * a;
}

void fill_polygon(MaskFrame& mask, const std::vector<Point>& polygon, std::uint8_t cls) {
  if (polygon.size() < 2) return;
  std::vector<double> xs;
  for (std::size_t y = 0; y < mask.height; ++y) {
    const double yc = double(y) + 0.5;
    xs.clear();
    for (std::size_t i = 0; i + 1 < polygon.size(); ++i) {
      const Point& p = polygon[i];
      const Point& q = polygon[i + 1];
      // Half-open rule so a vertex on the scanline is counted once.
      if ((p.y <= yc && yc < q.y) || (q.y <= yc && yc < p.y)) {
        xs.push_back(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Pixels whose centre lies in [xs[k], xs[k+1]).
      const double lo = std::ceil(xs[k] - 0.5), hi = std::ceil(xs[k + 1] - 0.5);
      const long x0 = std::max(0L, long(lo));
      const long x1 = std::min(long(mask.width), long(hi));
      for (long x = x0; x < x1; ++x) mask.at(std::size_t(x), y) = cls;
    }
  }
}

MaskFrame landmarks_to_mask(const LandmarkFrame& lm, std::size_t width, std::size_t height,
                            std::size_t samples_per_segment) {
  if (width == 0 || height == 0) throw std::invalid_argument("landmarks_to_mask: empty frame");
  for (const auto& p : lm)
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw std::invalid_argument("landmarks_to_mask: non-finite point");
  MaskFrame mask(width, height, kBackground);
  for (const auto& region : landmark_regions()) {
    std::vector<Point> pts;
    std::vector<std::size_t> corners;
    for (std::size_t i = 0; i < region.indices.size(); ++i) {
      pts.push_back(lm[region.indices[i]]);
      if (std::find(region.corners.begin(), region.corners.end(), region.indices[i]) != region.corners.end())
        corners.push_back(i);
    }
    const auto poly = closed_cubic_spline(pts, corners, samples_per_segment);
    if (std::abs(polygon_area(poly)) < 1e-6) {
      log(LogLevel::Debug, "landmarks_to_mask: region " + region.name + " has zero area; skipped");
      continue;
    }
    fill_polygon(mask, poly, region.cls);
  }
  return mask;
}

LandmarkFrame read_pts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read landmark file " + path.string());
  LandmarkFrame lm;
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const char c = line[first];
    if (c == '{' || c == '}' || std::isalpha(static_cast<unsigned char>(c))) continue;
    std::istringstream ss(line);
    Point p;
    if (!(ss >> p.x >> p.y)) throw std::runtime_error(path.string() + ": malformed landmark line '" + line + "'");
    if (n == kNumLandmarks) throw std::runtime_error(path.string() + ": more than 68 landmarks");
    lm[n++] = p;
  }
  if (n != kNumLandmarks) {
    throw std::runtime_error(path.string() + ": expected 68 landmarks, found " + std::to_string(n));
  }
  return lm;
}

void write_pts(const std::filesystem::path& path, const LandmarkFrame& lm) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write landmark file " + path.string());
  out << "version: 1\nn_points: 68\n{\n" << std::setprecision(10);
  for (const auto& p : lm) out << p.x << ' ' << p.y << '\n';
  out << "}\n";
}

}  // namespace ssk
