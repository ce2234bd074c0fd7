#include "mcae/t20gen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mcae/binary_io.hpp"
#include "mcae/errors.hpp"

namespace mcae::t20 {

namespace {

constexpr double kPi = std::numbers::pi;

constexpr std::array<std::string_view, kPatternCount> kNames = {
    "triangle", "rectangle", "pentagon", "hexagon", "astroid",
    "circle", "heart", "hippopede", "lemniscate", "spiral",
    "line", "tanh", "parabola", "sine", "absolute-sine",
    "bell", "cuspidal-cubic", "cubic-asymptotic-to-line", "asymmetric-cubic-asymptotic-to-line",
    "cubic-asymptotic-to-cuspidal-cubic",
};

// Point on the perimeter of a regular k-gon inscribed in the unit circle, at
// perimeter fraction u in [0, 1].
Point polygon_point(int k, double phase, double u) {
  const double pos = u * k;
  int edge = std::min(static_cast<int>(pos), k - 1);
  const double f = pos - edge;
  const double a0 = phase + 2 * kPi * edge / k;
  const double a1 = phase + 2 * kPi * (edge + 1) / k;
  return {(1 - f) * std::cos(a0) + f * std::cos(a1), (1 - f) * std::sin(a0) + f * std::sin(a1)};
}

// Archimedean spiral r = t over two turns, closed by the straight chord from
// its outer end back to the center; sampled at uniform arc length.
std::vector<Point> spiral_points(int n) {
  constexpr int kDense = 20000;
  const double t_end = 4 * kPi;
  std::vector<Point> dense;
  dense.reserve(kDense + 2);
  for (int i = 0; i <= kDense; ++i) {
    const double t = t_end * i / kDense;
    dense.push_back({t * std::cos(t), t * std::sin(t)});
  }
  const Point outer = dense.back();
  constexpr int kChord = 2000;
  for (int i = 1; i <= kChord; ++i) {
    const double f = static_cast<double>(i) / kChord;
    dense.push_back({(1 - f) * outer[0], (1 - f) * outer[1]});
  }
  std::vector<double> arc(dense.size(), 0.0);
  for (std::size_t i = 1; i < dense.size(); ++i)
    arc[i] = arc[i - 1] + std::hypot(dense[i][0] - dense[i - 1][0], dense[i][1] - dense[i - 1][1]);
  std::vector<Point> out;
  out.reserve(n);
  std::size_t seg = 1;
  for (int j = 0; j < n; ++j) {
    const double target = arc.back() * j / (n - 1);
    while (seg + 1 < arc.size() && arc[seg] < target) ++seg;
    const double span = arc[seg] - arc[seg - 1];
    const double f = span > 0 ? std::clamp((target - arc[seg - 1]) / span, 0.0, 1.0) : 0.0;
    out.push_back({(1 - f) * dense[seg - 1][0] + f * dense[seg][0], (1 - f) * dense[seg - 1][1] + f * dense[seg][1]});
  }
  return out;
}

std::vector<Point> raw_points(Pattern p, int n) {
  std::vector<Point> pts;
  pts.reserve(n);
  // closed curves: t_j = 2 pi j / (n - 1); open curves: x_j over [lo, hi]
  auto closed = [&](auto&& f) {
    for (int j = 0; j < n; ++j) pts.push_back(f(2 * kPi * j / (n - 1)));
  };
  auto polygon = [&](int k, double phase) {
    for (int j = 0; j < n; ++j) pts.push_back(polygon_point(k, phase, static_cast<double>(j) / (n - 1)));
  };
  auto open = [&](double lo, double hi, auto&& f) {
    for (int j = 0; j < n; ++j) pts.push_back(f(lo + (hi - lo) * j / (n - 1)));
  };
  switch (p) {
    case Pattern::kTriangle: polygon(3, kPi / 2); break;
    case Pattern::kRectangle: polygon(4, kPi / 4); break;
    case Pattern::kPentagon: polygon(5, kPi / 2); break;
    case Pattern::kHexagon: polygon(6, 0.0); break;
    case Pattern::kAstroid:
      closed([](double t) { return Point{std::pow(std::cos(t), 3), std::pow(std::sin(t), 3)}; });
      break;
    case Pattern::kCircle: closed([](double t) { return Point{std::cos(t), std::sin(t)}; }); break;
    case Pattern::kHeart:
      closed([](double t) {
        return Point{16 * std::pow(std::sin(t), 3),
                     13 * std::cos(t) - 5 * std::cos(2 * t) - 2 * std::cos(3 * t) - std::cos(4 * t)};
      });
      break;
    case Pattern::kHippopede:
      // r^2 = 4b(a - b sin^2 phi), a = 1, b = 0.6
      closed([](double t) {
        const double s = std::sin(t);
        const double r = std::sqrt(4 * 0.6 * (1.0 - 0.6 * s * s));
        return Point{r * std::cos(t), r * std::sin(t)};
      });
      break;
    case Pattern::kLemniscate:
      closed([](double t) {
        const double d = 1 + std::sin(t) * std::sin(t);
        return Point{std::cos(t) / d, std::sin(t) * std::cos(t) / d};
      });
      break;
    case Pattern::kSpiral: pts = spiral_points(n); break;
    case Pattern::kLine: open(-1, 1, [](double x) { return Point{x, 0.0}; }); break;
    case Pattern::kTanh: open(-1, 1, [](double x) { return Point{x, std::tanh(3 * x)}; }); break;
    case Pattern::kParabola: open(-1, 1, [](double x) { return Point{x, x * x}; }); break;
    case Pattern::kSine: open(-1, 1, [](double x) { return Point{x, std::sin(kPi * x)}; }); break;
    case Pattern::kAbsoluteSine: open(-1, 1, [](double x) { return Point{x, std::abs(std::sin(kPi * x))}; }); break;
    case Pattern::kBell: open(-1, 1, [](double x) { return Point{x, std::exp(-4 * x * x)}; }); break;
    case Pattern::kCuspidalCubic: open(-1, 1, [](double t) { return Point{t * t, t * t * t}; }); break;
    case Pattern::kCubicAtLine: open(-1.5, 1.5, [](double x) { return Point{x, x * x * x - x}; }); break;
    case Pattern::kAsymmetricCubicAtLine:
      open(-1.5, 1.5, [](double x) { return Point{x, x * x * x - x * x}; });
      break;
    case Pattern::kCubicAtCuspidalCubic:
      open(-1.5, 1.5, [](double t) { return Point{t * t, t * t * t - t}; });
      break;
  }
  if (is_closed(p)) pts.back() = pts.front();
  return pts;
}

// Centroid of the distinct points (a closed curve's repeated end point is
// left out) goes to the origin, then max |coordinate| is scaled to 1.
void normalize(std::vector<Point>& pts, bool closed) {
  const std::size_t n = closed ? pts.size() - 1 : pts.size();
  double cx = 0, cy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cx += pts[i][0];
    cy += pts[i][1];
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  double m = 0;
  for (auto& q : pts) {
    q[0] -= cx;
    q[1] -= cy;
    m = std::max({m, std::abs(q[0]), std::abs(q[1])});
  }
  if (m > 0)
    for (auto& q : pts) {
      q[0] /= m;
      q[1] /= m;
    }
}

// Traversal order of the canonical points for a given start and direction.
std::vector<Point> ordered_points(Pattern p, int length, int start, bool reversed) {
  std::vector<Point> canon = pattern_points(p, length);
  std::vector<Point> out(length);
  if (is_closed(p)) {
    const int cycle = length - 1;
    const int s = ((start % cycle) + cycle) % cycle;
    for (int j = 0; j < length; ++j) {
      const int idx = reversed ? ((s - j) % cycle + cycle) % cycle : (s + j) % cycle;
      out[j] = canon[idx];
    }
  } else {
    for (int j = 0; j < length; ++j) out[j] = canon[reversed ? length - 1 - j : j];
  }
  return out;
}

}  // namespace

std::string_view pattern_name(Pattern p) { return kNames.at(static_cast<int>(p)); }

Pattern pattern_from_index(int index) {
  if (index < 0 || index >= kPatternCount) throw ConfigError("unknown pattern index " + std::to_string(index));
  return static_cast<Pattern>(index);
}

Pattern pattern_from_name(std::string_view name) {
  for (int i = 0; i < kPatternCount; ++i)
    if (kNames[i] == name) return static_cast<Pattern>(i);
  throw ConfigError("unknown pattern '" + std::string(name) + "'");
}

bool is_closed(Pattern p) { return static_cast<int>(p) < 10; }

std::vector<Point> pattern_points(Pattern p, int n) {
  if (static_cast<int>(p) < 0 || static_cast<int>(p) >= kPatternCount) throw ConfigError("unknown pattern");
  if (n < 2) throw ConfigError("pattern_points needs n >= 2, got " + std::to_string(n));
  if (is_closed(p) && n < 3) throw ConfigError("closed patterns need n >= 3");
  std::vector<Point> pts = raw_points(p, n);
  normalize(pts, is_closed(p));
  return pts;
}

Sample render_sample(Pattern p, const Placement& pl, int length) {
  Sample s;
  s.label = static_cast<int>(p);
  s.provenance.theta = static_cast<float>(pl.theta);
  s.provenance.scale = static_cast<float>(pl.scale);
  s.provenance.tx = static_cast<float>(pl.tx);
  s.provenance.ty = static_cast<float>(pl.ty);
  const double c = std::cos(pl.theta), sn = std::sin(pl.theta);
  s.xy.resize(2 * static_cast<std::size_t>(length));
  const auto pts = ordered_points(p, length, pl.start, pl.reversed);
  for (int j = 0; j < length; ++j) {
    const double x = pl.scale * (c * pts[j][0] - sn * pts[j][1]) + pl.tx;
    const double y = pl.scale * (sn * pts[j][0] + c * pts[j][1]) + pl.ty;
    s.xy[2 * j] = static_cast<float>(std::clamp(x, -1.0, 1.0));
    s.xy[2 * j + 1] = static_cast<float>(std::clamp(y, -1.0, 1.0));
  }
  return s;
}

Sample sample_from_seed(Pattern p, std::uint64_t seed, int length) {
  Rng rng(seed);
  Placement pl;
  pl.start = is_closed(p) ? rng.uniform_int(length - 1) : 0;
  pl.reversed = rng.coin(0.5);
  // Provenance is stored as float32, so the curve is placed with the rounded
  // values to keep the recorded transform exact.
  pl.theta = static_cast<float>(rng.uniform(0.0, 2 * kPi));
  double scale = rng.uniform(0.3, 0.9);
  const auto canon = pattern_points(p, length);
  const double c = std::cos(pl.theta), sn = std::sin(pl.theta);
  double lo[2] = {1e9, 1e9}, hi[2] = {-1e9, -1e9};
  for (const auto& q : canon) {
    const double r[2] = {c * q[0] - sn * q[1], sn * q[0] + c * q[1]};
    for (int a = 0; a < 2; ++a) {
      lo[a] = std::min(lo[a], r[a]);
      hi[a] = std::max(hi[a], r[a]);
    }
  }
  // Rotated corners of square-like shapes can exceed the box; shrink so the
  // translation range is never empty.
  constexpr double kMargin = 1e-6;
  const double widest = std::max(hi[0] - lo[0], hi[1] - lo[1]);
  if (scale * widest > 2.0 - 4 * kMargin) scale = (2.0 - 4 * kMargin) / widest;
  pl.scale = static_cast<float>(scale);
  for (int a = 0; a < 2; ++a) {
    lo[a] *= pl.scale;
    hi[a] *= pl.scale;
  }
  pl.tx = static_cast<float>(rng.uniform(-1.0 - lo[0] + kMargin, 1.0 - hi[0] - kMargin));
  pl.ty = static_cast<float>(rng.uniform(-1.0 - lo[1] + kMargin, 1.0 - hi[1] - kMargin));
  Sample s = render_sample(p, pl, length);
  s.provenance.seed = seed;
  return s;
}

Sample sample_trajectory(Pattern p, Rng& rng, int length) { return sample_from_seed(p, rng.next_u64(), length); }

Sample sample_random(Rng& rng, int length) {
  const Pattern p = pattern_from_index(rng.uniform_int(kPatternCount));
  return sample_trajectory(p, rng, length);
}

std::vector<Sample> gen_test_set(int n, std::uint64_t seed, int length) {
  if (n < 0 || n % kPatternCount != 0)
    throw ConfigError("test set size must be a non-negative multiple of 20, got " + std::to_string(n));
  std::vector<Sample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i)
    out.push_back(sample_from_seed(pattern_from_index(i % kPatternCount), split_seed(seed, i), length));
  return out;
}

std::vector<std::uint8_t> serialize_dataset(std::span<const Sample> samples) {
  io::ByteWriter w;
  w.text("T20D");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  for (const Sample& s : samples) {
    if (s.length() != kTrajectoryLength) throw ConfigError("dataset files hold 32-step trajectories only");
    w.u32(static_cast<std::uint32_t>(s.label));
    for (float v : s.xy) w.f32(v);
    w.f32(s.provenance.theta);
    w.f32(s.provenance.scale);
    w.f32(s.provenance.tx);
    w.f32(s.provenance.ty);
    w.u64(s.provenance.seed);
  }
  return std::move(w.buffer());
}

std::vector<Sample> deserialize_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.text(4, "magic") != "T20D") throw ParseError("bad magic, expected T20D", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) throw ParseError("unsupported dataset version " + std::to_string(version), 4);
  const std::uint32_t count = r.u32("sample count");
  std::vector<Sample> out;
  out.reserve(std::min<std::size_t>(count, r.remaining() / kDatasetRecordBytes));
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample& s = out.emplace_back();
    const std::size_t at = r.offset();
    s.label = static_cast<int>(r.u32("label"));
    if (s.label < 0 || s.label >= kPatternCount) throw ParseError("label out of range", at);
    s.xy.resize(2 * kTrajectoryLength);
    for (float& v : s.xy) v = r.f32("coordinates");
    s.provenance.theta = r.f32("provenance");
    s.provenance.scale = r.f32("provenance");
    s.provenance.tx = r.f32("provenance");
    s.provenance.ty = r.f32("provenance");
    s.provenance.seed = r.u64("provenance seed");
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after last sample", r.offset());
  return out;
}

void save_dataset(const std::filesystem::path& path, std::span<const Sample> samples) {
  io::write_file(path, serialize_dataset(samples));
}

std::vector<Sample> load_dataset(const std::filesystem::path& path) { return deserialize_dataset(io::read_file(path)); }

}  // namespace mcae::t20
