#include "mcae/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "mcae/segcap.hpp"
#include "mcae/snicap.hpp"

namespace mcae::analysis {

namespace fs = std::filesystem;

namespace {

template <typename T>
TransformReading read_matrix(std::span<const T, 9> B, double tol) {
  auto at = [&](int r, int c) { return static_cast<double>(B[3 * r + c]); };
  for (int i = 0; i < 9; ++i)
    if (!std::isfinite(at(i / 3, i % 3))) throw ValidationError("transform has non-finite entries");
  if (std::abs(at(2, 0)) > tol || std::abs(at(2, 1)) > tol || std::abs(at(2, 2) - 1.0) > tol) {
    throw ValidationError("not a homogeneous 2D transform (last row must be 0 0 1)");
  }
  if (std::abs(at(0, 0) - at(1, 1)) > tol || std::abs(at(0, 1) + at(1, 0)) > tol) {
    throw ValidationError("not a similarity: linear part is not a scaled rotation");
  }
  TransformReading r;
  r.scale = std::hypot(at(0, 0), at(1, 0));
  if (!(r.scale > 0) || r.scale > 1.0 + tol) {
    throw ValidationError("similarity scale " + std::to_string(r.scale) + " outside (0, 1)");
  }
  r.x = at(0, 2);
  r.y = at(1, 2);
  if (std::abs(r.x) > snicap::kTranslationLimit + tol || std::abs(r.y) > snicap::kTranslationLimit + tol) {
    throw ValidationError("translation outside the clamped range");
  }
  r.phi = std::atan2(at(1, 0), at(0, 0)) * 180.0 / std::numbers::pi;
  if (r.phi <= -180.0) r.phi += 360.0;
  return r;
}

}  // namespace

TransformReading extract_reading(std::span<const double, 9> B, double tol) { return read_matrix(B, tol); }
TransformReading extract_reading(std::span<const float, 9> B, double tol) { return read_matrix(B, tol); }

std::vector<SegmentEntry> top_k_segments(std::span<const float> nu, std::span<const float> B, int k) {
  const int M = static_cast<int>(nu.size());
  if (B.size() != static_cast<std::size_t>(M) * 9) throw ConfigError("top_k_segments: need one 3x3 matrix per capsule");
  if (k < 0 || k > M) throw ConfigError("top_k_segments: k must be in [0, M]");
  std::vector<int> ids(M);
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return nu[a] > nu[b]; });
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  std::vector<SegmentEntry> out;
  for (int id : ids) {
    SegmentEntry e;
    e.id = id;
    e.nu = nu[id];
    e.reading = extract_reading(std::span<const float, 9>(B.data() + 9 * static_cast<std::size_t>(id), 9));
    out.push_back(e);
  }
  return out;
}

Tensor<float> render_segment_template(const Tensor<float>& P, const Tensor<float>& alpha, const Tensor<float>& templates) {
  if (P.rank() != 3 || P.dim(2) != 9) throw ConfigError("render_segment_template: P must be S x N x 9");
  if (alpha.shape != (Shape{P.dim(0), P.dim(1)})) throw ConfigError("render_segment_template: alpha must be S x N");
  Tape<float> tape(false);
  Var<float> x = snicap::snippet_decode(tape.constant(P), tape.constant(alpha), tape.constant(templates));
  const int S = P.dim(0), l = templates.dim(1);
  Tensor<float> out = x.value();
  out.shape = {S * l, 2};
  return out;
}

Tensor<float> segment_template(const Mcae<float>& model, int k) {
  const auto& cfg = model.config();
  if (cfg.single_layer || !model.segment_top()) throw ConfigError("single-layer models have no segment templates");
  if (k < 0 || k >= cfg.segments) throw ConfigError("segment id out of range");
  const int S = cfg.snippets(), N = cfg.capsules;
  const auto& top = model.segment_top()->value;
  const auto& alpha = model.segment_alpha()->value;
  Tensor<float> P(Shape{S, N, 9});
  Tensor<float> a(Shape{S, N});
  for (int q = 0; q < S * N; ++q) {
    std::copy_n(top.data.begin() + (static_cast<std::size_t>(k) * S * N + q) * 6, 6, P.data.begin() + 9 * q);
    P.data[9 * q + 8] = 1.0f;
    a.data[q] = alpha.data[static_cast<std::size_t>(k) * S * N + q];
  }
  return render_segment_template(P, a, model.snippet_templates().value);
}

std::vector<SegmentEntry> analyze(const Mcae<float>& model, std::span<const float> xy, int k) {
  const int L = model.config().length;
  if (xy.size() != static_cast<std::size_t>(L) * 2) throw ConfigError("analyze: trajectory must have L x 2 values");
  if (model.config().single_layer) throw ConfigError("analyze: needs a two-layer model");
  Tape<float> tape(false);
  const auto out = model.forward(tape, Tensor<float>(Shape{1, L, 2}, std::vector<float>(xy.begin(), xy.end())), false);
  return top_k_segments(out.nu.value().data, out.Bm.value().data, k);
}

std::vector<float> centered(std::span<const float> xy) {
  const std::size_t n = xy.size() / 2;
  double cx = 0, cy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cx += xy[2 * i];
    cy += xy[2 * i + 1];
  }
  cx /= n;
  cy /= n;
  std::vector<float> out(xy.size());
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = static_cast<float>(xy[2 * i] - cx);
    out[2 * i + 1] = static_cast<float>(xy[2 * i + 1] - cy);
  }
  return out;
}

namespace {

void append(std::vector<SweepRow>& rows, double value, const std::vector<SegmentEntry>& top) {
  for (std::size_t r = 0; r < top.size(); ++r) rows.push_back({value, static_cast<int>(r), top[r]});
}

}  // namespace

std::vector<SweepRow> rotation_sweep(const Mcae<float>& model, std::span<const float> xy,
                                     const std::vector<double>& angles_deg, int k) {
  const std::vector<float> base = centered(xy);
  std::vector<SweepRow> rows;
  for (double theta : angles_deg) {
    // clockwise by theta
    const double a = -theta * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    std::vector<float> v(base.size());
    for (std::size_t i = 0; i + 1 < base.size(); i += 2) {
      v[i] = static_cast<float>(c * base[i] - s * base[i + 1]);
      v[i + 1] = static_cast<float>(s * base[i] + c * base[i + 1]);
    }
    append(rows, theta, analyze(model, v, k));
  }
  return rows;
}

std::vector<SweepRow> translation_sweep(const Mcae<float>& model, std::span<const float> xy,
                                        const std::vector<double>& offsets, int k) {
  const std::vector<float> base = centered(xy);
  std::vector<SweepRow> rows;
  for (double d : offsets) {
    std::vector<float> v(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) v[i] = static_cast<float>(base[i] + d);
    append(rows, d, analyze(model, v, k));
  }
  return rows;
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows, const std::string& first_column) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << first_column << ",rank,segment_id,nu,phi,tx,ty\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%g,%d,%d,%.6f,%.4f,%.6f,%.6f\n", r.value, r.rank, r.entry.id, r.entry.nu,
                  r.entry.reading.phi, r.entry.reading.x, r.entry.reading.y);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

// ----------------------------------------------------------------- export

namespace {

struct Curve {
  int id;
  std::vector<std::array<float, 2>> pts;
};

std::vector<Curve> snippet_curves(const Mcae<float>& model) {
  const auto& t = model.snippet_templates().value;
  const int N = t.dim(0), l = t.dim(1);
  std::vector<Curve> out;
  for (int i = 0; i < N; ++i) {
    Curve c{i, {}};
    for (int j = 0; j < l; ++j) c.pts.push_back({t.data[(i * l + j) * 2], t.data[(i * l + j) * 2 + 1]});
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Curve> segment_curves(const Mcae<float>& model, int count) {
  std::vector<Curve> out;
  if (model.config().single_layer || count <= 0) return out;
  const int M = model.config().segments;
  count = std::min(count, M);
  for (int i = 0; i < count; ++i) {
    const int k = static_cast<int>(static_cast<long>(i) * M / count);
    const Tensor<float> seq = segment_template(model, k);
    Curve c{k, {}};
    for (int j = 0; j < seq.dim(0); ++j) c.pts.push_back({seq.data[2 * j], seq.data[2 * j + 1]});
    out.push_back(std::move(c));
  }
  return out;
}

void write_csv(const fs::path& path, const std::vector<Curve>& curves) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "template_id,step,x,y\n";
  char buf[96];
  for (const auto& c : curves)
    for (std::size_t j = 0; j < c.pts.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%d,%zu,%.6f,%.6f\n", c.id, j, c.pts[j][0], c.pts[j][1]);
      out << buf;
    }
  if (!out) throw IoError("write failed for " + path.string());
}

// time runs blue -> red along each polyline
std::string step_color(std::size_t j, std::size_t n) {
  const double u = n > 2 ? static_cast<double>(j) / (n - 2) : 0.0;
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(43 + u * (215 - 43)),
                static_cast<int>(131 + u * (25 - 131)), static_cast<int>(186 + u * (28 - 186)));
  return buf;
}

void write_svg(const fs::path& path, const std::vector<Curve>& curves, const std::string& title) {
  const int cols = 4, cell = 160, pad = 10;
  const int rows = std::max<int>(1, (static_cast<int>(curves.size()) + cols - 1) / cols);
  const int w = cols * cell, h = rows * cell + 24;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"8\" y=\"16\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
  char buf[256];
  for (std::size_t n = 0; n < curves.size(); ++n) {
    const auto& c = curves[n];
    const double ox = (n % cols) * cell, oy = 24 + (n / cols) * cell;
    double peak = 1e-6;
    for (const auto& p : c.pts) peak = std::max({peak, std::abs(double(p[0])), std::abs(double(p[1]))});
    const double half = (cell - 2 * pad) / 2.0;
    auto px = [&](float x) { return ox + cell / 2.0 + x / peak * half; };
    auto py = [&](float y) { return oy + cell / 2.0 - y / peak * half; };
    std::snprintf(buf, sizeof buf,
                  "<g id=\"template-%d\">\n<rect x=\"%.1f\" y=\"%.1f\" width=\"%d\" height=\"%d\" fill=\"none\" "
                  "stroke=\"#dddddd\"/>\n<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\">%d</text>\n",
                  c.id, ox, oy, cell, cell, ox + 4, oy + 12, c.id);
    out << buf;
    for (std::size_t j = 0; j + 1 < c.pts.size(); ++j) {
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" stroke-width=\"2\"/>\n",
                    px(c.pts[j][0]), py(c.pts[j][1]), px(c.pts[j + 1][0]), py(c.pts[j + 1][1]),
                    step_color(j, c.pts.size()).c_str());
      out << buf;
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<fs::path> export_templates(const Mcae<float>& model, const fs::path& dir, ExportFormat format,
                                       int segments) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  const auto snippets = snippet_curves(model);
  const auto segs = segment_curves(model, segments);
  const std::string ext = format == ExportFormat::svg ? ".svg" : ".csv";
  auto emit = [&](const std::vector<Curve>& curves, const std::string& stem, const std::string& title) {
    const fs::path p = dir / (stem + ext);
    if (format == ExportFormat::svg) {
      write_svg(p, curves, title);
    } else {
      write_csv(p, curves);
    }
    files.push_back(p);
  };
  emit(snippets, "snippet_templates", "snippet templates");
  if (!segs.empty()) emit(segs, "segment_templates", "segment templates");
  return files;
}

}  // namespace mcae::analysis
