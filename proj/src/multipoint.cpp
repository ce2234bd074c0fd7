#include "mcae/multipoint.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace mcae::multipoint {

void MultiPointSequence::validate() const {
  if (points.rank() != 3) throw DataError("multi-point sequence must be K x T x dim");
  if (frames() < 2) throw DataError("multi-point sequence needs at least 2 frames");
  if (dim() != 2 && dim() != 3) throw DataError("coordinates must be 2D or 3D, got dim " + std::to_string(dim()));
  for (float v : points.data)
    if (!std::isfinite(v)) throw DataError("sequence " + id + " has non-finite coordinates");
}

std::array<Tensor<float>, 3> project_3d_views(const Tensor<float>& seq) {
  if (seq.rank() != 3 || seq.dim(2) != 3) throw ConfigError("project_3d_views: expects K x T x 3");
  const int K = seq.dim(0), T = seq.dim(1);
  static constexpr int axes[3][2] = {{0, 1}, {1, 2}, {0, 2}};
  std::array<Tensor<float>, 3> out;
  for (int v = 0; v < 3; ++v) {
    out[v] = Tensor<float>(Shape{K, T, 2});
    for (std::size_t p = 0; p < static_cast<std::size_t>(K) * T; ++p) {
      out[v].data[2 * p] = seq.data[3 * p + axes[v][0]];
      out[v].data[2 * p + 1] = seq.data[3 * p + axes[v][1]];
    }
  }
  return out;
}

Normalized normalize_and_resample(const Tensor<float>& seq, int length) {
  if (seq.rank() != 3 || seq.dim(1) < 2) throw ConfigError("normalize_and_resample: expects K x T x dim with T >= 2");
  if (length < 2) throw ConfigError("normalize_and_resample: length must be at least 2");
  const int K = seq.dim(0), T = seq.dim(1), d = seq.dim(2);
  std::vector<double> r(static_cast<std::size_t>(K) * length * d);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < length; ++i) {
      const double t = static_cast<double>(i) * (T - 1) / (length - 1);
      const int i0 = std::min(static_cast<int>(t), T - 2);
      const double w = t - i0;
      for (int c = 0; c < d; ++c) {
        const double a = seq.data[(static_cast<std::size_t>(k) * T + i0) * d + c];
        const double b = seq.data[(static_cast<std::size_t>(k) * T + i0 + 1) * d + c];
        r[(static_cast<std::size_t>(k) * length + i) * d + c] = w == 0.0 ? a : a + w * (b - a);
      }
    }
  std::vector<double> centroid(d, 0.0);
  const std::size_t points = static_cast<std::size_t>(K) * length;
  for (std::size_t p = 0; p < points; ++p)
    for (int c = 0; c < d; ++c) centroid[c] += r[p * d + c];
  for (double& c : centroid) c /= static_cast<double>(points);
  double peak = 0;
  for (std::size_t p = 0; p < points; ++p)
    for (int c = 0; c < d; ++c) {
      r[p * d + c] -= centroid[c];
      peak = std::max(peak, std::abs(r[p * d + c]));
    }
  Normalized out;
  out.seq = Tensor<float>(Shape{K, length, d});
  if (peak < 1e-9) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < r.size(); ++i) out.seq.data[i] = static_cast<float>(r[i] / peak);
  return out;
}

namespace {

// (n * K) x L x 2 batch of point trajectories from one 2D view.
Tensor<float> point_batch(const std::vector<MultiPointSequence>& seqs, int view, int K, int L) {
  Tensor<float> X(Shape{static_cast<int>(seqs.size()) * K, L, 2});
  std::size_t row = 0;
  for (const auto& s : seqs) {
    const Tensor<float> plane = s.dim() == 3 ? project_3d_views(s.points)[view] : s.points;
    std::copy(plane.data.begin(), plane.data.end(), X.data.begin() + row * L * 2);
    row += K;
  }
  return X;
}

}  // namespace

Tensor<float> mcae_mp_features(const Mcae<float>& model, const std::vector<MultiPointSequence>& seqs,
                               const std::array<const Mcae<float>*, 3>* per_view) {
  if (seqs.empty()) throw DataError("no sequences");
  const int K = seqs[0].joints(), d = seqs[0].dim(), L = model.config().length;
  for (const auto& s : seqs) {
    s.validate();
    if (s.joints() != K || s.dim() != d) throw DataError("sequences differ in point count or dimension");
    if (s.frames() != L) {
      throw DataError("sequence " + s.id + " has " + std::to_string(s.frames()) + " frames, model expects " +
                      std::to_string(L) + " (normalize_and_resample first)");
    }
  }
  const int views = d == 3 ? 3 : 1;
  const int M = model.config().representation_dim();
  if (per_view) {
    for (const auto* m : *per_view)
      if (!m || m->config().length != L || m->config().representation_dim() != M) {
        throw ConfigError("per-view models must share input length and representation size");
      }
  }
  const int n = static_cast<int>(seqs.size());
  Tensor<float> out(Shape{n, views * K * M});
  for (int v = 0; v < views; ++v) {
    const Mcae<float>& net = per_view && views == 3 ? *(*per_view)[v] : model;
    const Tensor<float> f = net.features(point_batch(seqs, v, K, L));
    for (int i = 0; i < n; ++i)
      std::copy_n(f.data.begin() + static_cast<std::size_t>(i) * K * M, K * M,
                  out.data.begin() + static_cast<std::size_t>(i) * views * K * M + static_cast<std::size_t>(v) * K * M);
  }
  return out;
}

evalprobe::FeatureSet mp_feature_set(const Mcae<float>& model, const std::vector<MultiPointSequence>& seqs,
                                     const std::array<const Mcae<float>*, 3>* per_view) {
  evalprobe::FeatureSet f{mcae_mp_features(model, seqs, per_view), {}};
  for (const auto& s : seqs) f.labels.push_back(s.label);
  f.validate();
  return f;
}

// ------------------------------------------------------------------ files

std::string format_skeleton(const std::vector<MultiPointSequence>& seqs) {
  if (seqs.empty()) throw DataError("nothing to write");
  const int K = seqs[0].joints(), d = seqs[0].dim();
  std::string out = "SKEL v1 K=" + std::to_string(K) + " dim=" + std::to_string(d) + "\n";
  char buf[32];
  for (std::size_t n = 0; n < seqs.size(); ++n) {
    const auto& s = seqs[n];
    s.validate();
    if (s.joints() != K || s.dim() != d) throw DataError("all sequences in a file need the same K and dim");
    const std::string id = s.id.empty() ? std::to_string(n) : s.id;
    if (id.find_first_of(" \t\r\n") != std::string::npos) throw DataError("sample id '" + id + "' contains whitespace");
    if (n) out += "\n";
    out += "sample " + id + " label " + std::to_string(s.label) + " frames " + std::to_string(s.frames()) + "\n";
    const int T = s.frames();
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < K; ++k)
        for (int c = 0; c < d; ++c) {
          std::snprintf(buf, sizeof buf, "%.9g", s.points.data[(static_cast<std::size_t>(k) * T + t) * d + c]);
          if (k || c) out += ' ';
          out += buf;
        }
      out += '\n';
    }
  }
  return out;
}

namespace {

int header_field(const std::string& tok, const std::string& key, std::size_t line) {
  if (tok.rfind(key + "=", 0) != 0) throw ParseError("skeleton header: expected " + key + "=<int>", line);
  const std::string v = tok.substr(key.size() + 1);
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || out < 1) {
    throw ParseError("skeleton header: bad " + key + " value '" + v + "'", line);
  }
  return out;
}

}  // namespace

std::vector<MultiPointSequence> parse_skeleton(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next()) throw ParseError("empty skeleton file", 1);
  std::istringstream hs(line);
  std::string magic, version, ktok, dtok, extra;
  if (!(hs >> magic >> version >> ktok >> dtok) || magic != "SKEL" || (hs >> extra)) {
    throw ParseError("expected header 'SKEL v1 K=<int> dim=<int>'", lineno);
  }
  if (version != "v1") throw ParseError("unsupported skeleton version '" + version + "'", lineno);
  const int K = header_field(ktok, "K", lineno);
  const int d = header_field(dtok, "dim", lineno);
  if (d != 2 && d != 3) throw ParseError("skeleton dim must be 2 or 3", lineno);

  std::vector<MultiPointSequence> out;
  while (next()) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string tag, id, label_tag, frames_tag;
    int label = 0, T = 0;
    if (!(ls >> tag >> id >> label_tag >> label >> frames_tag >> T) || tag != "sample" || label_tag != "label" ||
        frames_tag != "frames" || (ls >> extra)) {
      throw ParseError("expected 'sample <id> label <int> frames <T>'", lineno);
    }
    if (T < 2) throw ParseError("sample " + id + ": need at least 2 frames", lineno);
    MultiPointSequence s;
    s.id = id;
    s.label = label;
    s.points = Tensor<float>(Shape{K, T, d});
    const std::size_t header_line = lineno;
    for (int t = 0; t < T; ++t) {
      if (!next()) {
        throw ParseError("sample " + id + " truncated: " + std::to_string(t) + " of " + std::to_string(T) + " frames",
                         header_line);
      }
      const char* p = line.data();
      const char* end = p + line.size();
      int count = 0;
      while (true) {
        while (p < end && (*p == ' ' || *p == '\t')) ++p;
        if (p == end) break;
        float v = 0;
        const auto [q, ec] = std::from_chars(p, end, v);
        if (ec != std::errc() || (q < end && *q != ' ' && *q != '\t')) {
          throw ParseError("sample " + id + ": non-numeric coordinate", lineno);
        }
        if (count < K * d) {
          const int k = count / d, c = count % d;
          s.points.data[(static_cast<std::size_t>(k) * T + t) * d + c] = v;
        }
        ++count;
        p = q;
      }
      if (count != K * d) {
        throw ParseError("sample " + id + ": frame has " + std::to_string(count) + " values, expected " +
                             std::to_string(K * d) + " (K=" + std::to_string(K) + ", dim=" + std::to_string(d) + ")",
                         lineno);
      }
    }
    try {
      s.validate();
    } catch (const DataError& e) {
      throw ParseError(e.what(), header_line);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_skeleton_file(const std::filesystem::path& path, const std::vector<MultiPointSequence>& seqs) {
  const std::string text = format_skeleton(seqs);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<MultiPointSequence> load_skeleton_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_skeleton(ss.str());
}

// -------------------------------------------------------------- synthetic

std::vector<MultiPointSequence> synth_multipoint_gen(int K, int n, std::uint64_t seed, double noise, int length) {
  if (K < 1) throw ConfigError("synth_multipoint_gen: K must be positive");
  if (n < 0 || n % t20::kPatternCount != 0) {
    throw ConfigError("synth_multipoint_gen: n must be a non-negative multiple of 20, got " + std::to_string(n));
  }
  if (noise < 0) throw ConfigError("synth_multipoint_gen: noise must be nonnegative");
  std::vector<MultiPointSequence> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s_seed = split_seed(seed, static_cast<std::uint64_t>(i));
    const t20::Sample base = t20::sample_from_seed(t20::pattern_from_index(i % t20::kPatternCount), s_seed, length);
    Rng rng(split_seed(s_seed, 0x6d70));
    MultiPointSequence s;
    s.id = std::to_string(i);
    s.label = base.label;
    s.points = Tensor<float>(Shape{K, length, 2});
    std::copy(base.xy.begin(), base.xy.end(), s.points.data.begin());
    for (int k = 1; k < K; ++k) {
      const double ox = rng.uniform(-0.5, 0.5), oy = rng.uniform(-0.5, 0.5);
      float* dst = s.points.data.data() + static_cast<std::size_t>(k) * length * 2;
      for (int t = 0; t < length; ++t) {
        dst[2 * t] = static_cast<float>(base.xy[2 * t] + ox + noise * rng.normal());
        dst[2 * t + 1] = static_cast<float>(base.xy[2 * t + 1] + oy + noise * rng.normal());
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<MultiPointSequence> normalized(const std::vector<MultiPointSequence>& seqs, int length) {
  std::vector<MultiPointSequence> out = seqs;
  for (auto& s : out) s.points = normalize_and_resample(s.points, length).seq;
  return out;
}

training::Sampler multipoint_sampler(int K, int pool_size, double noise, std::uint64_t seed, int length) {
  const int n = std::max(t20::kPatternCount, pool_size / t20::kPatternCount * t20::kPatternCount);
  auto pool = std::make_shared<std::vector<MultiPointSequence>>(
      normalized(synth_multipoint_gen(K, n, seed, noise, length), length));
  return [pool, K, length](Rng& rng, int count) {
    Tensor<float> X(Shape{count, length, 2});
    const std::size_t stride = static_cast<std::size_t>(length) * 2;
    for (int i = 0; i < count; ++i) {
      const auto& s = (*pool)[rng.uniform_int(static_cast<int>(pool->size()))];
      const int k = rng.uniform_int(K);
      std::copy_n(s.points.data.begin() + k * stride, stride, X.data.begin() + i * stride);
    }
    return X;
  };
}

evalprobe::EvalResult evaluate_multipoint(const Mcae<float>& model, int K, double noise,
                                          const evalprobe::EvalProtocol& protocol) {
  const int L = model.config().length;
  const auto train = normalized(synth_multipoint_gen(K, protocol.train_samples, protocol.train_seed, noise, L), L);
  const auto test = normalized(synth_multipoint_gen(K, protocol.test_samples, protocol.test_seed, noise, L), L);
  return evalprobe::evaluate_features(mp_feature_set(model, train), mp_feature_set(model, test), protocol.probe);
}

}  // namespace mcae::multipoint
