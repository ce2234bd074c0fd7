#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcae/rng.hpp"

namespace mcae::t20 {

// Closed patterns come first (indices 0-9), open ones after (10-19).
enum class Pattern : int {
  kTriangle = 0,
  kRectangle,
  kPentagon,
  kHexagon,
  kAstroid,
  kCircle,
  kHeart,
  kHippopede,
  kLemniscate,
  kSpiral,
  kLine,
  kTanh,
  kParabola,
  kSine,
  kAbsoluteSine,
  kBell,
  kCuspidalCubic,
  kCubicAtLine,
  kAsymmetricCubicAtLine,
  kCubicAtCuspidalCubic,
};

inline constexpr int kPatternCount = 20;
inline constexpr int kTrajectoryLength = 32;

std::string_view pattern_name(Pattern p);
Pattern pattern_from_index(int index);
Pattern pattern_from_name(std::string_view name);
bool is_closed(Pattern p);

using Point = std::array<double, 2>;

// Canonical form sampled at n uniform parameter steps (arc length for
// polygons and the spiral), centered on the mean of its distinct points and
// scaled so the largest absolute coordinate is 1. Closed patterns repeat the first point
// at the end.
std::vector<Point> pattern_points(Pattern p, int n);

struct Provenance {
  float theta = 0;  // rotation, radians
  float scale = 0;
  float tx = 0;
  float ty = 0;
  std::uint64_t seed = 0;
  bool operator==(const Provenance&) const = default;
};

struct Sample {
  std::vector<float> xy;  // x1, y1, ..., xL, yL
  int label = 0;
  Provenance provenance;

  int length() const { return static_cast<int>(xy.size() / 2); }
  bool operator==(const Sample&) const = default;
};

// Where a canonical pattern is placed: start point index along the closed
// cycle (ignored for open patterns), direction, then rotation, scale and
// translation applied in that order.
struct Placement {
  int start = 0;
  bool reversed = false;
  double theta = 0;
  double scale = 1;
  double tx = 0;
  double ty = 0;
};

Sample render_sample(Pattern p, const Placement& placement, int length = kTrajectoryLength);

// Draws start, direction, theta ~ U[0, 2pi), scale ~ U[0.3, 0.9] and a
// translation that keeps the curve inside [-1, 1]^2, all from `seed`.
Sample sample_from_seed(Pattern p, std::uint64_t seed, int length = kTrajectoryLength);

Sample sample_trajectory(Pattern p, Rng& rng, int length = kTrajectoryLength);

// Pattern drawn uniformly, then placed as in sample_trajectory.
Sample sample_random(Rng& rng, int length = kTrajectoryLength);

// n / 20 samples per class; sample i has label i mod 20 and seed
// split_seed(seed, i), so the set does not depend on generation order.
std::vector<Sample> gen_test_set(int n, std::uint64_t seed, int length = kTrajectoryLength);

// Binary "T20D" container (32-step samples only).
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 12;
inline constexpr std::size_t kDatasetRecordBytes = 4 + 64 * 4 + 4 * 4 + 8;

std::vector<std::uint8_t> serialize_dataset(std::span<const Sample> samples);
std::vector<Sample> deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> load_dataset(const std::filesystem::path& path);

}  // namespace mcae::t20
