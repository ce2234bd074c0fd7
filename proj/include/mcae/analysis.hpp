#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mcae/model.hpp"

namespace mcae::analysis {

struct TransformReading {
  double phi = 0;    // degrees, (-180, 180]
  double x = 0;
  double y = 0;
  double scale = 0;  // (0, 1)
};

// Reads rotation, translation and scale back out of a 3x3 similarity matrix
// (row-major). Anything else is rejected with ValidationError.
TransformReading extract_reading(std::span<const double, 9> B, double tol = 1e-6);
TransformReading extract_reading(std::span<const float, 9> B, double tol = 1e-5);

struct SegmentEntry {
  int id = 0;
  double nu = 0;
  TransformReading reading;
};

// The k most active capsules (ties: lower id), listed by id.
// nu: M activations; B: M row-major 3x3 matrices.
std::vector<SegmentEntry> top_k_segments(std::span<const float> nu, std::span<const float> B, int k);

// Decodes one segment template into an L x 2 sequence. P: S x N x 9,
// alpha: S x N, snippet templates: N x l x 2.
Tensor<float> render_segment_template(const Tensor<float>& P, const Tensor<float>& alpha,
                                      const Tensor<float>& templates);
// Segment template k of a trained two-layer model.
Tensor<float> segment_template(const Mcae<float>& model, int k);

// Single-trajectory evaluation: top-k segments for one L x 2 input (flattened).
std::vector<SegmentEntry> analyze(const Mcae<float>& model, std::span<const float> xy, int k = 5);

// Trajectory shifted so its centroid is at the origin.
std::vector<float> centered(std::span<const float> xy);

struct SweepRow {
  double value = 0;  // theta (degrees) or offset d
  int rank = 0;      // position in the id-sorted top-k list
  SegmentEntry entry;
};

// Input is centered, then for every angle rotated clockwise by theta
// (a rotation by -theta in the counter-clockwise convention).
std::vector<SweepRow> rotation_sweep(const Mcae<float>& model, std::span<const float> xy,
                                     const std::vector<double>& angles_deg, int k = 5);
// Centered input shifted by (d, d) for every offset d.
std::vector<SweepRow> translation_sweep(const Mcae<float>& model, std::span<const float> xy,
                                        const std::vector<double>& offsets, int k = 5);

// Columns: <first_column>, rank, segment_id, nu, phi, tx, ty.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows,
                     const std::string& first_column = "theta");

enum class ExportFormat { svg, csv };

// Snippet templates and `segments` evenly spaced segment templates. Returns
// the files written.
std::vector<std::filesystem::path> export_templates(const Mcae<float>& model, const std::filesystem::path& dir,
                                                    ExportFormat format, int segments = 8);

}  // namespace mcae::analysis
