#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "demorph/image.hpp"

namespace demorph {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct ImageSize {
  int height = 0;
  int width = 0;
};

// Corners and edge midpoints of the closed frame [0, W] x [0, H].
std::array<Point2, 8> frame_anchors(ImageSize size);

/// Ordered facial landmarks followed by the frame anchors that pin the image
/// border during warping. The anchor block is either empty or exactly the 8
/// points from frame_anchors().
class LandmarkSet {
 public:
  LandmarkSet() = default;
  LandmarkSet(std::vector<Point2> facial, std::vector<Point2> anchors);

  // Facial points must lie in [0, W) x [0, H); anchors are synthesized.
  static LandmarkSet with_frame(std::vector<Point2> facial, ImageSize size);

  const std::vector<Point2>& facial() const noexcept { return facial_; }
  const std::vector<Point2>& anchors() const noexcept { return anchors_; }
  std::size_t size() const noexcept { return facial_.size() + anchors_.size(); }
  const Point2& operator[](std::size_t i) const {
    return i < facial_.size() ? facial_[i] : anchors_[i - facial_.size()];
  }
  std::vector<Point2> points() const;

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;

 private:
  std::vector<Point2> facial_;
  std::vector<Point2> anchors_;
};

struct MorphParams {
  double warp_fraction = 0.5;  // geometric weight toward identity 2
  double blend_alpha = 0.5;    // pixel weight toward identity 2

  MorphParams clamped() const;
};

using Triangle = std::array<int, 3>;

/// Triangles index into LandmarkSet::points(); each has positive signed area
/// under the (b - a) x (c - a) convention.
struct TriangleMesh {
  std::vector<Triangle> triangles;
};

struct WarpReport {
  int skipped_triangles = 0;
  std::vector<std::string> warnings;
};

struct MorphRecord {
  Image morph;
  std::shared_ptr<const Image> source1;
  std::shared_ptr<const Image> source2;
  MorphParams params;
  std::array<std::string, 2> subject_ids;
  LandmarkSet landmarks;  // averaged frame both sources were warped to
};

LandmarkSet average_landmarks(const LandmarkSet& l1, const LandmarkSet& l2, double warp_fraction);

// Delaunay triangulation of the deduplicated landmark points.
TriangleMesh triangulate(const LandmarkSet& landmarks, ImageSize image_size);

double triangle_area(const Point2& a, const Point2& b, const Point2& c);

// Piecewise-affine warp: every pixel of a destination triangle is pulled from
// the matching source triangle with bilinear sampling. Pixels no triangle
// covers keep the source value at the same location.
Image warp_to_landmarks(const Image& image, const LandmarkSet& src, const LandmarkSet& dst,
                        const TriangleMesh& mesh, WarpReport* report = nullptr);

Image blend(const Image& a, const Image& b, double alpha);

MorphRecord create_morph(std::shared_ptr<const Image> i1, std::shared_ptr<const Image> i2,
                         const LandmarkSet& l1, const LandmarkSet& l2, const MorphParams& params,
                         std::array<std::string, 2> subject_ids = {}, WarpReport* report = nullptr);

// Landmark sidecar: one "x y" pair per line, facial points only.
std::vector<Point2> read_landmark_sidecar(const std::filesystem::path& path);
void write_landmark_sidecar(const std::vector<Point2>& points, const std::filesystem::path& path);
std::filesystem::path sidecar_path_for(const std::filesystem::path& image_path);

struct MorphManifestRow {
  std::string morph_path;
  std::string source1_path;
  std::string source2_path;
  std::string subject1_id;
  std::string subject2_id;
  double warp_fraction = 0.5;
  double blend_alpha = 0.5;
};

void write_morph_manifest(const std::vector<MorphManifestRow>& rows, const std::filesystem::path& path);
std::vector<MorphManifestRow> read_morph_manifest(const std::filesystem::path& path);

/// Input to batch morph generation: header
/// `source1_path,source2_path,subject1_id,subject2_id[,warp_fraction,blend_alpha]`.
struct MorphPair {
  std::filesystem::path source1;
  std::filesystem::path source2;
  std::string subject1_id;
  std::string subject2_id;
  MorphParams params;
};

std::vector<MorphPair> read_pair_manifest(const std::filesystem::path& path, const MorphParams& defaults);

// Morphs every pair (landmarks from sidecars next to each source) into
// out_dir and writes out_dir/morphs.csv. Returns the emitted rows.
std::vector<MorphManifestRow> generate_morphs(const std::vector<MorphPair>& pairs,
                                              const std::filesystem::path& out_dir);

}  // namespace demorph
