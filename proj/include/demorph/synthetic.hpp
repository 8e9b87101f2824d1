#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "demorph/image.hpp"
#include "demorph/morph.hpp"

namespace demorph {

/// Parameters of a procedural face. Geometry is expressed as fractions of the
/// image side so an identity renders consistently at any resolution.
struct FaceIdentity {
  std::array<float, 3> skin{};
  std::array<float, 3> hair{};
  std::array<float, 3> background{};
  std::array<float, 3> iris{};
  std::array<float, 3> lips{};
  double face_cx = 0.5, face_cy = 0.55;
  double face_rx = 0.3, face_ry = 0.38;
  double hair_height = 0.12;
  double eye_y = 0.45, eye_spacing = 0.12, eye_rx = 0.055, eye_ry = 0.03;
  double brow_gap = 0.05, brow_tilt = 0.0, brow_thickness = 0.02;
  double nose_length = 0.12, nose_width = 0.05;
  double mouth_y = 0.72, mouth_width = 0.14, mouth_curve = 0.02;
};

FaceIdentity random_identity(std::mt19937_64& rng);

struct SyntheticFace {
  Image image;
  LandmarkSet landmarks;  // 30 facial points plus frame anchors
};

inline constexpr int kSyntheticLandmarkCount = 30;

// capture == 0 renders the canonical image of the identity; other values add
// a small deterministic pose and expression jitter.
SyntheticFace render_face(const FaceIdentity& identity, int size, std::uint64_t capture = 0);

}  // namespace demorph
