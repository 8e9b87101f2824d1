#include "demorph/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

namespace demorph {

namespace {

std::array<float, 3> random_color(std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

cv::Scalar to_scalar(const std::array<float, 3>& rgb, float gain = 1.0f) {
  return cv::Scalar(std::clamp(rgb[0] * gain, 0.0f, 1.0f) * 255.0, std::clamp(rgb[1] * gain, 0.0f, 1.0f) * 255.0,
                    std::clamp(rgb[2] * gain, 0.0f, 1.0f) * 255.0);
}

}  // namespace

FaceIdentity random_identity(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  FaceIdentity id;
  const float tone = static_cast<float>(range(0.35, 0.95));
  id.skin = {tone, tone * static_cast<float>(range(0.7, 0.85)), tone * static_cast<float>(range(0.55, 0.7))};
  id.hair = random_color(rng, 0.05f, 0.6f);
  id.background = random_color(rng, 0.3f, 0.9f);
  id.iris = random_color(rng, 0.1f, 0.6f);
  id.lips = {static_cast<float>(range(0.5, 0.85)), static_cast<float>(range(0.15, 0.35)),
             static_cast<float>(range(0.2, 0.4))};
  id.face_cx = range(0.46, 0.54);
  id.face_cy = range(0.52, 0.58);
  id.face_rx = range(0.25, 0.33);
  id.face_ry = range(0.32, 0.38);
  id.hair_height = range(0.05, 0.14);
  id.eye_y = range(0.42, 0.48);
  id.eye_spacing = range(0.09, 0.13);
  id.eye_rx = range(0.04, 0.06);
  id.eye_ry = range(0.02, 0.035);
  id.brow_gap = range(0.04, 0.07);
  id.brow_tilt = range(-0.02, 0.02);
  id.brow_thickness = range(0.012, 0.03);
  id.nose_length = range(0.09, 0.14);
  id.nose_width = range(0.035, 0.06);
  id.mouth_y = range(0.69, 0.76);
  id.mouth_width = range(0.1, 0.17);
  id.mouth_curve = range(-0.01, 0.03);
  return id;
}

SyntheticFace render_face(const FaceIdentity& identity, int size, std::uint64_t capture) {
  FaceIdentity f = identity;
  double shift_x = 0.0, shift_y = 0.0, scale = 1.0;
  if (capture != 0) {
    std::mt19937_64 rng(0x9e3779b97f4a7c15ULL ^ capture);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    shift_x = 0.02 * u(rng);
    shift_y = 0.02 * u(rng);
    scale = 1.0 + 0.03 * u(rng);
    f.mouth_curve += 0.01 * u(rng);
    f.brow_tilt += 0.01 * u(rng);
  }
  const double s = size;
  auto px = [&](double fx, double fy) {
    const double x = (f.face_cx + (fx - f.face_cx) * scale + shift_x) * s;
    const double y = (f.face_cy + (fy - f.face_cy) * scale + shift_y) * s;
    return Point2{std::clamp(x, 0.0, s - 1e-3), std::clamp(y, 0.0, s - 1e-3)};
  };
  auto cvp = [](const Point2& p) { return cv::Point(static_cast<int>(std::lround(p.x * 16)), static_cast<int>(std::lround(p.y * 16))); };
  auto len = [&](double frac) { return std::max(1, static_cast<int>(std::lround(frac * s * scale * 16))); };
  constexpr int kShift = 4;  // sub-pixel drawing precision for cv primitives

  std::vector<Point2> pts;
  pts.reserve(kSyntheticLandmarkCount);
  for (int k = 0; k < 12; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 12.0;
    pts.push_back(px(f.face_cx + f.face_rx * std::cos(a), f.face_cy + f.face_ry * std::sin(a)));
  }
  const double brow_y = f.eye_y - f.brow_gap;
  for (int side : {-1, 1}) {
    const double ex = f.face_cx + side * f.eye_spacing;
    pts.push_back(px(ex - side * f.eye_rx * 0.9, brow_y + f.brow_tilt));  // inner
    pts.push_back(px(ex + side * f.eye_rx * 1.2, brow_y - f.brow_tilt));  // outer
  }
  for (int side : {-1, 1}) {
    const double ex = f.face_cx + side * f.eye_spacing;
    pts.push_back(px(ex - side * f.eye_rx, f.eye_y));
    pts.push_back(px(ex + side * f.eye_rx, f.eye_y));
    pts.push_back(px(ex, f.eye_y));
  }
  const double nose_top = f.eye_y + 0.01;
  const double nose_tip = nose_top + f.nose_length;
  pts.push_back(px(f.face_cx, nose_top));
  pts.push_back(px(f.face_cx, nose_tip));
  pts.push_back(px(f.face_cx - f.nose_width, nose_tip - 0.01));
  pts.push_back(px(f.face_cx + f.nose_width, nose_tip - 0.01));
  pts.push_back(px(f.face_cx - f.mouth_width / 2, f.mouth_y - f.mouth_curve));
  pts.push_back(px(f.face_cx + f.mouth_width / 2, f.mouth_y - f.mouth_curve));
  pts.push_back(px(f.face_cx, f.mouth_y - 0.012));
  pts.push_back(px(f.face_cx, f.mouth_y + 0.018 + f.mouth_curve * 0.5));

  cv::Mat canvas(size, size, CV_8UC3);
  for (int y = 0; y < size; ++y) {
    const float gain = 0.85f + 0.3f * static_cast<float>(y) / static_cast<float>(size);
    canvas.row(y).setTo(to_scalar(f.background, gain));
  }
  const Point2 center = px(f.face_cx, f.face_cy);
  const Point2 hair_center = px(f.face_cx, f.face_cy - f.hair_height * 0.6);
  cv::ellipse(canvas, cvp(hair_center), cv::Size(len(f.face_rx * 1.12), len(f.face_ry * 1.0 + f.hair_height * 0.5)),
              0, 0, 360, to_scalar(f.hair), cv::FILLED, cv::LINE_AA, kShift);
  cv::ellipse(canvas, cvp(center), cv::Size(len(f.face_rx), len(f.face_ry)), 0, 0, 360, to_scalar(f.skin), cv::FILLED,
              cv::LINE_AA, kShift);
  // Fringe over the forehead.
  cv::ellipse(canvas, cvp(px(f.face_cx, f.face_cy - f.face_ry * 0.95)),
              cv::Size(len(f.face_rx * 0.9), len(f.hair_height * 0.8 + 0.02)), 0, 0, 180, to_scalar(f.hair),
              cv::FILLED, cv::LINE_AA, kShift);
  // Cheeks.
  for (int side : {-1, 1}) {
    cv::circle(canvas, cvp(px(f.face_cx + side * f.face_rx * 0.55, f.mouth_y - 0.06)), len(0.04),
               to_scalar(f.skin, 0.92f), cv::FILLED, cv::LINE_AA, kShift);
  }
  const int brow_px = std::max(1, static_cast<int>(std::lround(f.brow_thickness * s)));
  for (int side = 0; side < 2; ++side) {
    cv::line(canvas, cvp(pts[12 + 2 * side]), cvp(pts[13 + 2 * side]), to_scalar(f.hair, 0.8f), brow_px, cv::LINE_AA,
             kShift);
    const Point2& eye = pts[18 + 3 * side];
    cv::ellipse(canvas, cvp(eye), cv::Size(len(f.eye_rx), len(f.eye_ry)), 0, 0, 360, cv::Scalar(240, 240, 240),
                cv::FILLED, cv::LINE_AA, kShift);
    cv::circle(canvas, cvp(eye), len(f.eye_ry * 0.9), to_scalar(f.iris), cv::FILLED, cv::LINE_AA, kShift);
    cv::circle(canvas, cvp(eye), len(f.eye_ry * 0.4), cv::Scalar(15, 15, 15), cv::FILLED, cv::LINE_AA, kShift);
  }
  const cv::Scalar shade = to_scalar(f.skin, 0.7f);
  cv::line(canvas, cvp(pts[22]), cvp(pts[23]), shade, 1, cv::LINE_AA, kShift);
  cv::line(canvas, cvp(pts[24]), cvp(pts[23]), shade, 1, cv::LINE_AA, kShift);
  cv::line(canvas, cvp(pts[25]), cvp(pts[23]), shade, 1, cv::LINE_AA, kShift);
  std::vector<cv::Point> mouth = {cvp(pts[26]), cvp(pts[28]), cvp(pts[27]), cvp(pts[29])};
  cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{mouth}, to_scalar(f.lips), cv::LINE_AA, kShift);

  Image image(size, size);
  for (int y = 0; y < size; ++y) {
    const auto* row = canvas.ptr<std::uint8_t>(y);
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < Image::kChannels; ++c) image.at(y, x, c) = static_cast<float>(row[3 * x + c]) / 255.0f;
    }
  }
  return {std::move(image), LandmarkSet::with_frame(std::move(pts), {size, size})};
}

}  // namespace demorph
