#include "doctest_torch.hpp"

#include <cmath>
#include <random>

#include "demorph/error.hpp"
#include "demorph/morph.hpp"
#include "demorph/synthetic.hpp"
#include "support.hpp"

using namespace demorph;

namespace {

Image uniform(int h, int w, float v) { return Image(h, w, v); }

Image random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(h, w);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

// Independent bilinear lookup with edge clamping.
double bilinear_oracle(const Image& img, double x, double y, int c) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height() - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fx) * (1 - fy) * img.at(y0, x0, c) + fx * (1 - fy) * img.at(y0, x1, c) +
         (1 - fx) * fy * img.at(y1, x0, c) + fx * fy * img.at(y1, x1, c);
}

double mesh_area(const TriangleMesh& mesh, const std::vector<Point2>& pts) {
  double sum = 0.0;
  for (const auto& t : mesh.triangles) sum += triangle_area(pts[t[0]], pts[t[1]], pts[t[2]]);
  return sum;
}

std::vector<Point2> random_points(int n, ImageSize size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(0.0, size.width - 1e-6), uy(0.0, size.height - 1e-6);
  std::vector<Point2> pts;
  for (int i = 0; i < n; ++i) pts.push_back({ux(rng), uy(rng)});
  return pts;
}

double signed2(const Point2& a, const Point2& b, const Point2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// Number of triangles whose open interior contains p.
int interior_hits(const TriangleMesh& mesh, const std::vector<Point2>& pts, const Point2& p) {
  int hits = 0;
  for (const auto& t : mesh.triangles) {
    const auto &a = pts[t[0]], &b = pts[t[1]], &c = pts[t[2]];
    if (signed2(a, b, p) > 1e-9 && signed2(b, c, p) > 1e-9 && signed2(c, a, p) > 1e-9) ++hits;
  }
  return hits;
}

}  // namespace

TEST_CASE("average_landmarks endpoints and midpoint") {
  const LandmarkSet l1({{1, 2}, {3, 4}, {5, 6}}, {});
  const LandmarkSet l2({{7, 1}, {2, 9}, {0, 0}}, {});
  CHECK(average_landmarks(l1, l2, 0.0) == l1);

  const auto mid = average_landmarks(LandmarkSet({{0, 0}}, {}), LandmarkSet({{10, 20}}, {}), 0.5);
  CHECK(mid.facial()[0].x == 5.0);
  CHECK(mid.facial()[0].y == 10.0);
}

TEST_CASE("average_landmarks on a 68-point set matches per-point recomputation") {
  std::mt19937_64 rng(3);
  const ImageSize size{128, 128};
  const auto p1 = random_points(68, size, rng);
  const auto p2 = random_points(68, size, rng);
  const auto l1 = LandmarkSet::with_frame(p1, size);
  const auto l2 = LandmarkSet::with_frame(p2, size);
  const auto avg = average_landmarks(l1, l2, 0.25);
  REQUIRE(avg.size() == 76);
  for (std::size_t i = 0; i < 68; ++i) {
    CHECK(avg[i].x == doctest::Approx(0.75 * p1[i].x + 0.25 * p2[i].x).epsilon(1e-12));
    CHECK(avg[i].y == doctest::Approx(0.75 * p1[i].y + 0.25 * p2[i].y).epsilon(1e-12));
  }
  CHECK((avg.anchors() == l1.anchors()));
}

TEST_CASE("average_landmarks is symmetric under (l1, l2, t) -> (l2, l1, 1 - t)") {
  std::mt19937_64 rng(11);
  const ImageSize size{64, 80};
  for (int trial = 0; trial < 20; ++trial) {
    const auto l1 = LandmarkSet::with_frame(random_points(12, size, rng), size);
    const auto l2 = LandmarkSet::with_frame(random_points(12, size, rng), size);
    const double t = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto a = average_landmarks(l1, l2, t);
    const auto b = average_landmarks(l2, l1, 1.0 - t);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].x == doctest::Approx(b[i].x).epsilon(1e-12));
      CHECK(a[i].y == doctest::Approx(b[i].y).epsilon(1e-12));
    }
  }
}

TEST_CASE("average_landmarks rejects mismatched counts") {
  const ImageSize size{32, 32};
  const auto l1 = LandmarkSet::with_frame({{1, 1}, {2, 2}}, size);
  const auto l2 = LandmarkSet::with_frame({{1, 1}}, size);
  try {
    average_landmarks(l1, l2, 0.5);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::structural);
  }
}

TEST_CASE("frame anchors are the last 8 points and depend only on size") {
  const ImageSize size{48, 64};
  const auto a = LandmarkSet::with_frame({{3, 4}}, size);
  const auto b = LandmarkSet::with_frame({{10, 20}, {30, 40}}, size);
  CHECK((a.anchors() == b.anchors()));
  REQUIRE(a.size() == 9);
  CHECK(a[1].x == 0.0);
  CHECK(a[5].x == 64.0);
  CHECK(a[5].y == 48.0);
  CHECK_THROWS_AS(LandmarkSet::with_frame({{64, 3}}, size), Error);
  CHECK_THROWS_AS(LandmarkSet::with_frame({{-0.5, 3}}, size), Error);
  CHECK_THROWS_AS(LandmarkSet({{1, 1}}, {{0, 0}, {1, 1}}), Error);
}

TEST_CASE("MorphParams clamp to the unit interval") {
  const auto p = MorphParams{-0.5, 1.5}.clamped();
  CHECK(p.warp_fraction == 0.0);
  CHECK(p.blend_alpha == 1.0);
}

TEST_CASE("triangulate: 4 corners give 2 triangles covering the rectangle") {
  const ImageSize size{30, 40};
  const LandmarkSet corners({{0, 0}, {40, 0}, {40, 30}, {0, 30}}, {});
  const auto mesh = triangulate(corners, size);
  CHECK(mesh.triangles.size() == 2);
  CHECK(mesh_area(mesh, corners.points()) == doctest::Approx(30.0 * 40.0).epsilon(1e-12));
}

TEST_CASE("triangulate: random 20-point sets tile the frame") {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 25; ++trial) {
    const ImageSize size{64 + trial, 96 - trial};
    const auto set = LandmarkSet::with_frame(random_points(20, size, rng), size);
    const auto pts = set.points();
    const auto mesh = triangulate(set, size);
    const double hw = static_cast<double>(size.height) * size.width;
    CHECK(std::abs(mesh_area(mesh, pts) - hw) / hw < 1e-6);

    // Positive orientation, no overlaps at random probe points, and the empty-circle property.
    for (const auto& t : mesh.triangles) CHECK(signed2(pts[t[0]], pts[t[1]], pts[t[2]]) > 0.0);
    std::uniform_real_distribution<double> ux(0, size.width), uy(0, size.height);
    for (int k = 0; k < 200; ++k) CHECK(interior_hits(mesh, pts, {ux(rng), uy(rng)}) <= 1);
    for (const auto& t : mesh.triangles) {
      const auto &a = pts[t[0]], &b = pts[t[1]], &c = pts[t[2]];
      for (std::size_t q = 0; q < pts.size(); ++q) {
        if (static_cast<int>(q) == t[0] || static_cast<int>(q) == t[1] || static_cast<int>(q) == t[2]) continue;
        const auto& d = pts[q];
        const double adx = a.x - d.x, ady = a.y - d.y, bdx = b.x - d.x, bdy = b.y - d.y, cdx = c.x - d.x,
                     cdy = c.y - d.y;
        const double det = (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) -
                           (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady) +
                           (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
        CHECK(det <= 1e-6 * hw * hw);
      }
    }
  }
}

TEST_CASE("triangulate: duplicated points are removed and the mesh still covers the frame") {
  const ImageSize size{50, 50};
  const auto set = LandmarkSet::with_frame({{10, 10}, {30, 12}, {10, 10}, {25, 35}, {30, 12}}, size);
  const auto mesh = triangulate(set, size);
  const auto pts = set.points();
  CHECK(mesh_area(mesh, pts) == doctest::Approx(2500.0).epsilon(1e-9));
  for (const auto& t : mesh.triangles) {
    for (int idx : t) CHECK((idx != 2 && idx != 4));
  }
}

TEST_CASE("triangulate: degenerate inputs are geometry errors") {
  const ImageSize size{20, 20};
  auto expect_geometry = [&](const LandmarkSet& set) {
    try {
      triangulate(set, size);
      FAIL("expected a geometry error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::geometry);
    }
  };
  expect_geometry(LandmarkSet({{1, 1}, {5, 5}, {9, 9}, {13, 13}}, {}));
  expect_geometry(LandmarkSet({{1, 1}, {5, 5}}, {}));
  expect_geometry(LandmarkSet({{1, 1}, {1, 1}, {1, 1}}, {}));
}

TEST_CASE("warp with dst == src is the identity up to quantization") {
  const auto face = render_face(FaceIdentity{}, 64);
  const Image img = quantize8(face.image);
  const auto mesh = triangulate(face.landmarks, {64, 64});
  const auto out = warp_to_landmarks(img, face.landmarks, face.landmarks, mesh);
  CHECK(max_abs_difference(out, img) <= 1.0f / 255.0f);
}

TEST_CASE("warp of a uniform image stays uniform") {
  std::mt19937_64 rng(5);
  const ImageSize size{40, 40};
  const auto src = LandmarkSet::with_frame(random_points(10, size, rng), size);
  const auto dst = LandmarkSet::with_frame(random_points(10, size, rng), size);
  const auto mesh = triangulate(dst, size);
  const auto out = warp_to_landmarks(uniform(40, 40, 0.3f), src, dst, mesh);
  for (float v : out.data()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));
}

TEST_CASE("warp: single-triangle translation matches direct affine sampling") {
  Image grad(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) grad.at(y, x, c) = static_cast<float>((x * 13 + y * 7 + c * 5) % 97) / 96.0f;
  const LandmarkSet src({{1.5, 2.0}, {11.0, 3.5}, {4.0, 13.0}}, {});
  const LandmarkSet dst({{3.5, 2.0}, {13.0, 3.5}, {6.0, 13.0}}, {});
  const TriangleMesh mesh{{{0, 1, 2}}};
  const auto out = warp_to_landmarks(grad, src, dst, mesh);
  int checked = 0;
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const Point2 p{double(x), double(y)};
      const auto &a = dst[0], &b = dst[1], &c = dst[2];
      const double e0 = signed2(a, b, p), e1 = signed2(b, c, p), e2 = signed2(c, a, p);
      const bool inside = e0 > 1e-6 && e1 > 1e-6 && e2 > 1e-6;
      const bool outside = e0 < -1e-6 || e1 < -1e-6 || e2 < -1e-6;
      if (!inside && !outside) continue;  // on an edge, either rule is valid
      for (int ch = 0; ch < 3; ++ch) {
        const double expected = inside ? bilinear_oracle(grad, x - 2.0, y, ch) : grad.at(y, x, ch);
        CHECK(out.at(y, x, ch) == doctest::Approx(expected).epsilon(1e-6));
      }
      checked += inside;
    }
  }
  CHECK(checked > 30);
}

TEST_CASE("warp skips degenerate destination triangles with a warning") {
  const LandmarkSet src({{1, 1}, {8, 1}, {1, 8}}, {});
  const LandmarkSet dst({{1, 1}, {4, 4}, {7, 7}}, {});
  WarpReport report;
  const auto img = uniform(10, 10, 0.25f);
  const auto out = warp_to_landmarks(img, src, dst, TriangleMesh{{{0, 1, 2}}}, &report);
  CHECK(report.skipped_triangles == 1);
  CHECK(report.warnings.size() == 1);
  CHECK(out == img);
  CHECK_THROWS_AS(warp_to_landmarks(img, src, LandmarkSet({{1, 1}}, {}), TriangleMesh{}), Error);
}

TEST_CASE("blend endpoints and arithmetic") {
  std::mt19937_64 rng(9);
  const auto a = random_image(8, 9, rng);
  const auto b = random_image(8, 9, rng);
  CHECK(blend(a, b, 0.0) == a);
  CHECK(blend(a, b, 1.0) == b);
  const auto mid = blend(uniform(4, 4, 0.2f), uniform(4, 4, 0.6f), 0.5);
  for (float v : mid.data()) CHECK(v == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("blend is symmetric under (a, b, alpha) -> (b, a, 1 - alpha)") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_image(6, 7, rng);
    const auto b = random_image(6, 7, rng);
    const double alpha = std::uniform_real_distribution<double>(0, 1)(rng);
    CHECK(blend(a, b, alpha) == blend(b, a, 1.0 - alpha));
  }
}

TEST_CASE("blend errors") {
  CHECK_THROWS_AS(blend(uniform(4, 4, 0), uniform(4, 5, 0), 0.5), Error);
  try {
    blend(uniform(4, 4, 0), uniform(4, 4, 0), 1.5);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::config);
  }
}

TEST_CASE("create_morph of a subject with itself returns the input") {
  const auto face = render_face(FaceIdentity{}, 64);
  auto img = std::make_shared<const Image>(quantize8(face.image));
  for (double t : {0.0, 0.3, 0.5, 1.0}) {
    const auto rec = create_morph(img, img, face.landmarks, face.landmarks, {t, 1.0 - t});
    CHECK(max_abs_difference(rec.morph, *img) <= 1.0f / 255.0f);
  }
}

TEST_CASE("create_morph with zero weights returns identity 1") {
  std::mt19937_64 rng(2);
  const auto f1 = render_face(random_identity(rng), 64);
  const auto f2 = render_face(random_identity(rng), 64);
  auto i1 = std::make_shared<const Image>(quantize8(f1.image));
  auto i2 = std::make_shared<const Image>(quantize8(f2.image));
  const auto rec = create_morph(i1, i2, f1.landmarks, f2.landmarks, {0.0, 0.0}, {"a", "b"});
  CHECK(max_abs_difference(rec.morph, *i1) <= 1.0f / 255.0f);
  CHECK(rec.subject_ids[0] == "a");
  CHECK(rec.source1 == i1);
}

TEST_CASE("create_morph equals the hand-composed warp and blend") {
  std::mt19937_64 rng(4);
  const auto f1 = render_face(random_identity(rng), 64);
  const auto f2 = render_face(random_identity(rng), 64);
  auto i1 = std::make_shared<const Image>(f1.image);
  auto i2 = std::make_shared<const Image>(f2.image);
  const auto rec = create_morph(i1, i2, f1.landmarks, f2.landmarks, {0.5, 0.5});

  std::vector<Point2> mid;
  for (std::size_t i = 0; i < f1.landmarks.facial().size(); ++i) {
    mid.push_back({(f1.landmarks.facial()[i].x + f2.landmarks.facial()[i].x) / 2,
                   (f1.landmarks.facial()[i].y + f2.landmarks.facial()[i].y) / 2});
  }
  const LandmarkSet target(mid, f1.landmarks.anchors());
  const auto mesh = triangulate(target, {64, 64});
  const auto w1 = warp_to_landmarks(f1.image, f1.landmarks, target, mesh);
  const auto w2 = warp_to_landmarks(f2.image, f2.landmarks, target, mesh);
  CHECK(rec.morph.same_shape(f1.image));
  for (std::size_t k = 0; k < w1.size(); ++k) {
    const double expected = 0.5 * w1.data()[k] + 0.5 * w2.data()[k];
    CHECK(std::abs(rec.morph.data()[k] - expected) <= 1e-6);
    // Convexity of the blend.
    CHECK(rec.morph.data()[k] >= std::min(w1.data()[k], w2.data()[k]) - 1e-7);
    CHECK(rec.morph.data()[k] <= std::max(w1.data()[k], w2.data()[k]) + 1e-7);
  }
}

TEST_CASE("create_morph rejects mismatched sources") {
  auto a = std::make_shared<const Image>(32, 32);
  auto b = std::make_shared<const Image>(32, 40);
  const auto l = LandmarkSet::with_frame({{3, 3}}, {32, 32});
  CHECK_THROWS_AS(create_morph(a, b, l, l, {}), Error);
}

TEST_CASE("synthetic faces are deterministic and carry 30 facial landmarks") {
  std::mt19937_64 r1(8), r2(8);
  const auto id1 = random_identity(r1);
  const auto id2 = random_identity(r2);
  const auto a = render_face(id1, 64, 3);
  const auto b = render_face(id2, 64, 3);
  CHECK(a.image == b.image);
  CHECK(a.landmarks.facial().size() == kSyntheticLandmarkCount);
  CHECK(a.landmarks.anchors().size() == 8);
  for (float v : a.image.data()) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK(max_abs_difference(render_face(id1, 64, 0).image, a.image) > 0.0f);
}

TEST_CASE("landmark sidecars and morph manifests round-trip") {
  support::TempDir dir("morph_io");
  const std::vector<Point2> pts{{1.25, 2.5}, {30.125, 7.0}};
  const auto path = dir / "face.txt";
  write_landmark_sidecar(pts, path);
  {
    std::ofstream append(path, std::ios::app);
    append << "# trailing comment\n\n";
  }
  const auto back = read_landmark_sidecar(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].x == 30.125);
  CHECK(sidecar_path_for("a/b/face.png") == std::filesystem::path("a/b/face.txt"));

  const std::vector<MorphManifestRow> rows{{"m.png", "/x/a.png", "/x/b.png", "s1", "s2", 0.5, 0.25}};
  write_morph_manifest(rows, dir / "morphs.csv");
  const auto read = read_morph_manifest(dir / "morphs.csv");
  REQUIRE(read.size() == 1);
  CHECK(read[0].subject2_id == "s2");
  CHECK(read[0].blend_alpha == 0.25);

  std::ofstream(dir / "bad.txt") << "1 2 3\n";
  CHECK_THROWS_AS(read_landmark_sidecar(dir / "bad.txt"), Error);
}

TEST_CASE("generate_morphs writes one image and one manifest row per pair") {
  support::TempDir dir("gen");
  std::mt19937_64 rng(6);
  for (int i = 0; i < 4; ++i) {
    const auto f = render_face(random_identity(rng), 48);
    write_image(f.image, dir / ("f" + std::to_string(i) + ".png"));
    write_landmark_sidecar(f.landmarks.facial(), dir / ("f" + std::to_string(i) + ".txt"));
  }
  std::ofstream(dir / "pairs.csv") << "source1_path,source2_path,subject1_id,subject2_id\n"
                                      "f0.png,f1.png,a,b\nf2.png,f3.png,c,d\nf0.png,f3.png,a,d\n";
  const auto pairs = read_pair_manifest(dir / "pairs.csv", {});
  const auto rows = generate_morphs(pairs, dir / "out");
  CHECK(rows.size() == 3);
  for (const auto& r : rows) CHECK(std::filesystem::exists(dir / "out" / r.morph_path));
  CHECK(read_morph_manifest(dir / "out" / "morphs.csv").size() == 3);
}

TEST_CASE("image files round-trip at 8-bit precision") {
  support::TempDir dir("img");
  std::mt19937_64 rng(1);
  const auto img = random_image(9, 11, rng);
  write_image(img, dir / "x.png");
  const auto back = read_image(dir / "x.png");
  CHECK(back == quantize8(img));
  CHECK(max_abs_difference(back, img) <= 0.5f / 255.0f + 1e-6f);
  CHECK_THROWS_AS(read_image(dir / "missing.png"), Error);
}
