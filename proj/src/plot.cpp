#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "demorph/error.hpp"
#include "demorph/evaluation.hpp"

namespace demorph::eval {

namespace {

constexpr const char* kModule = "evaluation";
constexpr int kWidth = 720;
constexpr int kHeight = 440;
constexpr int kLeft = 60, kRight = 20, kTop = 50, kBottom = 50;
constexpr int kBins = 30;

struct Series {
  std::string name;
  std::vector<double> values;
  cv::Scalar color;  // BGR
};

std::string format(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void put(cv::Mat& canvas, const std::string& text, cv::Point at, double scale = 0.45,
         cv::Scalar color = {40, 40, 40}) {
  cv::putText(canvas, text, at, cv::FONT_HERSHEY_SIMPLEX, scale, color, 1, cv::LINE_AA);
}

// Step-outline histograms on shared bins; outlines keep overlapping series readable.
cv::Mat render(const std::string& title, const std::vector<Series>& series, const std::string& annotation) {
  cv::Mat canvas(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
  const int pw = kWidth - kLeft - kRight;
  const int ph = kHeight - kTop - kBottom;
  cv::rectangle(canvas, {kLeft, kTop}, {kLeft + pw, kTop + ph}, {0, 0, 0}, 1);
  put(canvas, title, {kLeft, 30}, 0.6);
  put(canvas, "distance", {kLeft + pw / 2 - 30, kHeight - 12});

  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const auto& s : series) {
    for (double v : s.values) {
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
  }
  if (!any) {
    put(canvas, "no samples", {kLeft + pw / 2 - 40, kTop + ph / 2});
    return canvas;
  }
  if (hi - lo < 1e-9) {
    lo -= 0.5e-3;
    hi += 0.5e-3;
  }
  const double width = (hi - lo) / kBins;

  std::vector<std::vector<int>> counts;
  int peak = 1;
  for (const auto& s : series) {
    std::vector<int> c(kBins, 0);
    for (double v : s.values) ++c[std::clamp(static_cast<int>((v - lo) / width), 0, kBins - 1)];
    peak = std::max(peak, *std::max_element(c.begin(), c.end()));
    counts.push_back(std::move(c));
  }

  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const int x = kLeft + pw * t / 4;
    cv::line(canvas, {x, kTop + ph}, {x, kTop + ph + 5}, {0, 0, 0}, 1);
    put(canvas, format("%.3f", v), {x - 20, kTop + ph + 20}, 0.4);
  }
  put(canvas, std::to_string(peak), {8, kTop + 10}, 0.4);
  put(canvas, "0", {40, kTop + ph}, 0.4);

  for (std::size_t k = 0; k < series.size(); ++k) {
    std::vector<cv::Point> outline;
    for (int b = 0; b < kBins; ++b) {
      const int y = kTop + ph - static_cast<int>(std::lround(static_cast<double>(counts[k][b]) / peak * (ph - 10)));
      outline.emplace_back(kLeft + pw * b / kBins, y);
      outline.emplace_back(kLeft + pw * (b + 1) / kBins, y);
    }
    cv::polylines(canvas, outline, false, series[k].color, 2, cv::LINE_AA);
    const int ly = kTop + 18 + 18 * static_cast<int>(k);
    cv::line(canvas, {kLeft + pw - 190, ly - 4}, {kLeft + pw - 165, ly - 4}, series[k].color, 2);
    put(canvas, series[k].name + " (n=" + std::to_string(series[k].values.size()) + ")", {kLeft + pw - 158, ly});
  }
  if (!annotation.empty()) put(canvas, annotation, {kLeft + 10, kTop + 22}, 0.55, {0, 0, 0});
  return canvas;
}

void save(const cv::Mat& canvas, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), canvas)) throw Error(ErrorCategory::io, kModule, "cannot write " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> emit_histograms(const ScoreTable& table, const std::filesystem::path& out_dir,
                                                   const std::string& ext) {
  if (table.rows.empty()) throw Error(ErrorCategory::data, kModule, "cannot plot an empty score table");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  std::vector<double> avg[2];
  for (const auto label : {data::Label::morphed, data::Label::non_morphed}) {
    Series d1{"d(O1,X)", {}, {200, 90, 30}};
    Series d2{"d(O2,X)", {}, {40, 140, 40}};
    Series da{"avg_d", {}, {30, 30, 200}};
    for (const auto& r : table.rows) {
      if (r.label != label) continue;
      d1.values.push_back(r.d_o1_x);
      d2.values.push_back(r.d_o2_x);
      da.values.push_back(r.avg_d);
    }
    avg[label == data::Label::morphed ? 0 : 1] = da.values;
    const auto name = data::to_string(label);
    const auto path = out_dir / (name + "_hist." + ext);
    save(render(name + " inputs: output-to-input distance", {d1, d2, da}, ""), path);
    written.push_back(path);
  }
  std::string note = "d' = n/a";
  try {
    note = format("d' = %.3f", dprime(avg[0], avg[1]));
  } catch (const Error&) {
  }
  const auto overlay = out_dir / ("avg_overlay." + ext);
  save(render("average output-to-input distance",
              {{"morphed", avg[0], {30, 30, 200}}, {"non_morphed", avg[1], {200, 90, 30}}}, note),
       overlay);
  written.push_back(overlay);
  return written;
}

}  // namespace demorph::eval
