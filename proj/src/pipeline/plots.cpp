#include "rscope/pipeline/plots.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "rscope/errors.hpp"
#include "rscope/pipeline/csv.hpp"

namespace rscope::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 400, kMargin = 56;

class Svg {
 public:
  Svg(double w, double h) {
    body_ += fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
        "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
        w, h);
  }
  void line(double x1, double y1, double x2, double y2, const char* stroke = "black") {
    body_ += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\"/>\n", x1, y1,
                         x2, y2, stroke);
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const char* stroke = "black") {
    body_ += fmt::format(
        "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" stroke=\"{}\"/>\n", x, y, w, h,
        fill, stroke);
  }
  void circle(double x, double y, double r) {
    body_ += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{:.2f}\" fill=\"none\" stroke=\"black\"/>\n", x, y,
                         r);
  }
  void polyline(const std::vector<std::pair<double, double>>& pts) {
    std::string s;
    for (const auto& [x, y] : pts) s += fmt::format("{:.2f},{:.2f} ", x, y);
    body_ += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n", s);
  }
  void text(double x, double y, const std::string& t, const char* anchor = "middle", int size = 11) {
    body_ += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"{}\" text-anchor=\"{}\">{}</text>\n", x, y,
                         size, anchor, t);
  }
  void save(const fs::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << body_ << "</svg>\n";
  }

 private:
  std::string body_;
};

struct Axis {
  double lo, hi;
  double map(double v, double a, double b) const { return hi == lo ? (a + b) / 2 : a + (v - lo) / (hi - lo) * (b - a); }
};

void frame(Svg& svg, const std::string& title, const std::string& xlabel, const std::string& ylabel,
           const Axis& y) {
  svg.text(kWidth / 2, 24, title, "middle", 14);
  svg.line(kMargin, kHeight - kMargin, kWidth - kMargin / 2, kHeight - kMargin);
  svg.line(kMargin, kMargin, kMargin, kHeight - kMargin);
  svg.text(kWidth / 2, kHeight - 14, xlabel);
  svg.text(16, kHeight / 2, ylabel);
  for (int t = 0; t <= 4; ++t) {
    const double v = y.lo + (y.hi - y.lo) * t / 4.0;
    const double py = y.map(v, kHeight - kMargin, kMargin);
    svg.line(kMargin - 4, py, kMargin, py);
    svg.text(kMargin - 6, py + 4, format_number(std::round(v * 100) / 100), "end", 10);
  }
}

fs::path render_boxplot(const fs::path& csv, const fs::path& out) {
  const auto t = read_csv(csv, {"layer", "median_deg", "q1_deg", "q3_deg", "whisker_low_deg", "whisker_high_deg"},
                          {"layer", "median_deg", "q1_deg", "q3_deg", "whisker_low_deg", "whisker_high_deg"});
  const auto outlier_col = column_index(t, "outliers_deg");
  Axis y{0.0, 90.0};
  Svg svg(kWidth, kHeight);
  frame(svg, "Smallest principal angle per layer", "layer", "deg", y);
  const double n = static_cast<double>(std::max<std::size_t>(t.rows().size(), 1));
  const double slot = (kWidth - 1.5 * kMargin) / n;
  std::size_t row_no = 1;
  for (const auto& r : t.rows()) {
    ++row_no;
    auto v = [&](const char* c) { return parse_number(r[column_index(t, c)], row_no); };
    const double cx = kMargin + slot * (static_cast<double>(row_no - 2) + 0.5);
    const double w = slot * 0.5;
    auto py = [&](double deg) { return y.map(deg, kHeight - kMargin, kMargin); };
    svg.line(cx, py(v("whisker_low_deg")), cx, py(v("q1_deg")));
    svg.line(cx, py(v("q3_deg")), cx, py(v("whisker_high_deg")));
    svg.rect(cx - w / 2, py(v("q3_deg")), w, py(v("q1_deg")) - py(v("q3_deg")), "lightsteelblue");
    svg.line(cx - w / 2, py(v("median_deg")), cx + w / 2, py(v("median_deg")), "darkred");
    const auto& outliers = r[outlier_col];
    std::size_t start = 0;
    while (start < outliers.size()) {
      const auto end = std::min(outliers.find(';', start), outliers.size());
      svg.circle(cx, py(parse_number(outliers.substr(start, end - start), row_no)), 2.5);
      start = end + 1;
    }
    svg.text(cx, kHeight - kMargin + 14, r[column_index(t, "layer")], "middle", 10);
  }
  svg.save(out);
  return out;
}

std::vector<fs::path> render_heatmaps(const fs::path& csv, const fs::path& dir) {
  const auto t = read_csv(csv, {"level", "layer", "head", "c_pert"}, {"layer", "head", "c_clean", "c_pert"});
  std::map<std::string, std::vector<std::array<double, 3>>> by_level;
  std::vector<std::string> order;
  double vmax = 0.0;
  std::size_t row_no = 1;
  for (const auto& r : t.rows()) {
    ++row_no;
    const auto& level = r[column_index(t, "level")];
    if (!by_level.count(level)) order.push_back(level);
    const double layer = parse_number(r[column_index(t, "layer")], row_no);
    const double head = parse_number(r[column_index(t, "head")], row_no);
    const double v = parse_number(r[column_index(t, "c_pert")], row_no);
    if (layer < 1 || head < 1) throw ParseError("layer and head must be 1-based", row_no);
    vmax = std::max({vmax, v, parse_number(r[column_index(t, "c_clean")], row_no)});
    by_level[level].push_back({layer, head, v});
  }
  std::vector<fs::path> out;
  for (const auto& level : order) {
    const auto& cells = by_level[level];
    double layers = 0, heads = 0;
    for (const auto& c : cells) layers = std::max(layers, c[0]), heads = std::max(heads, c[1]);
    Svg svg(kWidth, kHeight);
    svg.text(kWidth / 2, 24, fmt::format("Retained common features ({})", level), "middle", 14);
    const double cw = (kWidth - 2 * kMargin) / heads, ch = (kHeight - 2 * kMargin) / layers;
    for (const auto& c : cells) {
      const double f = vmax > 0 ? c[2] / vmax : 0.0;
      const int shade = static_cast<int>(std::lround(255 * (1.0 - f)));
      svg.rect(kMargin + (c[1] - 1) * cw, kMargin + (c[0] - 1) * ch, cw, ch,
               fmt::format("rgb({},{},255)", shade, shade), "white");
    }
    svg.text(kWidth / 2, kHeight - 14, "head");
    svg.text(16, kHeight / 2, "layer");
    const auto path = dir / fmt::format("retention_heatmap_{}.svg", level);
    svg.save(path);
    out.push_back(path);
  }
  return out;
}

fs::path render_drop_curve(const fs::path& csv, const fs::path& out) {
  const auto t = read_csv(csv, {"level", "delta_c"}, {"delta_c"});
  std::vector<double> values;
  std::size_t row_no = 1;
  for (const auto& r : t.rows()) values.push_back(parse_number(r[1], ++row_no));
  const double top = values.empty() ? 1.0 : std::max(1.0, *std::max_element(values.begin(), values.end()));
  Axis y{0.0, top};
  Svg svg(kWidth, kHeight);
  frame(svg, "Mean drop in common-feature count", "perturbation level", "delta C", y);
  std::vector<std::pair<double, double>> pts;
  const double slot = (kWidth - 1.5 * kMargin) / static_cast<double>(std::max<std::size_t>(values.size(), 1));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = kMargin + slot * (static_cast<double>(i) + 0.5);
    pts.emplace_back(x, y.map(values[i], kHeight - kMargin, kMargin));
    svg.text(x, kHeight - kMargin + 14, t.rows()[i][0], "middle", 9);
  }
  svg.polyline(pts);
  svg.save(out);
  return out;
}

}  // namespace

std::vector<fs::path> render_plots(const fs::path& dir) {
  std::vector<fs::path> out;
  if (fs::exists(dir / "subspace_summary.csv")) {
    out.push_back(render_boxplot(dir / "subspace_summary.csv", dir / "angles_boxplot.svg"));
  }
  if (fs::exists(dir / "retention_heatmap.csv")) {
    auto h = render_heatmaps(dir / "retention_heatmap.csv", dir);
    out.insert(out.end(), h.begin(), h.end());
  }
  if (fs::exists(dir / "delta_c.csv")) out.push_back(render_drop_curve(dir / "delta_c.csv", dir / "delta_c.svg"));
  return out;
}

}  // namespace rscope::pipeline
