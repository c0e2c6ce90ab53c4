#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "scn/harness.hpp"

namespace scn {
namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string tick(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

struct Range {
  double lo, hi;
};

Range padded(double lo, double hi) {
  if (hi > lo) return {lo, hi};
  const double pad = lo == 0.0 ? 0.5 : std::abs(lo) * 0.1;
  return {lo - pad, hi + pad};
}

}  // namespace

std::string render_loss_svg(const std::vector<EpochMetrics>& rows) {
  if (rows.empty()) throw Error("plot: no metrics rows");
  double xlo = static_cast<double>(rows.front().epoch), xhi = xlo;
  double ylo = INFINITY, yhi = -INFINITY;
  for (const auto& r : rows) {
    xlo = std::min(xlo, static_cast<double>(r.epoch));
    xhi = std::max(xhi, static_cast<double>(r.epoch));
    for (double y : {r.train_loss, r.test_loss}) {
      if (!std::isfinite(y)) continue;
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
  }
  if (!std::isfinite(ylo)) ylo = yhi = 0.0;
  const Range xr = padded(xlo, xhi);
  const Range yr = padded(ylo, yhi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
     << "font-size=\"16\">Contrastive loss</text>\n";
  os << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    os << "<text x=\"" << num(px(fx)) << "\" y=\"" << num(kTop + ph + 18)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << tick(fx) << "</text>\n";
    os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(fy) + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << tick(fy) << "</text>\n";
  }
  os << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 10)
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n";

  auto series = [&](const char* name, const char* color, double EpochMetrics::*field, int slot) {
    std::ostringstream pts;
    bool any = false;
    for (const auto& r : rows) {
      if (!std::isfinite(r.*field)) continue;
      if (any) pts << " ";
      pts << num(px(static_cast<double>(r.epoch))) << "," << num(py(r.*field));
      any = true;
    }
    if (!any) return;
    os << "<polyline id=\"" << name << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
       << pts.str() << "\"/>\n";
    const double ly = kTop + 14 + 16 * slot;
    os << "<line x1=\"" << num(kLeft + pw - 110) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(kLeft + pw - 90)
       << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(kLeft + pw - 84) << "\" y=\"" << num(ly + 4)
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << name << "</text>\n";
  };
  series("train_loss", "#1f77b4", &EpochMetrics::train_loss, 0);
  series("test_loss", "#d62728", &EpochMetrics::test_loss, 1);
  os << "</svg>\n";
  return os.str();
}

void emit_plot(const std::filesystem::path& metrics_csv, const std::filesystem::path& svg_out) {
  const std::string svg = render_loss_svg(read_metrics_csv(metrics_csv));
  std::ofstream f(svg_out, std::ios::trunc);
  if (!f) throw Error("cannot write " + svg_out.string());
  f << svg;
}

}  // namespace scn
