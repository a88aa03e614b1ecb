#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "seedet/error.hpp"
#include "seedet/evaluation.hpp"

namespace seedet {

namespace {

constexpr double kWidth = 640, kHeight = 440;
constexpr double kLeft = 64, kRight = 24, kTop = 40, kBottom = 56;
constexpr double kFpMin = 0.125, kFpMax = 8.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

double px(double fp) {
  const double t = (std::log2(std::clamp(fp, kFpMin, kFpMax)) - std::log2(kFpMin)) /
                   (std::log2(kFpMax) - std::log2(kFpMin));
  return kLeft + t * (kWidth - kLeft - kRight);
}

double py(double s) { return kTop + (1.0 - std::clamp(s, 0.0, 1.0)) * (kHeight - kTop - kBottom); }

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string polyline(const std::vector<std::pair<double, double>>& pts, const char* color, const char* extra) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" " << extra << " points=\"";
  for (const auto& [x, y] : pts) os << fmt(x) << ',' << fmt(y) << ' ';
  os << "\"/>\n";
  return os.str();
}

}  // namespace

std::string froc_svg(std::span<const PlotSeries> series, const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";

  for (double fp : kFrocRates) {
    os << "<line x1=\"" << fmt(px(fp)) << "\" y1=\"" << kTop << "\" x2=\"" << fmt(px(fp)) << "\" y2=\""
       << kHeight - kBottom << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << fmt(px(fp)) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">" << fp
       << "</text>\n";
  }
  for (int i = 0; i <= 10; ++i) {
    const double s = i / 10.0;
    os << "<line x1=\"" << kLeft << "\" y1=\"" << fmt(py(s)) << "\" x2=\"" << kWidth - kRight << "\" y2=\""
       << fmt(py(s)) << "\" stroke=\"#eee\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(py(s) + 4) << "\" text-anchor=\"end\">" << fmt(s)
       << "</text>\n";
  }
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
     << kHeight - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 14
     << "\" text-anchor=\"middle\">average false positives per scan</text>\n";
  os << "<text transform=\"translate(18," << (kTop + kHeight - kBottom) / 2
     << ") rotate(-90)\" text-anchor=\"middle\">sensitivity</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::vector<std::pair<double, double>> pts;
    // Dense sampling of the interpolated curve on the log axis.
    for (int i = 0; i <= 120; ++i) {
      const double fp = kFpMin * std::exp2(6.0 * i / 120.0);
      pts.emplace_back(px(fp), py(sensitivity_at(s.curve.points, fp)));
    }
    os << polyline(pts, color, "stroke-width=\"2\"");
    for (std::size_t i = 0; i < s.curve.rates.size(); ++i)
      os << "<circle cx=\"" << fmt(px(s.curve.rates[i])) << "\" cy=\"" << fmt(py(s.curve.sensitivities[i]))
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    if (s.band) {
      for (const auto* edge : {&s.band->lower, &s.band->upper}) {
        std::vector<std::pair<double, double>> b;
        for (std::size_t i = 0; i < s.curve.rates.size() && i < edge->size(); ++i)
          b.emplace_back(px(s.curve.rates[i]), py((*edge)[i]));
        os << polyline(b, color, "stroke-dasharray=\"5,4\"");
      }
    }
    const double ly = kHeight - kBottom - 14.0 - 16.0 * static_cast<double>(series.size() - 1 - k);
    os << "<line x1=\"" << kWidth - kRight - 190 << "\" y1=\"" << fmt(ly - 4) << "\" x2=\"" << kWidth - kRight - 166
       << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kWidth - kRight - 160 << "\" y=\"" << fmt(ly) << "\">" << escape(s.label) << " ("
       << fmt(s.curve.mean) << ")</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_froc_svg(const std::filesystem::path& path, std::span<const PlotSeries> series, const std::string& title) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << froc_svg(series, title);
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace seedet
