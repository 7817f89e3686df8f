#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bcr/errors.hpp"
#include "bcr/experiment.hpp"

namespace bcr::experiment {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kMargin = 50;

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write plot " + path.string());
  out << body;
}

std::string svg_open(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
     << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
     << kHeight - kMargin << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kHeight - kMargin
     << "\" stroke=\"black\"/>\n";
  return os.str();
}

std::string loss_curve_svg(const ItemReport& item) {
  struct Series {
    const char* name;
    double LossRecord::*field;
    const char* colour;
  };
  const Series series[] = {{"total", &LossRecord::total, "black"},
                           {"stat", &LossRecord::stat, "#d62728"},
                           {"dict", &LossRecord::dict, "#1f77b4"},
                           {"pres", &LossRecord::pres, "#2ca02c"},
                           {"tv", &LossRecord::tv, "#9467bd"}};
  double top = 0.0;
  for (const auto& rec : item.loss_trace) {
    for (const auto& s : series) top = std::max(top, rec.*(s.field));
  }
  if (top <= 0.0) top = 1.0;
  const double plot_w = kWidth - 2 * kMargin;
  const double plot_h = kHeight - 2 * kMargin;
  const std::size_t n = item.loss_trace.size();
  std::ostringstream os;
  os << svg_open("Loss trace: " + item.id);
  os << "<text x=\"" << kMargin << "\" y=\"" << kMargin - 8 << "\">" << top << "</text>\n";
  os << "<text x=\"" << kWidth - kMargin << "\" y=\"" << kHeight - kMargin + 18 << "\" text-anchor=\"end\">step "
     << n << "</text>\n";
  int legend_y = kMargin + 10;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      const double x = kMargin + (n > 1 ? plot_w * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
      const double y = kHeight - kMargin - plot_h * (item.loss_trace[i].*(s.field)) / top;
      os << x << "," << y << " ";
    }
    os << "\"/>\n";
    os << "<text x=\"" << kWidth - kMargin - 60 << "\" y=\"" << legend_y << "\" fill=\"" << s.colour << "\">" << s.name
       << "</text>\n";
    legend_y += 16;
  }
  os << "</svg>\n";
  return os.str();
}

std::string aggregate_bars_svg(const ExperimentReport& report) {
  std::vector<std::pair<std::string, double>> bars;
  for (const char* key : {"C", "GP", "GH", "GH_head", "SD", "SSIM", "LPIPS"}) {
    if (auto it = report.aggregates.find(key); it != report.aggregates.end()) bars.emplace_back(key, it->second.mean);
  }
  double top = 1.0;
  for (const auto& [_, v] : bars) top = std::max(top, v);
  const double plot_w = kWidth - 2 * kMargin;
  const double plot_h = kHeight - 2 * kMargin;
  std::ostringstream os;
  os << svg_open("Aggregate metrics: " + report.manifest);
  const double slot = bars.empty() ? plot_w : plot_w / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double h = plot_h * std::max(0.0, bars[i].second) / top;
    const double x = kMargin + slot * static_cast<double>(i) + slot * 0.15;
    os << "<rect x=\"" << x << "\" y=\"" << kHeight - kMargin - h << "\" width=\"" << slot * 0.7 << "\" height=\"" << h
       << "\" fill=\"#4c72b0\"/>\n";
    os << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kHeight - kMargin + 16 << "\" text-anchor=\"middle\">"
       << bars[i].first << "</text>\n";
    os << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kHeight - kMargin - h - 4 << "\" text-anchor=\"middle\">"
       << std::round(bars[i].second * 1000.0) / 1000.0 << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace

std::size_t emit_plots(const ExperimentReport& report, const fs::path& dir) {
  std::vector<const ItemReport*> plottable;
  for (const auto& item : report.items) {
    if (!item.loss_trace.empty()) plottable.push_back(&item);
  }
  if (plottable.empty()) return 0;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IOError("cannot create plot directory " + dir.string());
  for (const ItemReport* item : plottable) write_file(dir / (item->id + "_loss.svg"), loss_curve_svg(*item));
  write_file(dir / "aggregates.svg", aggregate_bars_svg(report));
  return plottable.size() + 1;
}

}  // namespace bcr::experiment
