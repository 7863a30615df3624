#include "afa/plot.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace afa {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                          "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_budget_svg(const std::vector<CsvRow>& rows, const std::string& dataset,
                              const std::string& metric_label) {
  std::vector<CsvRow> mine;
  for (const auto& r : rows)
    if (r.dataset == dataset) mine.push_back(r);
  if (mine.empty()) throw std::invalid_argument("render_budget_svg: no rows for " + dataset);

  std::vector<std::string> methods;
  int max_step = 0;
  double ymin = 1e30, ymax = -1e30;
  for (const auto& r : mine) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    max_step = std::max(max_step, r.step);
    ymin = std::min(ymin, r.mean - r.stddev);
    ymax = std::max(ymax, r.mean + r.stddev);
  }
  if (ymin == ymax) {
    ymin -= 0.05;
    ymax += 0.05;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const double W = 640, H = 420, ML = 60, MR = 150, MT = 30, MB = 50;
  const double PW = W - ML - MR, PH = H - MT - MB;
  auto sx = [&](double step) { return ML + PW * (step - 1.0) / std::max(1.0, max_step - 1.0); };
  auto sy = [&](double v) { return MT + PH * (1.0 - (v - ymin) / (ymax - ymin)); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << ML << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">"
      << dataset << "</text>\n";

  // axes
  svg << "<line x1=\"" << ML << "\" y1=\"" << MT + PH << "\" x2=\"" << ML + PW << "\" y2=\""
      << MT + PH << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << MT + PH
      << "\" stroke=\"black\"/>\n";
  for (int s = 1; s <= max_step; ++s) {
    svg << "<text x=\"" << sx(s) << "\" y=\"" << MT + PH + 18
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" << s
        << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    svg << "<text x=\"" << ML - 8 << "\" y=\"" << sy(v) + 3
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << fmt(v)
        << "</text>\n";
    svg << "<line x1=\"" << ML << "\" y1=\"" << sy(v) << "\" x2=\"" << ML + PW << "\" y2=\""
        << sy(v) << "\" stroke=\"#dddddd\"/>\n";
  }
  svg << "<text x=\"" << ML + PW / 2 << "\" y=\"" << H - 12
      << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">acquired "
         "features</text>\n";
  svg << "<text x=\"16\" y=\"" << MT + PH / 2
      << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 16 "
      << MT + PH / 2 << ")\">" << metric_label << "</text>\n";

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const std::string& method = methods[mi];
    const char* color = kPalette[mi % (sizeof kPalette / sizeof kPalette[0])];
    std::vector<const CsvRow*> pts;
    for (const auto& r : mine)
      if (r.method == method) pts.push_back(&r);
    std::sort(pts.begin(), pts.end(),
              [](const CsvRow* a, const CsvRow* b) { return a->step < b->step; });

    std::ostringstream poly;
    for (const auto* p : pts) poly << sx(p->step) << "," << sy(p->mean) << " ";
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\""
        << poly.str() << "\"/>\n";
    for (const auto* p : pts) {
      if (p->stddev > 0.0) {
        svg << "<line x1=\"" << sx(p->step) << "\" y1=\"" << sy(p->mean - p->stddev)
            << "\" x2=\"" << sx(p->step) << "\" y2=\"" << sy(p->mean + p->stddev)
            << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
      }
      svg << "<circle cx=\"" << sx(p->step) << "\" cy=\"" << sy(p->mean) << "\" r=\"2.2\" fill=\""
          << color << "\"/>\n";
    }
    const double ly = MT + 14.0 * (static_cast<double>(mi) + 1.0);
    svg << "<line x1=\"" << ML + PW + 10 << "\" y1=\"" << ly << "\" x2=\"" << ML + PW + 30
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << ML + PW + 35 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << method << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::string> write_budget_svgs(const std::vector<CsvRow>& rows,
                                           const std::string& out_dir) {
  if (rows.empty()) throw std::invalid_argument("write_budget_svgs: no rows");
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> datasets;
  for (const auto& r : rows)
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end())
      datasets.push_back(r.dataset);
  std::vector<std::string> written;
  for (const auto& ds : datasets) {
    const std::string label =
        ds.find("physionet") != std::string::npos ? "F1" : "Accuracy";
    const std::string svg = render_budget_svg(rows, ds, label);
    std::string safe = ds;
    std::replace(safe.begin(), safe.end(), '/', '_');
    const std::string path = out_dir + "/" + safe + ".svg";
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_budget_svgs: cannot open " + path);
    f << svg;
    written.push_back(path);
  }
  return written;
}

}  // namespace afa
