#include "contmask/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace contmask {
namespace {

constexpr double kPanelWidth = 360.0;
constexpr double kPanelHeight = 240.0;
constexpr double kMargin = 48.0;
constexpr double kLegendRow = 18.0;

const char* const kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void panel(std::ostringstream& svg, double x0, const std::string& title, std::span<const Curve> curves,
           std::vector<std::optional<double>> Curve::*series) {
  std::size_t steps = 1;
  for (const auto& c : curves) steps = std::max(steps, (c.*series).size());
  const double y0 = kMargin;
  const auto px = [&](std::size_t t) {
    return steps == 1 ? x0 + kPanelWidth / 2 : x0 + kPanelWidth * static_cast<double>(t) / static_cast<double>(steps - 1);
  };
  const auto py = [&](double v) { return y0 + kPanelHeight * (1.0 - std::clamp(v, 0.0, 100.0) / 100.0); };

  svg << "<text x=\"" << fmt(x0 + kPanelWidth / 2) << "\" y=\"" << fmt(y0 - 16)
      << "\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  svg << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(kPanelWidth) << "\" height=\""
      << fmt(kPanelHeight) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int v = 0; v <= 100; v += 25) {
    svg << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(py(v)) << "\" x2=\"" << fmt(x0 + kPanelWidth)
        << "\" y2=\"" << fmt(py(v)) << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << fmt(x0 - 6) << "\" y=\"" << fmt(py(v) + 4) << "\" text-anchor=\"end\" font-size=\"10\">"
        << v << "</text>\n";
  }
  for (std::size_t t = 0; t < steps; ++t) {
    svg << "<text x=\"" << fmt(px(t)) << "\" y=\"" << fmt(y0 + kPanelHeight + 14)
        << "\" text-anchor=\"middle\" font-size=\"10\">" << t << "</text>\n";
  }
  svg << "<text x=\"" << fmt(x0 + kPanelWidth / 2) << "\" y=\"" << fmt(y0 + kPanelHeight + 30)
      << "\" text-anchor=\"middle\" font-size=\"11\">step</text>\n";

  for (std::size_t k = 0; k < curves.size(); ++k) {
    const char* colour = kColours[k % std::size(kColours)];
    const auto& ys = curves[k].*series;
    std::string path;
    bool pen_down = false;
    for (std::size_t t = 0; t < ys.size(); ++t) {
      if (!ys[t]) {
        pen_down = false;
        continue;
      }
      path += (pen_down ? " L " : " M ") + fmt(px(t)) + " " + fmt(py(*ys[t]));
      pen_down = true;
      svg << "<circle cx=\"" << fmt(px(t)) << "\" cy=\"" << fmt(py(*ys[t])) << "\" r=\"3\" fill=\"" << colour
          << "\"/>\n";
    }
    if (!path.empty()) {
      svg << "<path d=\"" << path.substr(1) << "\" fill=\"none\" stroke=\"" << colour
          << "\" stroke-width=\"2\"/>\n";
    }
  }
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> cell_value(const std::string& s, const std::filesystem::path& file) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(file.string() + ": bad number '" + s + "'");
  }
}

Curve curve_from_csv(const std::filesystem::path& dir) {
  const auto file = dir / "steps.csv";
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,class_id,pq,sq,rq,iou") {
    throw FormatError(file.string() + ": unexpected header");
  }
  // step → (sum, count) for pq and iou
  std::map<int, std::pair<std::pair<double, int>, std::pair<double, int>>> acc;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 6) throw FormatError(file.string() + ": expected 6 columns in '" + line + "'");
    const auto step = cell_value(cells[0], file);
    if (!step || *step < 0) throw FormatError(file.string() + ": bad step in '" + line + "'");
    auto& a = acc[static_cast<int>(*step)];
    if (const auto v = cell_value(cells[2], file)) a.first.first += *v, ++a.first.second;
    if (const auto v = cell_value(cells[5], file)) a.second.first += *v, ++a.second.second;
  }
  Curve c;
  c.name = dir.filename().string();
  const auto summary = dir / "summary.json";
  if (std::ifstream s(summary); s) {
    try {
      const auto j = nlohmann::json::parse(s);
      if (j.contains("name") && j["name"].is_string()) c.name = j["name"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(summary.string() + ": " + e.what());
    }
  }
  const int steps = acc.empty() ? 0 : acc.rbegin()->first + 1;
  for (int t = 0; t < steps; ++t) {
    const auto it = acc.find(t);
    if (it == acc.end()) {
      c.pq.emplace_back();
      c.miou.emplace_back();
      continue;
    }
    const auto& [pq, iou] = it->second;
    c.pq.push_back(pq.second ? std::optional(pq.first / pq.second) : std::nullopt);
    c.miou.push_back(iou.second ? std::optional(iou.first / iou.second) : std::nullopt);
  }
  return c;
}

}  // namespace

Curve make_curve(const std::string& name, std::span<const StepReport> reports) {
  Curve c;
  c.name = name;
  for (const auto& r : reports) {
    const auto scale = [](std::optional<double> v) { return v ? std::optional(100.0 * *v) : std::nullopt; };
    c.pq.push_back(scale(class_mean(r, r.seen_classes, &ClassMetrics::pq)));
    c.miou.push_back(scale(class_mean(r, r.seen_classes, &ClassMetrics::iou)));
  }
  return c;
}

std::string render_curves_svg(std::span<const Curve> curves) {
  const double width = 3 * kMargin + 2 * kPanelWidth + kMargin;
  const double legend_top = kMargin + kPanelHeight + 48;
  const double height = legend_top + kLegendRow * static_cast<double>(curves.size()) + 16;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  panel(svg, kMargin * 1.5, "PQ (all seen classes)", curves, &Curve::pq);
  panel(svg, kMargin * 3 + kPanelWidth, "mIoU (all seen classes)", curves, &Curve::miou);
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const double y = legend_top + kLegendRow * static_cast<double>(k);
    const char* colour = kColours[k % std::size(kColours)];
    svg << "<line x1=\"" << fmt(kMargin * 1.5) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(kMargin * 1.5 + 24)
        << "\" y2=\"" << fmt(y) << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fmt(kMargin * 1.5 + 30) << "\" y=\"" << fmt(y + 4) << "\" font-size=\"12\">"
        << escape(curves[k].name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<Curve> load_curves(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError(dir.string() + " is not a directory");
  if (std::filesystem::exists(dir / "steps.csv")) return {curve_from_csv(dir)};
  std::vector<std::filesystem::path> runs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "steps.csv")) runs.push_back(entry.path());
  }
  if (runs.empty()) throw FormatError("no steps.csv under " + dir.string());
  std::sort(runs.begin(), runs.end());
  std::vector<Curve> out;
  for (const auto& r : runs) out.push_back(curve_from_csv(r));
  return out;
}

}  // namespace contmask
