#include "dmad/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dmad::eval {

using nlohmann::json;

namespace {

const std::vector<std::string> kLossColumns = {"loss", "detection", "map", "unimodal", "multimodal", "planning"};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return palette[i % 6];
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

constexpr double kWidth = 640, kHeight = 360, kPad = 48;

std::string svg_open(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
    << "<line x1=\"" << kPad << "\" y1=\"" << kHeight - kPad << "\" x2=\"" << kWidth - kPad << "\" y2=\""
    << kHeight - kPad << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kHeight - kPad
    << "\" stroke=\"black\"/>\n";
  return s.str();
}

}  // namespace

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

std::string loss_csv(const std::vector<json>& records) {
  std::ostringstream out;
  out << "schema,stage,step";
  for (const auto& c : kLossColumns) out << ',' << c;
  out << '\n';
  for (const auto& r : records) {
    out << kLossCsvSchema << ',' << r.value("stage", 0) << ',' << r.value("step", 0);
    for (const auto& c : kLossColumns) {
      out << ',';
      if (r.contains(c)) out << num(r.at(c).get<double>());
    }
    out << '\n';
  }
  return out.str();
}

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  std::ostringstream svg;
  svg << svg_open(title);
  if (std::isfinite(x0)) {
    if (x1 == x0) x1 = x0 + 1.0;
    if (y1 == y0) y1 = y0 + 1.0;
    auto px = [&](double x) { return kPad + (x - x0) / (x1 - x0) * (kWidth - 2 * kPad); };
    auto py = [&](double y) { return kHeight - kPad - (y - y0) / (y1 - y0) * (kHeight - 2 * kPad); };
    svg << "<text x=\"" << kPad - 4 << "\" y=\"" << kPad << "\" text-anchor=\"end\" font-size=\"10\">" << num(y1)
        << "</text>\n<text x=\"" << kPad - 4 << "\" y=\"" << kHeight - kPad
        << "\" text-anchor=\"end\" font-size=\"10\">" << num(y0) << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
      svg << "<polyline fill=\"none\" stroke=\"" << color(i) << "\" points=\"";
      for (const auto& [x, y] : series[i].points) svg << num(px(x)) << ',' << num(py(y)) << ' ';
      svg << "\"/>\n<text x=\"" << kWidth - kPad + 4 << "\" y=\"" << kPad + 14 * static_cast<double>(i)
          << "\" font-size=\"10\" fill=\"" << color(i) << "\">" << series[i].name << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<Series>& series) {
  std::ostringstream svg;
  svg << svg_open(title);
  if (!series.empty() && !series[0].points.empty()) {
    const auto& lead = series[0].points;
    std::vector<std::size_t> order(lead.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return lead[a].second > lead[b].second; });
    double top = 0.0;
    for (const auto& s : series)
      for (const auto& p : s.points) top = std::max(top, std::abs(p.second));
    if (top == 0.0) top = 1.0;
    const double slot = (kWidth - 2 * kPad) / static_cast<double>(order.size());
    const double bar = slot / static_cast<double>(series.size() + 1);
    for (std::size_t k = 0; k < order.size(); ++k)
      for (std::size_t i = 0; i < series.size(); ++i) {
        if (order[k] >= series[i].points.size()) continue;
        const double v = std::abs(series[i].points[order[k]].second);
        const double h = v / top * (kHeight - 2 * kPad);
        svg << "<rect x=\"" << num(kPad + slot * static_cast<double>(k) + bar * static_cast<double>(i)) << "\" y=\""
            << num(kHeight - kPad - h) << "\" width=\"" << num(bar) << "\" height=\"" << num(h) << "\" fill=\""
            << color(i) << "\"/>\n";
      }
    for (std::size_t i = 0; i < series.size(); ++i)
      svg << "<text x=\"" << kWidth - kPad + 4 << "\" y=\"" << kPad + 14 * static_cast<double>(i)
          << "\" font-size=\"10\" fill=\"" << color(i) << "\">" << series[i].name << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir,
                                                const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  std::vector<json> records;
  const auto log = run_dir / "train_log.jsonl";
  if (std::filesystem::exists(log)) records = read_jsonl(log);
  std::vector<std::filesystem::path> written = {out / "losses.csv", out / "losses.svg"};
  write_text(written[0], loss_csv(records));
  std::vector<Series> series;
  for (const auto& c : kLossColumns) {
    Series s{c, {}};
    double x = 0.0;
    for (const auto& r : records) {
      if (r.contains(c)) s.points.emplace_back(x, r.at(c).get<double>());
      x += 1.0;
    }
    if (!s.points.empty()) series.push_back(std::move(s));
  }
  write_text(written[1], line_chart_svg("training losses", series));

  const auto attr = run_dir / "attribution.json";
  if (std::filesystem::exists(attr)) {
    std::ifstream in(attr);
    const json j = json::parse(in);
    std::vector<Series> bars;
    for (const char* key : {"stage1", "stage2"}) {
      Series s{key, {}};
      const auto v = j.at(key).get<std::vector<double>>();
      for (std::size_t i = 0; i < v.size(); ++i) s.points.emplace_back(static_cast<double>(i), v[i]);
      bars.push_back(std::move(s));
    }
    written.push_back(out / "attribution.svg");
    write_text(written.back(), bar_chart_svg("attribution by channel", bars));
  }
  return written;
}

}  // namespace dmad::eval
