#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace dmad::eval {

inline constexpr int kLossCsvSchema = 1;

// Training-log JSON lines flattened to CSV; an empty log gives the header only.
std::string loss_csv(const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Dependency-free SVG markup.
std::string line_chart_svg(const std::string& title, const std::vector<Series>& series);
// Bars sorted in descending order of the first series.
std::string bar_chart_svg(const std::string& title, const std::vector<Series>& series);

// Writes losses.csv and losses.svg (and attribution.svg when the run holds
// attribution.json) into `out`. Returns the files written.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir,
                                                const std::filesystem::path& out);

}  // namespace dmad::eval
