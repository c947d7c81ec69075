#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "cmir/bench.hpp"
#include "cmir/csv.hpp"
#include "cmir/errors.hpp"
#include "cmir/keyvalue.hpp"

// Aggregation of metric CSVs across runs. Two inputs are understood: the
// long metric format (run,split,corruption,metric,value) and noise-bench
// tables (kind,nr,...), which map to corruption "<kind>@<nr>".

namespace cmir {

struct SummaryRow {
  std::string split;
  std::string corruption;
  std::string metric;
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
};

struct Report {
  std::vector<SummaryRow> rows;
  std::size_t files = 0;
  std::vector<std::string> skipped;  ///< CSVs with an unrecognized header
};

inline constexpr const char* kSummaryStem = "summary";

namespace detail {

using Key = std::tuple<std::string, std::string, std::string>;

inline void ingest(const csv::Table& t, std::map<Key, std::vector<double>>& values) {
  auto add = [&](const std::string& split, const std::string& corr, const std::string& metric,
                 const std::string& v) {
    if (v == "NA" || v.empty()) return;
    values[{split, corr, metric}].push_back(kv::parse_double(metric, v));
  };
  if (t.header == metric_header()) {
    for (const auto& r : t.rows) add(r[1], r[2], r[3], r[4]);
    return;
  }
  const std::size_t kind = t.column("kind");
  const std::size_t nr = t.column("nr");
  for (const auto& r : t.rows) {
    for (const char* m : {"acc7", "acc2", "f1", "mae", "corr"}) {
      add("test", r[kind] + "@" + r[nr], m, r[t.column(m)]);
    }
  }
}

inline bool is_noise_header(const std::vector<std::string>& h) {
  return h.size() >= 7 && h[0] == "kind" && h[1] == "nr";
}

}  // namespace detail

/// Reads every CSV under `dir` (recursively, skipping earlier summaries).
inline Report build_report(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw LoadError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv" && e.path().stem() != kSummaryStem) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  Report rep;
  std::map<detail::Key, std::vector<double>> values;
  for (const auto& f : files) {
    const csv::Table t = csv::read(f.string());
    if (t.header != metric_header() && !detail::is_noise_header(t.header)) {
      rep.skipped.push_back(f.string());
      continue;
    }
    detail::ingest(t, values);
    ++rep.files;
  }
  if (values.empty()) throw EmptyInputError("no metric CSVs found under '" + dir.string() + "'");
  for (const auto& [key, v] : values) {
    rep.rows.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), v.size(), mean(v), stddev(v),
                        median(v)});
  }
  return rep;
}

inline csv::Table summary_table(const Report& rep) {
  csv::Table t;
  t.header = {"split", "corruption", "metric", "n", "mean", "std", "median"};
  for (const auto& r : rep.rows) {
    t.rows.push_back({r.split, r.corruption, r.metric, std::to_string(r.n), kv::format_double(r.mean),
                      kv::format_double(r.std), kv::format_double(r.median)});
  }
  return t;
}

inline std::string summary_text(const Report& rep) {
  std::string s = "files aggregated: " + std::to_string(rep.files) + "\n";
  for (const auto& f : rep.skipped) s += "skipped (unrecognized header): " + f + "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-22s %-6s %4s %12s %12s %12s\n", "split", "corruption", "metric", "n",
                "mean", "std", "median");
  s += line;
  for (const auto& r : rep.rows) {
    std::snprintf(line, sizeof line, "%-10s %-22s %-6s %4zu %12.6f %12.6f %12.6f\n", r.split.c_str(),
                  r.corruption.c_str(), r.metric.c_str(), r.n, r.mean, r.std, r.median);
    s += line;
  }
  return s;
}

inline std::string xml_escape(const std::string& s) {
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

/// Line chart of mean `metric` against noise rate, one series per kind.
inline std::string line_chart_svg(const Report& rep, const std::string& metric = "mae") {
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const auto& r : rep.rows) {
    const auto at = r.corruption.find('@');
    if (r.metric != metric || at == std::string::npos) continue;
    const std::string nr = r.corruption.substr(at + 1);
    if (nr == "Avg") continue;
    series[r.corruption.substr(0, at)].emplace_back(kv::parse_double("nr", nr), r.mean);
  }
  const double W = 640, H = 400, L = 70, R = 160, T = 40, B = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (auto& [k, pts] : series) {
    std::sort(pts.begin(), pts.end());
    for (auto [x, y] : pts) {
      if (first) {
        x0 = x1 = x;
        y0 = y1 = y;
        first = false;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + xml_escape(metric) +
       " vs noise rate</text>\n";
  s += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) + "\" y2=\"" + num(H - B) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) + "\" y2=\"" + num(H - B) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    s += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(H - B + 18) + "\" text-anchor=\"middle\" font-size=\"11\">" +
         num(xv) + "</text>\n";
    s += "<text x=\"" + num(L - 8) + "\" y=\"" + num(py(yv) + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
         num(yv) + "</text>\n";
  }
  s += "<text x=\"" + num((L + W - R) / 2) + "\" y=\"" + num(H - 16) +
       "\" text-anchor=\"middle\" font-size=\"12\">noise rate</text>\n";
  if (series.empty()) {
    s += "<text x=\"320\" y=\"200\" text-anchor=\"middle\" font-size=\"12\">no noise-rate data</text>\n";
  }
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::size_t i = 0;
  for (const auto& [kind, pts] : series) {
    const char* color = colors[i % 5];
    std::string points;
    for (auto [x, y] : pts) points += (points.empty() ? "" : " ") + num(px(x)) + "," + num(py(y));
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + points +
         "\"/>\n";
    const double ly = T + 20.0 * static_cast<double>(i);
    s += "<line x1=\"" + num(W - R + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(W - R + 32) + "\" y2=\"" +
         num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(W - R + 38) + "\" y=\"" + num(ly + 4) + "\" font-size=\"11\">" + xml_escape(kind) +
         "</text>\n";
    ++i;
  }
  s += "</svg>\n";
  return s;
}

/// Writes summary.csv, summary.txt and summary.svg into `dir`.
inline Report write_report(const std::filesystem::path& dir) {
  const Report rep = build_report(dir);
  csv::write((dir / "summary.csv").string(), summary_table(rep));
  std::ofstream((dir / "summary.txt").string()) << summary_text(rep);
  std::ofstream((dir / "summary.svg").string()) << line_chart_svg(rep);
  return rep;
}

}  // namespace cmir
