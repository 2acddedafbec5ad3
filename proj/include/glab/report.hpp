#pragma once

// Output artifacts: CSV tables, the verdict summary and optional SVG charts.
// Everything is written in the classic locale with '\n' line endings so that
// identical runs give identical bytes.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <locale>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include "glab/error.hpp"

namespace glab {

inline std::string format_double(double v, int precision = 12) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(precision) << v;
  return os.str();
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  class Row {
   public:
    Row& operator<<(double v) {
      cells_.push_back(format_double(v));
      return *this;
    }
    Row& operator<<(std::size_t v) {
      cells_.push_back(std::to_string(v));
      return *this;
    }
    Row& operator<<(int v) {
      cells_.push_back(std::to_string(v));
      return *this;
    }
    Row& operator<<(bool v) {
      cells_.push_back(v ? "1" : "0");
      return *this;
    }
    Row& operator<<(const std::string& s) {
      cells_.push_back(quote(s));
      return *this;
    }
    Row& operator<<(const char* s) { return *this << std::string(s); }

   private:
    friend class CsvTable;
    static std::string quote(const std::string& s) {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string out = "\"";
      for (char c : s) {
        if (c == '"') out += '"';
        out += c;
      }
      return out + '"';
    }
    std::vector<std::string> cells_;
  };

  Row& row() { return rows_.emplace_back(); }
  std::size_t size() const noexcept { return rows_.size(); }

  std::string str() const {
    std::string out;
    auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) {
      if (r.cells_.size() != header_.size()) throw Error("CSV row width does not match the header");
      line(r.cells_);
    }
    return out;
  }

  void write(const std::filesystem::path& file) const { write_text(file, str()); }

  static void write_text(const std::filesystem::path& file, const std::string& text) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw Error("cannot write " + file.string());
    os << text;
    if (!os) throw Error("write failed: " + file.string());
  }

 private:
  std::vector<std::string> header_;
  std::vector<Row> rows_;
};

/// summary.txt: one `<check>=<PASS|FAIL> stat=<float> tol=<float>` line per
/// verdict; free-form notes are prefixed with '#'.
class Summary {
 public:
  void verdict(const std::string& check, bool pass, double stat, double tol) {
    lines_.push_back(check + "=" + (pass ? "PASS" : "FAIL") + " stat=" + format_double(stat, 10) +
                     " tol=" + format_double(tol, 10));
    all_pass_ = all_pass_ && pass;
  }
  void note(const std::string& text) { lines_.push_back("# " + text); }

  bool all_pass() const noexcept { return all_pass_; }
  std::string str() const {
    std::string out;
    for (const auto& l : lines_) out += l + '\n';
    return out;
  }
  void write(const std::filesystem::path& file) const { CsvTable::write_text(file, str()); }

 private:
  std::vector<std::string> lines_;
  bool all_pass_ = true;
};

// ------------------------------------------------------------------------ SVG

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::string color = "#1f77b4";
  bool dashed = false;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  double px(double x) const { return L + (x - x0) / (x1 - x0) * (W - L - R); }
  double py(double y) const { return H - B - (y - y0) / (y1 - y0) * (H - T - B); }
};

inline void svg_axes(std::ostringstream& os, const Frame& f, const std::string& title, const std::string& xlabel) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Frame::W << "\" height=\"" << Frame::H
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << Frame::W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title)
     << "</text>\n";
  os << "<line x1=\"" << Frame::L << "\" y1=\"" << Frame::H - Frame::B << "\" x2=\"" << Frame::W - Frame::R
     << "\" y2=\"" << Frame::H - Frame::B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << Frame::L << "\" y1=\"" << Frame::T << "\" x2=\"" << Frame::L << "\" y2=\""
     << Frame::H - Frame::B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << Frame::L - 6 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">"
       << format_double(y, 4) << "</text>\n";
    const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
    os << "<text x=\"" << f.px(x) << "\" y=\"" << Frame::H - Frame::B + 16 << "\" text-anchor=\"middle\">"
       << format_double(x, 4) << "</text>\n";
  }
  os << "<text x=\"" << Frame::W / 2 << "\" y=\"" << Frame::H - 10 << "\" text-anchor=\"middle\">"
     << svg_escape(xlabel) << "</text>\n";
}

inline std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double w = std::max(std::abs(lo), 1.0) * 0.1;
    return {lo - w, hi + w};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace detail

inline std::string line_chart_svg(const std::string& title, const std::string& xlabel,
                                  const std::vector<Series>& series) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  std::tie(y0, y1) = detail::padded(y0, y1);
  if (!(x1 > x0)) x1 = x0 + 1.0;
  const detail::Frame f{x0, x1, y0, y1};
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(6);
  detail::svg_axes(os, f, title, xlabel);
  double legend_y = detail::Frame::T + 10;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
       << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i])) os << f.px(s.x[i]) << ',' << f.py(s.y[i]) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << detail::Frame::W - detail::Frame::R - 5 << "\" y=\"" << legend_y
       << "\" text-anchor=\"end\" fill=\"" << s.color << "\">" << detail::svg_escape(s.name) << "</text>\n";
    legend_y += 14;
  }
  os << "</svg>\n";
  return os.str();
}

/// Bars with +-err whiskers.
inline std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                                 const std::vector<double>& values, const std::vector<double>& errors) {
  double y0 = 0.0, y1 = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    y0 = std::min(y0, values[i] - errors[i]);
    y1 = std::max(y1, values[i] + errors[i]);
  }
  std::tie(y0, y1) = detail::padded(y0, y1);
  const double n = static_cast<double>(std::max<std::size_t>(values.size(), 1));
  const detail::Frame f{0.0, n, y0, y1};
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(6);
  detail::svg_axes(os, f, title, "cell");
  os << "<line x1=\"" << f.px(0) << "\" y1=\"" << f.py(0) << "\" x2=\"" << f.px(n) << "\" y2=\"" << f.py(0)
     << "\" stroke=\"gray\"/>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double a = f.px(i + 0.15), b = f.px(i + 0.85), top = f.py(std::max(values[i], 0.0)),
                 bot = f.py(std::min(values[i], 0.0));
    os << "<rect x=\"" << a << "\" y=\"" << top << "\" width=\"" << b - a << "\" height=\"" << bot - top
       << "\" fill=\"" << (values[i] > 0 ? "#d62728" : "#1f77b4") << "\"><title>" << detail::svg_escape(labels[i])
       << "</title></rect>\n";
    const double c = f.px(i + 0.5);
    os << "<line x1=\"" << c << "\" y1=\"" << f.py(values[i] - errors[i]) << "\" x2=\"" << c << "\" y2=\""
       << f.py(values[i] + errors[i]) << "\" stroke=\"black\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace glab
