#include "dhbe/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace dhbe {

namespace {
constexpr double kMarginL = 64, kMarginR = 16, kMarginT = 36, kMarginB = 48;

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace

SvgPlot::SvgPlot(int width, int height, std::string title, std::string x_label,
                 std::string y_label)
    : width_(width),
      height_(height),
      title_(std::move(title)),
      x_label_(std::move(x_label)),
      y_label_(std::move(y_label)) {}

void SvgPlot::set_x_range(double lo, double hi) {
  x_lo_ = lo;
  x_hi_ = hi;
  x_set_ = true;
}
void SvgPlot::set_y_range(double lo, double hi) {
  y_lo_ = lo;
  y_hi_ = hi;
  y_set_ = true;
}

double SvgPlot::px(double x) const {
  const double w = width_ - kMarginL - kMarginR;
  return kMarginL + (x - x_lo_) / (x_hi_ - x_lo_ + 1e-300) * w;
}
double SvgPlot::py(double y) const {
  const double h = height_ - kMarginT - kMarginB;
  return kMarginT + (1.0 - (y - y_lo_) / (y_hi_ - y_lo_ + 1e-300)) * h;
}

void SvgPlot::ensure_ranges() {
  if ((x_set_ && y_set_) || auto_pts_.empty()) return;
  double xl = auto_pts_[0].first, xh = xl, yl = auto_pts_[0].second, yh = yl;
  for (const auto& [x, y] : auto_pts_) {
    xl = std::min(xl, x);
    xh = std::max(xh, x);
    yl = std::min(yl, y);
    yh = std::max(yh, y);
  }
  auto pad = [](double lo, double hi) {
    const double p = (hi - lo) * 0.08 + 1e-9;
    return std::pair<double, double>(lo - p, hi + p);
  };
  if (!x_set_) std::tie(x_lo_, x_hi_) = pad(xl, xh);
  if (!y_set_) std::tie(y_lo_, y_hi_) = pad(yl, yh);
}

void SvgPlot::add_line(const std::vector<std::pair<double, double>>& pts,
                       const std::string& color, const std::string& legend) {
  for (const auto& p : pts) auto_pts_.push_back(p);
  std::string path = "<polyline fill=\"none\" stroke=\"" + color +
                     "\" stroke-width=\"1.8\" points=\"@PTS:";
  for (const auto& [x, y] : pts) path += fmt(x) + ";" + fmt(y) + ";";
  path += "\"/>";
  body_.push_back(path);
  if (!legend.empty()) legend_.push_back({color, legend});
}

void SvgPlot::add_scatter(const std::vector<std::pair<double, double>>& pts,
                          const std::string& color, const std::string& legend) {
  for (const auto& p : pts) auto_pts_.push_back(p);
  std::string s = "@SCATTER:" + color + ":";
  for (const auto& [x, y] : pts) s += fmt(x) + ";" + fmt(y) + ";";
  body_.push_back(s);
  if (!legend.empty()) legend_.push_back({color, legend});
}

void SvgPlot::add_box(int slot, const FiveNumberSummary& s, const std::string& color,
                      const std::string& label) {
  n_slots_ = std::max(n_slots_, slot + 1);
  if (static_cast<int>(slot_labels_.size()) <= slot)
    slot_labels_.resize(static_cast<size_t>(slot) + 1);
  slot_labels_[static_cast<size_t>(slot)] = label;
  body_.push_back("@BOX:" + color + ":" + std::to_string(slot) + ":" + fmt(s.min) + ";" +
                  fmt(s.q1) + ";" + fmt(s.median) + ";" + fmt(s.q3) + ";" + fmt(s.max));
  auto_pts_.push_back({static_cast<double>(slot), s.min});
  auto_pts_.push_back({static_cast<double>(slot), s.max});
}

void SvgPlot::save(const std::string& path) const {
  SvgPlot& self = const_cast<SvgPlot&>(*this);
  self.ensure_ranges();
  if (n_slots_ > 0 && !x_set_) {
    self.x_lo_ = -0.7;
    self.x_hi_ = n_slots_ - 0.3;
  }

  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write plot: " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\""
     << height_ << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width_ / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
     << title_ << "</text>\n";
  // axes
  const double x0 = kMarginL, x1 = width_ - kMarginR;
  const double y0 = height_ - kMarginB, y1 = kMarginT;
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << height_ - 10
     << "\" text-anchor=\"middle\">" << x_label_ << "</text>\n";
  os << "<text x=\"14\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << (y0 + y1) / 2 << ")\">" << y_label_ << "</text>\n";
  // ticks
  for (int i = 0; i <= 4; ++i) {
    const double ty = y_lo_ + (y_hi_ - y_lo_) * i / 4.0;
    os << "<line x1=\"" << x0 - 4 << "\" y1=\"" << py(ty) << "\" x2=\"" << x0 << "\" y2=\""
       << py(ty) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << x0 - 8 << "\" y=\"" << py(ty) + 4 << "\" text-anchor=\"end\">"
       << fmt(ty) << "</text>\n";
  }
  if (n_slots_ == 0) {
    for (int i = 0; i <= 4; ++i) {
      const double tx = x_lo_ + (x_hi_ - x_lo_) * i / 4.0;
      os << "<text x=\"" << px(tx) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
         << fmt(tx) << "</text>\n";
    }
  } else {
    for (int s = 0; s < n_slots_; ++s)
      os << "<text x=\"" << px(s) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
         << slot_labels_[static_cast<size_t>(s)] << "</text>\n";
  }

  for (const auto& item : body_) {
    if (item.rfind("@SCATTER:", 0) == 0) {
      const size_t c1 = item.find(':', 9);
      const std::string color = item.substr(9, c1 - 9);
      std::string rest = item.substr(c1 + 1);
      size_t pos = 0;
      while (pos < rest.size()) {
        const size_t s1 = rest.find(';', pos);
        const size_t s2 = rest.find(';', s1 + 1);
        if (s1 == std::string::npos || s2 == std::string::npos) break;
        const double x = std::stod(rest.substr(pos, s1 - pos));
        const double y = std::stod(rest.substr(s1 + 1, s2 - s1 - 1));
        os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color
           << "\" fill-opacity=\"0.75\"/>\n";
        pos = s2 + 1;
      }
    } else if (item.rfind("@BOX:", 0) == 0) {
      const size_t c1 = item.find(':', 5);
      const std::string color = item.substr(5, c1 - 5);
      const size_t c2 = item.find(':', c1 + 1);
      const int slot = std::stoi(item.substr(c1 + 1, c2 - c1 - 1));
      std::string rest = item.substr(c2 + 1);
      double v[5];
      size_t pos = 0;
      for (double& vi : v) {
        const size_t s1 = rest.find(';', pos);
        vi = std::stod(rest.substr(pos, s1 - pos));
        pos = s1 + 1;
      }
      const double cx = px(slot), bw = (px(1) - px(0)) * 0.3 + 12;
      os << "<line x1=\"" << cx << "\" y1=\"" << py(v[0]) << "\" x2=\"" << cx << "\" y2=\""
         << py(v[4]) << "\" stroke=\"" << color << "\"/>\n";
      os << "<rect x=\"" << cx - bw / 2 << "\" y=\"" << py(v[3]) << "\" width=\"" << bw
         << "\" height=\"" << py(v[1]) - py(v[3]) << "\" fill=\"" << color
         << "\" fill-opacity=\"0.35\" stroke=\"" << color << "\"/>\n";
      os << "<line x1=\"" << cx - bw / 2 << "\" y1=\"" << py(v[2]) << "\" x2=\"" << cx + bw / 2
         << "\" y2=\"" << py(v[2]) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    } else {
      // polyline with deferred pixel mapping
      const size_t tag = item.find("@PTS:");
      std::string out = item.substr(0, tag);
      std::string rest = item.substr(tag + 5);
      const size_t endq = rest.rfind("\"/>");
      std::string coords = rest.substr(0, endq);
      size_t pos = 0;
      std::string pts;
      while (pos < coords.size()) {
        const size_t s1 = coords.find(';', pos);
        const size_t s2 = coords.find(';', s1 + 1);
        if (s1 == std::string::npos || s2 == std::string::npos) break;
        const double x = std::stod(coords.substr(pos, s1 - pos));
        const double y = std::stod(coords.substr(s1 + 1, s2 - s1 - 1));
        pts += fmt(px(x)) + "," + fmt(py(y)) + " ";
        pos = s2 + 1;
      }
      os << out << pts << "\"/>\n";
    }
  }
  double ly = kMarginT + 6;
  for (const auto& [color, text] : legend_) {
    os << "<rect x=\"" << width_ - kMarginR - 130 << "\" y=\"" << ly - 8
       << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"" << width_ - kMarginR - 116 << "\" y=\"" << ly << "\">" << text
       << "</text>\n";
    ly += 16;
  }
  os << "</svg>\n";
}

}  // namespace dhbe
