#pragma once

#include <string>
#include <vector>

#include "dhbe/metrics.hpp"

namespace dhbe {

// Minimal SVG chart writer: enough for tradeoff scatters, sweep line plots
// and activation-difference boxplots.
class SvgPlot {
 public:
  SvgPlot(int width, int height, std::string title, std::string x_label, std::string y_label);

  void set_x_range(double lo, double hi);
  void set_y_range(double lo, double hi);

  void add_line(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                const std::string& legend = "");
  void add_scatter(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                   const std::string& legend = "");
  // Box at a categorical x slot (0-based); whiskers at min/max.
  void add_box(int slot, const FiveNumberSummary& s, const std::string& color,
               const std::string& label);

  void save(const std::string& path) const;

 private:
  double px(double x) const;
  double py(double y) const;
  void ensure_ranges();

  int width_, height_;
  std::string title_, x_label_, y_label_;
  double x_lo_ = 0, x_hi_ = 1, y_lo_ = 0, y_hi_ = 1;
  bool x_set_ = false, y_set_ = false;
  int n_slots_ = 0;
  std::vector<std::string> body_;
  std::vector<std::pair<std::string, std::string>> legend_;  // color, text
  std::vector<std::string> slot_labels_;
  std::vector<std::pair<double, double>> auto_pts_;
};

}  // namespace dhbe
