#pragma once

#include <array>
#include <string>
#include <vector>

#include "dhbe/errors.hpp"

namespace dhbe {

struct TradeoffPoint {
  double lr = 0.0;
  double acc = 0.0;
  double asr = 0.0;
};

// Four-parameter logistic fit of asr as a function of acc:
//   asr = lo + (hi - lo) * sigmoid(slope * (acc - mid))
struct TradeoffCurve {
  std::vector<TradeoffPoint> points;
  std::array<double, 4> logistic_params{0, 0, 0, 0};  // lo, hi, slope, mid
  double residual_sse = 0.0;
  std::string method_name;

  double eval(double acc) const;
};

TradeoffCurve fit_tradeoff_curve(std::vector<TradeoffPoint> points,
                                 std::string method_name = "");

void save_tradeoff_points_csv(const std::vector<std::pair<std::string, TradeoffPoint>>& rows,
                              const std::string& path);
std::vector<std::pair<std::string, TradeoffPoint>> load_tradeoff_points_csv(
    const std::string& path);

}  // namespace dhbe
