#include "dhbe/tradeoff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dhbe {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double sse(const std::vector<TradeoffPoint>& pts, const std::array<double, 4>& p) {
  double s = 0.0;
  for (const auto& pt : pts) {
    const double f = p[0] + (p[1] - p[0]) * sigmoid(p[2] * (pt.acc - p[3]));
    s += (f - pt.asr) * (f - pt.asr);
  }
  return s;
}

// Levenberg-Marquardt on the four logistic parameters.
std::array<double, 4> lm_fit(const std::vector<TradeoffPoint>& pts, std::array<double, 4> p) {
  const size_t n = pts.size();
  double mu = 1e-3;
  double cur = sse(pts, p);
  for (int iter = 0; iter < 400; ++iter) {
    // residuals and Jacobian
    std::vector<std::array<double, 4>> jac(n);
    std::vector<double> res(n);
    for (size_t i = 0; i < n; ++i) {
      const double u = p[2] * (pts[i].acc - p[3]);
      const double s = sigmoid(u);
      const double ds = s * (1.0 - s);
      res[i] = p[0] + (p[1] - p[0]) * s - pts[i].asr;
      jac[i] = {1.0 - s, s, (p[1] - p[0]) * ds * (pts[i].acc - p[3]),
                -(p[1] - p[0]) * ds * p[2]};
    }
    double jtj[4][4] = {};
    double jtr[4] = {};
    for (size_t i = 0; i < n; ++i)
      for (int a = 0; a < 4; ++a) {
        jtr[a] += jac[i][a] * res[i];
        for (int b = 0; b < 4; ++b) jtj[a][b] += jac[i][a] * jac[i][b];
      }
    // solve (JtJ + mu I) d = -Jtr via Gaussian elimination
    double m[4][5];
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) m[a][b] = jtj[a][b] + (a == b ? mu * (1.0 + jtj[a][a]) : 0.0);
      m[a][4] = -jtr[a];
    }
    bool singular = false;
    for (int col = 0; col < 4 && !singular; ++col) {
      int piv = col;
      for (int r = col + 1; r < 4; ++r)
        if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
      if (std::fabs(m[piv][col]) < 1e-14) {
        singular = true;
        break;
      }
      std::swap(m[piv], m[col]);
      for (int r = 0; r < 4; ++r) {
        if (r == col) continue;
        const double f = m[r][col] / m[col][col];
        for (int cc = col; cc < 5; ++cc) m[r][cc] -= f * m[col][cc];
      }
    }
    if (singular) {
      mu *= 10.0;
      if (mu > 1e12) break;
      continue;
    }
    std::array<double, 4> cand = p;
    for (int a = 0; a < 4; ++a) cand[a] += m[a][4] / m[a][a];
    const double next = sse(pts, cand);
    if (next < cur) {
      const bool converged = cur - next < 1e-15 * (1.0 + cur);
      p = cand;
      cur = next;
      mu = std::max(mu * 0.3, 1e-12);
      if (converged) break;
    } else {
      mu *= 10.0;
      if (mu > 1e12) break;
    }
  }
  return p;
}

}  // namespace

double TradeoffCurve::eval(double acc) const {
  const auto& p = logistic_params;
  return p[0] + (p[1] - p[0]) * sigmoid(p[2] * (acc - p[3]));
}

TradeoffCurve fit_tradeoff_curve(std::vector<TradeoffPoint> points, std::string method_name) {
  if (points.size() < 4) throw ContractError("tradeoff fit needs at least 4 points");
  bool degenerate = true;
  for (const auto& p : points)
    degenerate &= p.acc == points[0].acc && p.asr == points[0].asr;
  if (degenerate) throw MeasurementError("degenerate tradeoff points (all identical)");

  double lo = points[0].asr, hi = points[0].asr;
  double amin = points[0].acc, amax = points[0].acc;
  for (const auto& p : points) {
    lo = std::min(lo, p.asr);
    hi = std::max(hi, p.asr);
    amin = std::min(amin, p.acc);
    amax = std::max(amax, p.acc);
  }
  const double mid = 0.5 * (amin + amax);
  const double span = std::max(amax - amin, 1e-6);

  TradeoffCurve best;
  best.method_name = std::move(method_name);
  best.residual_sse = std::numeric_limits<double>::infinity();
  // Multi-start over slope signs and magnitudes; flat data fits with
  // slope ~ 0 where both asymptotes meet the plateau.
  for (double slope : {4.0 / span, -4.0 / span, 1.0 / span, -1.0 / span, 0.0}) {
    for (auto init : {std::array<double, 4>{lo, hi, slope, mid},
                      std::array<double, 4>{hi, lo, slope, mid}}) {
      const auto p = lm_fit(points, init);
      const double s = sse(points, p);
      if (s < best.residual_sse) {
        best.residual_sse = s;
        best.logistic_params = p;
      }
    }
  }
  best.points = std::move(points);
  return best;
}

void save_tradeoff_points_csv(const std::vector<std::pair<std::string, TradeoffPoint>>& rows,
                              const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write tradeoff csv: " + path);
  os << "method,lr,acc,asr\n";
  char buf[160];
  for (const auto& [method, p] : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n", method.c_str(), p.lr, p.acc, p.asr);
    os << buf;
  }
}

std::vector<std::pair<std::string, TradeoffPoint>> load_tradeoff_points_csv(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open tradeoff csv: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IngestionError("empty tradeoff csv: " + path);
  std::vector<std::pair<std::string, TradeoffPoint>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string method, lr, acc, asr;
    if (!std::getline(ss, method, ',') || !std::getline(ss, lr, ',') ||
        !std::getline(ss, acc, ',') || !std::getline(ss, asr, ','))
      throw IngestionError("bad tradeoff csv row: " + line);
    rows.push_back({method, {std::stod(lr), std::stod(acc), std::stod(asr)}});
  }
  return rows;
}

}  // namespace dhbe
