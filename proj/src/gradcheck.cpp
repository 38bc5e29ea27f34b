#include <algorithm>
#include <cmath>
#include <sstream>

#include "metapi/param.hpp"

namespace metapi {

std::string GradCheckReport::describe() const {
  std::ostringstream os;
  os.precision(10);
  os << (passed ? "pass" : "FAIL") << " over " << coordinates << " coordinates; worst "
     << worst_param << "[" << worst_index << "] analytic=" << analytic << " numeric=" << numeric
     << " err=" << worst_error;
  return os.str();
}

GradCheckReport grad_check(ParameterSet<double>& params, const std::function<double(bool)>& f,
                           double eps, double tol) {
  params.zero_grad();
  f(true);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.emplace_back(p->grad.storage().begin(), p->grad.storage().end());

  GradCheckReport report;
  report.worst_error = -1;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k].value.storage();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f(false);
      values[i] = saved - eps;
      const double down = f(false);
      values[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++report.coordinates;
      if (err > report.worst_error) {
        report.worst_error = err;
        report.worst_param = params[k].name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.worst_error <= tol;
  params.zero_grad();
  return report;
}

}  // namespace metapi
