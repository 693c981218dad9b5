#include "lsk/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lsk {

GradCheckReport check_gradients(const std::function<double()>& loss,
                                std::span<ParamView> params, double eps, i64 stride) {
  require(eps > 0.0, "check_gradients: eps must be positive");
  require(stride >= 1, "check_gradients: stride must be >= 1");
  GradCheckReport report;
  for (const ParamView& p : params) {
    for (i64 i = 0; i < p.count; i += stride) {
      double& v = p.data[static_cast<std::size_t>(i)];
      const double saved = v;
      v = saved + eps;
      const double up = loss();
      v = saved - eps;
      const double down = loss();
      v = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double an = p.analytic[static_cast<std::size_t>(i)];
      const double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      ++report.coords_checked;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = p.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace lsk
