#include "disagree/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace disagree {

double evaluate(const ScalarFn& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.constant(p));
  const Var out = f(tape, leaves);
  if (out.rows() != 1 || out.cols() != 1) {
    throw ShapeError("check_gradient: function output is " + shape_string(out.value()));
  }
  return out.value()(0, 0);
}

GradCheckReport check_gradient(const ScalarFn& f, std::span<const Tensor> params,
                               double tolerance, const GradCheckOptions& options) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& p : params) leaves.push_back(tape.parameter(p));
  tape.backward(f(tape, leaves));

  GradCheckReport report;
  std::vector<Tensor> probe(params.begin(), params.end());
  for (std::size_t t = 0; t < probe.size(); ++t) {
    const Tensor analytic = tape.grad(leaves[t]);
    for (Index e = 0; e < probe[t].size(); ++e) {
      double& slot = probe[t].data()[e];
      const double original = slot;
      slot = original + options.step;
      const double up = evaluate(f, probe);
      slot = original - options.step;
      const double down = evaluate(f, probe);
      slot = original;

      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic.data()[e];
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      ++report.checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error || !std::isfinite(rel_err)) {
        report.max_rel_error = rel_err;
        std::ostringstream os;
        os << "tensor " << t << ", element " << e << ": tape=" << a << ", fd=" << numeric;
        report.worst = os.str();
      }
    }
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error < tolerance;
  return report;
}

}  // namespace disagree
