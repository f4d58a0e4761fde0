#include "dmamba/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace dmamba {

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    char line[160];
    for (const auto& e : entries) {
        std::snprintf(line, sizeof(line), "%-44s max_rel_err=%.3e  %s\n", e.name.c_str(),
                      e.max_rel_err, e.pass ? "pass" : "FAIL");
        os << line;
    }
    std::snprintf(line, sizeof(line), "%zu parameters checked, step=%.1e, tolerance=%.1e: %s\n",
                  entries.size(), step, tolerance, all_pass() ? "all pass" : "FAILURES PRESENT");
    os << line;
    return os.str();
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& scalar_fn,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double step, double tolerance) {
    if (step <= 0.0) throw ValueError("finite_diff_check: step must be positive");
    GradCheckReport report;
    report.step = step;
    report.tolerance = tolerance;

    for (auto& [name, t] : params) t.set_requires_grad(true);
    for (auto& [name, t] : params) t.zero_grad();

    // Reverse-mode gradients of one recorded pass.
    std::vector<std::vector<double>> ad_grads;
    {
        Tape tape;
        Tensor loss = scalar_fn();
        if (loss.numel() != 1) throw ShapeError("finite_diff_check: function must return a scalar");
        tape.backward(loss);
        for (const auto& [name, t] : params) ad_grads.push_back(t.grad());
    }

    // Central differences, evaluated without recording.
    NoGrad off;
    for (size_t p = 0; p < params.size(); ++p) {
        const auto& [name, t] = params[p];
        GradCheckEntry entry;
        entry.name = name;
        auto& values = t.data();
        for (size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double f_plus = scalar_fn().item();
            values[i] = saved - step;
            const double f_minus = scalar_fn().item();
            values[i] = saved;
            const double g_fd = (f_plus - f_minus) / (2.0 * step);
            const double g_ad = ad_grads[p][i];
            const double rel = std::fabs(g_ad - g_fd) / (std::fabs(g_ad) + std::fabs(g_fd) + 1e-12);
            if (rel > entry.max_rel_err) entry.max_rel_err = rel;
        }
        entry.pass = entry.max_rel_err <= tolerance;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace dmamba
