#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dmamba/tensor.hpp"

namespace dmamba {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double step = 0.0;
    double tolerance = 0.0;

    bool all_pass() const {
        for (const auto& e : entries)
            if (!e.pass) return false;
        return true;
    }
    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = e.max_rel_err > w ? e.max_rel_err : w;
        return w;
    }
    std::string to_string() const;
};

// Compares reverse-mode gradients of a deterministic scalar function against
// central finite differences, parameter by parameter. The function must read
// the listed tensors by handle so that in-place perturbations are visible.
// Relative error per element: |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12).
GradCheckReport finite_diff_check(const std::function<Tensor()>& scalar_fn,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double step = 1e-5, double tolerance = 1e-4);

// Runs finite_diff_check over every differentiable layer primitive, the
// selective scan, the 2D scan, one full dual-branch block, and the default
// model on a small input. Used by both the CLI and the acceptance suite.
// corrupt_one deliberately biases one gradient before comparison (negative
// control for the reporting path).
GradCheckReport run_gradient_suite(double tolerance = 1e-4, bool corrupt_one = false);

}  // namespace dmamba
