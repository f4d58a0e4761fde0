#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "dmamba/rng.hpp"
#include "dmamba/tensor.hpp"

namespace testutil {

inline bool allclose(const std::vector<double>& a, const std::vector<double>& b,
                     double atol = 1e-12, double rtol = 0.0) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        const double tol = atol + rtol * std::fabs(b[i]);
        if (std::fabs(a[i] - b[i]) > tol) return false;
    }
    return true;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline dmamba::Tensor random_tensor(dmamba::Shape shape, dmamba::Rng& rng, double lo = -1.0,
                                    double hi = 1.0, bool requires_grad = false) {
    std::vector<double> v(static_cast<size_t>(dmamba::shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return dmamba::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Scratch directory unique to the calling test binary; wiped on creation.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("dmamba_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
