#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hat/precision.hpp"
#include "hat/rng.hpp"
#include "hat/tensor.hpp"

namespace hat::test {

// Loose enough for float accumulation, tight for double.
inline constexpr double kTol = kScalarBits == 64 ? 1e-12 : 1e-5;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1, bool requires_grad = false) {
    std::vector<Scalar> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<Scalar>(rng.uniform(lo, hi));
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const Scalar> a, std::span<const double> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
    return m;
}

inline double max_abs(std::span<const double> b) {
    double m = 0;
    for (double x : b) m = std::max(m, std::abs(x));
    return m;
}

// Fresh directory under the system temp dir, removed first if present.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("hat_unit_" + std::to_string(kScalarBits)) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace hat::test
