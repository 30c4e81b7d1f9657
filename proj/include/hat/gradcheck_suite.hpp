#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hat/central_difference.hpp"
#include "json.hpp"

namespace hat {

struct GradCheckFamilyReport {
    std::string family;
    double max_relative_error = 0;
    double worst_element_error = 0;
    std::string worst_input;
    std::size_t checked = 0;
    // Probes whose step had to shrink to keep both ends on one relu piece,
    // and probes where that never happened.
    std::size_t reduced_steps = 0;
    std::size_t unresolved_kinks = 0;
    // Precision the central differences were evaluated in.
    int oracle_bits = 0;
    // 32-bit only: error against central differences evaluated in 32-bit.
    // Reported, not gated.
    double same_precision_error = -1;
    double threshold = 0;
    bool passed = false;
};

struct GradCheckSuiteReport {
    int scalar_bits = 32;
    std::vector<GradCheckFamilyReport> families;
    std::string worst_family;
    double worst_error = 0;
    bool passed = false;

    nlohmann::json to_json() const;
};

struct GradCheckSuiteOptions {
    std::uint64_t seed = 0;
    bool include_model = true;
    // Elements probed per parameter tensor of the end-to-end model.
    std::size_t model_samples_per_tensor = 16;
    // 32-bit suite: evaluate central differences with the 64-bit build on
    // the same input values. Off means 32-bit central differences.
    bool wide_oracle = true;
};

// Thresholds on the per-tensor relative error: 1e-3 for every family in
// 32-bit; in 64-bit, 1e-6 for families that are at most quadratic in each
// input and 1e-4 for the rest.
GradCheckSuiteReport run_gradcheck_suite_32(const GradCheckSuiteOptions& options = {});
GradCheckSuiteReport run_gradcheck_suite_64(const GradCheckSuiteOptions& options = {});

struct OracleRequest {
    GradCheckSuiteOptions options;
    std::size_t family_index = 0;
    // Values of every input of the family, in input order.
    std::vector<std::vector<double>> values;
    std::vector<std::vector<std::size_t>> probed;
};

// Rebuilds family `family_index` of the suite in the 64-bit build, loads
// `values` into its inputs and returns central differences at `probed`.
std::vector<std::vector<CentralDifference>> central_differences_64(const OracleRequest& request);

}  // namespace hat
