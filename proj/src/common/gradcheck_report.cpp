#include "hat/gradcheck_suite.hpp"

namespace hat {

nlohmann::json GradCheckSuiteReport::to_json() const {
    nlohmann::json j;
    j["scalar_bits"] = scalar_bits;
    j["passed"] = passed;
    j["worst_family"] = worst_family;
    j["worst_error"] = worst_error;
    auto& arr = j["families"] = nlohmann::json::array();
    for (const auto& f : families) {
        arr.push_back({{"family", f.family},
                       {"max_relative_error", f.max_relative_error},
                       {"worst_element_error", f.worst_element_error},
                       {"worst_input", f.worst_input},
                       {"checked", f.checked},
                       {"reduced_steps", f.reduced_steps},
                       {"unresolved_kinks", f.unresolved_kinks},
                       {"oracle_bits", f.oracle_bits},
                       {"same_precision_error", f.same_precision_error},
                       {"threshold", f.threshold},
                       {"passed", f.passed}});
    }
    return j;
}

}  // namespace hat
