#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hat/central_difference.hpp"
#include "hat/nn.hpp"

HAT_NS_BEGIN

// Central differences for the probed elements of each input, in input order.
using GradientOracle = std::function<std::vector<std::vector<CentralDifference>>(
    const std::vector<std::vector<std::size_t>>& probed)>;

struct GradCheckOptions {
    // Central-difference step for element x is step * max(1, |x|).
    double step = 1e-3;
    // Floor on the denominator of the relative error.
    double floor = 1e-8;
    // Elements probed per input tensor; 0 probes every element. Sampled
    // elements are drawn without replacement from a generator seeded by `seed`.
    std::size_t max_elements_per_input = 0;
    std::uint64_t seed = 0;
    // When the +h and -h evaluations take different relu pieces the step is
    // halved, up to max_step_halvings times, until both ends agree.
    bool avoid_kinks = true;
    int max_step_halvings = 24;
    // Replaces the local central differences when set.
    GradientOracle oracle;
};

// Central difference of f with respect to element `index` of `t`. The
// element is restored before returning. Throws OracleFailure on a
// non-finite evaluation.
CentralDifference central_difference(const std::function<Tensor()>& f, Tensor& t, std::size_t index,
                                     const GradCheckOptions& options);

struct GradCheckEntry {
    std::string name;
    std::size_t checked = 0;
    // ||analytic - numeric|| / max(||analytic||, ||numeric||, floor) over the
    // probed elements of this tensor.
    double relative_error = 0;
    // Worst single-element |a - n| / max(|a|, |n|, floor).
    double worst_element_error = 0;
    std::size_t reduced_steps = 0;
    std::size_t unresolved_kinks = 0;
};

struct GradCheckResult {
    double max_relative_error = 0;
    std::string worst_input;
    std::vector<GradCheckEntry> entries;
};

// Compares reverse-mode gradients of a scalar function against central
// differences. `f` must build its result from `inputs`; it is evaluated once
// on a tape and at least twice per probed element without one.
GradCheckResult grad_check(const std::function<Tensor()>& f, const NamedParameters& inputs,
                           const GradCheckOptions& options = {});

HAT_NS_END
