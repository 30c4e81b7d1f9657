#include "hat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hat/errors.hpp"

HAT_NS_BEGIN

namespace {

struct Evaluation {
    double value;
    std::uint64_t signature;
};

Evaluation evaluate(const std::function<Tensor()>& f) {
    KinkMonitor monitor;
    const Tensor y = f();
    if (y.size() != 1) throw ArgumentError("grad_check: function must return a scalar");
    return {static_cast<double>(y.item()), monitor.signature()};
}

std::vector<std::size_t> probe_indices(std::size_t n, std::size_t limit, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (limit && n > limit) {
        for (std::size_t i = 0; i < limit; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
        idx.resize(limit);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

}  // namespace

CentralDifference central_difference(const std::function<Tensor()>& f, Tensor& t, std::size_t index,
                                     const GradCheckOptions& options) {
    if (!(options.step > 0)) throw ArgumentError("grad_check: step must be positive");
    auto values = t.values_for_update();
    const Scalar original = values[index];
    double h = options.step * std::max(1.0, std::abs(double(original)));
    CentralDifference out;
    for (int attempt = 0;; ++attempt) {
        values[index] = static_cast<Scalar>(original + h);
        const Scalar up = values[index];
        const Evaluation plus = evaluate(f);
        values[index] = static_cast<Scalar>(original - h);
        const Scalar down = values[index];
        const Evaluation minus = evaluate(f);
        values[index] = original;
        if (!std::isfinite(plus.value) || !std::isfinite(minus.value)) {
            throw OracleFailure("grad_check: non-finite objective when perturbing element " + std::to_string(index));
        }
        out.value = (plus.value - minus.value) / (double(up) - double(down));
        out.step = h;
        out.halvings = attempt;
        out.straddles_kink = plus.signature != minus.signature;
        if (!options.avoid_kinks || !out.straddles_kink || attempt >= options.max_step_halvings) break;
        const double next = h / 2;
        if (static_cast<Scalar>(original + next) == original) break;
        h = next;
    }
    return out;
}

GradCheckResult grad_check(const std::function<Tensor()>& f, const NamedParameters& inputs,
                           const GradCheckOptions& options) {
    for (const auto& [name, t] : inputs) {
        if (!t.requires_grad()) throw ArgumentError("grad_check: input '" + name + "' does not require grad");
        Tensor(t).zero_grad();
    }
    {
        Tape tape;
        Tensor y;
        {
            TapeScope scope(tape);
            y = f();
        }
        backward(y, tape);
    }

    Rng rng(options.seed);
    std::vector<std::vector<std::size_t>> probed;
    for (const auto& [name, t] : inputs) probed.push_back(probe_indices(t.size(), options.max_elements_per_input, rng));

    std::vector<std::vector<CentralDifference>> external;
    if (options.oracle) {
        external = options.oracle(probed);
        if (external.size() != probed.size()) throw OracleFailure("grad_check: oracle returned wrong input count");
    }

    GradCheckResult result;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto& name = inputs[k].first;
        Tensor t = inputs[k].second;
        const std::vector<Scalar> analytic = t.grad();
        const auto& idx = probed[k];
        if (options.oracle && external[k].size() != idx.size()) {
            throw OracleFailure("grad_check: oracle returned wrong probe count for " + name);
        }

        GradCheckEntry entry;
        entry.name = name;
        entry.checked = idx.size();
        double diff2 = 0, a2 = 0, n2 = 0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const CentralDifference cd =
                options.oracle ? external[k][j] : central_difference(f, t, idx[j], options);
            const double numeric = cd.value;
            entry.reduced_steps += cd.halvings > 0;
            entry.unresolved_kinks += cd.straddles_kink;
            const double a = analytic[idx[j]];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
            entry.worst_element_error = std::max(entry.worst_element_error, std::abs(a - numeric) / denom);
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), options.floor});
        entry.relative_error = std::sqrt(diff2) / denom;
        if (entry.relative_error >= result.max_relative_error) {
            result.max_relative_error = entry.relative_error;
            result.worst_input = name;
        }
        result.entries.push_back(std::move(entry));
    }
    return result;
}

HAT_NS_END
