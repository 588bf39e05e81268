#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "tkfnet/tensor.hpp"

namespace tkfnet {

/// Precision used to evaluate the finite differences. `wide` re-runs the
/// computation on 64-bit copies of the inputs so that rounding of 32-bit
/// outputs does not swamp the O(eps^2) central-difference error; `native`
/// perturbs the 32-bit inputs directly.
enum class NumericPrecision { wide, native };

struct GradCoordinate {
    std::size_t input = 0;
    std::size_t index = 0;
};

struct GradCheckOptions {
    double eps = 1e-3;
    // Explicit coordinates to check; when empty, every element is checked
    // unless max_coordinates > 0, in which case that many are sampled.
    std::vector<GradCoordinate> coordinates;
    std::size_t max_coordinates = 0;
    std::uint64_t seed = 0;
    NumericPrecision precision = NumericPrecision::wide;
    // Precision of the tape that produces the analytic gradients.
    NumericPrecision analytic = NumericPrecision::native;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool finite = true;
    GradCoordinate worst;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    std::string message;

    bool passed(double tolerance) const { return finite && max_rel_error <= tolerance; }
};

/// max(|a - n| / max(|a|, |n|, 1e-8)) building block.
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

namespace detail {

template <typename T, typename F>
double evaluate_scalar(F& f, std::span<const BasicTensor<T>> inputs) {
    BasicTape<T> tape(false);
    const BasicTensor<T> out = f(tape, inputs);
    double acc = 0.0;
    for (const T v : out.data()) acc += static_cast<double>(v);
    return acc;
}

inline std::string describe(const GradCoordinate& c) {
    return "input " + std::to_string(c.input) + " element " + std::to_string(c.index);
}

}  // namespace detail

/// Compares tape gradients of sum(f(inputs)) against central differences
/// (f(x + eps) - f(x - eps)) / (2 eps) elementwise.
///
/// f is called as f(tape, span<const BasicTensor<T>>) with T = float for the
/// analytic pass and, in wide mode, T = double for the numeric pass, so it is
/// normally a generic lambda. Input requires_grad flags and gradient buffers
/// are restored on return.
template <typename F>
GradCheckReport grad_check(F&& f, std::vector<Tensor> inputs, const GradCheckOptions& options = {}) {
    if (!(options.eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

    std::vector<bool> had_flag(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        had_flag[i] = inputs[i].requires_grad();
        inputs[i].set_requires_grad(true);
        inputs[i].clear_grad();
    }
    std::vector<std::vector<double>> analytic(inputs.size());
    const auto run_analytic = [&](auto& tensors) {
        using T = typename std::decay_t<decltype(tensors)>::value_type::value_type;
        BasicTape<T> tape;
        BasicTensor<T> out = f(tape, std::span<const BasicTensor<T>>(tensors));
        tape.backward(out);
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            if (tensors[i].has_grad()) {
                analytic[i].assign(tensors[i].grad().begin(), tensors[i].grad().end());
            } else {
                analytic[i].assign(tensors[i].size(), 0.0);
            }
        }
    };
    if (options.analytic == NumericPrecision::wide) {
        std::vector<BasicTensor<double>> wide_inputs;
        for (const Tensor& t : inputs) {
            wide_inputs.push_back(tensor_cast<double>(t));
            wide_inputs.back().set_requires_grad(true);
        }
        run_analytic(wide_inputs);
    } else {
        run_analytic(inputs);
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        inputs[i].clear_grad();
        inputs[i].set_requires_grad(had_flag[i]);
    }

    std::vector<GradCoordinate> coords = options.coordinates;
    if (coords.empty()) {
        for (std::size_t i = 0; i < inputs.size(); ++i)
            for (std::size_t k = 0; k < inputs[i].size(); ++k) coords.push_back({i, k});
        if (options.max_coordinates > 0 && options.max_coordinates < coords.size()) {
            std::mt19937_64 rng(options.seed);
            std::vector<GradCoordinate> picked;
            std::sample(coords.begin(), coords.end(), std::back_inserter(picked), options.max_coordinates, rng);
            coords = std::move(picked);
        }
    }

    std::vector<BasicTensor<double>> wide;
    std::vector<Tensor> native;
    if (options.precision == NumericPrecision::wide) {
        for (const Tensor& t : inputs) wide.push_back(tensor_cast<double>(t));
    } else {
        for (const Tensor& t : inputs) {
            Tensor c = t.clone();
            c.set_requires_grad(false);
            native.push_back(c);
        }
    }

    GradCheckReport report;
    for (const GradCoordinate& c : coords) {
        if (c.input >= inputs.size() || c.index >= inputs[c.input].size()) {
            throw std::out_of_range("grad_check: coordinate " + detail::describe(c) + " out of range");
        }
        double plus = 0.0, minus = 0.0, step = 0.0;
        if (options.precision == NumericPrecision::wide) {
            double& v = wide[c.input][c.index];
            const double orig = v;
            v = orig + options.eps;
            const double hi = v;
            plus = detail::evaluate_scalar<double>(f, std::span<const BasicTensor<double>>(wide));
            v = orig - options.eps;
            const double lo = v;
            minus = detail::evaluate_scalar<double>(f, std::span<const BasicTensor<double>>(wide));
            v = orig;
            step = hi - lo;
        } else {
            float& v = native[c.input][c.index];
            const float orig = v;
            v = static_cast<float>(orig + options.eps);
            const float hi = v;
            plus = detail::evaluate_scalar<float>(f, std::span<const Tensor>(native));
            v = static_cast<float>(orig - options.eps);
            const float lo = v;
            minus = detail::evaluate_scalar<float>(f, std::span<const Tensor>(native));
            v = orig;
            step = static_cast<double>(hi) - static_cast<double>(lo);
        }
        const double numeric = (plus - minus) / step;
        const double a = analytic[c.input][c.index];
        ++report.checked;
        if (!std::isfinite(a) || !std::isfinite(numeric)) {
            report.finite = false;
            report.max_rel_error = std::numeric_limits<double>::infinity();
            report.worst = c;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
            report.message = "non-finite gradient at " + detail::describe(c);
            return report;
        }
        const double err = relative_error(a, numeric);
        if (err > report.max_rel_error || report.checked == 1) {
            report.max_rel_error = std::max(report.max_rel_error, err);
            report.worst = c;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    std::ostringstream msg;
    msg << "max relative error " << report.max_rel_error << " at " << detail::describe(report.worst)
        << " (analytic " << report.worst_analytic << ", numeric " << report.worst_numeric << ")";
    report.message = msg.str();
    return report;
}

}  // namespace tkfnet
