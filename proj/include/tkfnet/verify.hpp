#pragma once

// Finite-difference verification suites shared by the CLI gradcheck command
// and the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tkfnet/grad_check.hpp"
#include "tkfnet/model.hpp"
#include "tkfnet/ops.hpp"
#include "tkfnet/random.hpp"

namespace tkfnet::verify {

inline constexpr double kOpTolerance = 1e-3;
inline constexpr double kOpEps = 1e-3;
inline constexpr double kModuleTolerance = 1e-2;
// Composite graphs contain ReLU and max-pool kinks; a 1e-3 step regularly
// straddles one, so module checks difference much closer to the point.
inline constexpr double kModuleEps = 1e-6;
// Whole-module checks cover thousands of coordinates, some with gradients
// near 1e-7 where float32 cancellation alone exceeds the tolerance; their
// analytic pass runs the same code on a 64-bit tape.
inline constexpr NumericPrecision kModuleAnalytic = NumericPrecision::wide;
inline constexpr double kGeluStationary = -0.7517915241;

struct ModuleResult {
    std::string module;
    double tolerance = 0.0;
    double max_rel_error = 0.0;
    std::size_t checks = 0;
    std::size_t coordinates = 0;
    bool finite = true;
    std::string worst;

    ModuleResult(std::string name, double tol) : module(std::move(name)), tolerance(tol) {}

    bool passed() const { return finite && max_rel_error <= tolerance; }

    void merge(const std::string& label, const GradCheckReport& r) {
        ++checks;
        coordinates += r.checked;
        if (!r.finite) {
            if (finite) worst = label + ": " + r.message;
            finite = false;
            max_rel_error = std::numeric_limits<double>::infinity();
            return;
        }
        if (finite && (r.max_rel_error > max_rel_error || worst.empty())) {
            max_rel_error = std::max(max_rel_error, r.max_rel_error);
            worst = label + ": " + r.message;
        }
    }
};

// ---------------------------------------------------------------------------
// Input generation

inline double unit(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Shape small_shape(Rng& rng, std::size_t max_elements = 64) {
    for (;;) {
        Shape s{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
        if (s.size() <= max_elements) return s;
    }
}

inline Tensor uniform_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    fill_uniform(t, lo, hi, rng);
    return t;
}

/// Uniform in [lo, hi] but at least `margin` away from `point`.
inline Tensor avoiding_tensor(Shape s, Rng& rng, double lo, double hi, double point, double margin) {
    Tensor t(s);
    for (float& v : t.data()) {
        double x;
        do x = lo + (hi - lo) * unit(rng);
        while (std::abs(x - point) < margin);
        v = static_cast<float>(x);
    }
    return t;
}

/// Pairwise well-separated values in [-1, 1], so no max-pool region ties
/// within a finite-difference step.
inline Tensor distinct_tensor(Shape s, Rng& rng) {
    const auto order = counter_permutation(s.size(), rng());
    const double spacing = 2.0 / static_cast<double>(s.size());
    Tensor t(s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double jitter = (unit(rng) - 0.5) * 0.2 * spacing;
        t[i] = static_cast<float>(-1.0 + (static_cast<double>(order[i]) + 0.5) * spacing + jitter);
    }
    return t;
}

/// sum(y * w) with a fixed pseudo-random weight |w| in [0.5, 1.5] of random
/// sign; weights are rounded to float so both precisions see the same values.
template <typename T>
BasicTensor<T> probe(BasicTape<T>& tape, const BasicTensor<T>& y, std::uint64_t key) {
    BasicTensor<T> w(y.shape());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const std::uint64_t u = splitmix64(key + i);
        const double mag = 0.5 + static_cast<double>(u >> 11) * 0x1.0p-53;
        w[i] = static_cast<T>(static_cast<float>((u & 1) ? -mag : mag));
    }
    return ops::sum(tape, ops::hadamard(tape, y, w));
}

template <typename Module, typename T>
void bind_params(Module& m, const std::string& prefix, std::span<const BasicTensor<T>> in, std::size_t first) {
    m.visit(prefix, [&](const std::string&, BasicTensor<T>& p) { p = in[first++]; });
}

template <typename Module>
std::vector<Tensor> collect_params(Module& m, const std::string& prefix) {
    std::vector<Tensor> out;
    m.visit(prefix, [&](const std::string&, Tensor& p) { out.push_back(p); });
    return out;
}

#define TKF_SCALAR(in) typename std::decay_t<decltype(in)>::value_type::value_type

// ---------------------------------------------------------------------------
// Per-op checks

struct OpCase {
    std::string name;
    std::function<GradCheckReport(std::uint64_t seed)> run;
};

inline GradCheckOptions op_options() {
    GradCheckOptions o;
    o.eps = kOpEps;
    return o;
}

inline std::vector<OpCase> op_cases() {
    std::vector<OpCase> cases;

    cases.push_back({"conv2d", [](std::uint64_t seed) {
        Rng rng(seed);
        for (;;) {
            const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
            const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
            const std::size_t kh = pick(rng, 1, 3), kw = pick(rng, 1, 3), stride = pick(rng, 1, 2);
            const auto padding = pick(rng, 0, 1) ? ops::Padding::same : ops::Padding::valid;
            if (padding == ops::Padding::valid && (kh > h || kw > w)) continue;
            const Shape xs{n, h, w, cin}, ws{kh, kw, cin, cout};
            if (xs.size() > 64 || ws.size() > 64) continue;
            auto f = [=](auto& tape, auto in) {
                return probe(tape, ops::conv2d(tape, in[0], in[1], in[2], stride, padding), seed);
            };
            return grad_check(f, {uniform_tensor(xs, rng), uniform_tensor(ws, rng), uniform_tensor({1, 1, 1, cout}, rng)},
                              op_options());
        }
    }});

    cases.push_back({"linear", [](std::uint64_t seed) {
        Rng rng(seed);
        const std::size_t n = pick(rng, 1, 3), cin = pick(rng, 1, 6), cout = pick(rng, 1, 6);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::linear(tape, in[0], in[1], in[2]), seed); };
        return grad_check(f,
                          {uniform_tensor({n, 1, 1, cin}, rng), uniform_tensor({1, 1, cin, cout}, rng),
                           uniform_tensor({1, 1, 1, cout}, rng)},
                          op_options());
    }});

    cases.push_back({"gelu", [](std::uint64_t seed) {
        Rng rng(seed);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::gelu(tape, in[0]), seed); };
        return grad_check(f, {avoiding_tensor(small_shape(rng), rng, -3.0, 3.0, kGeluStationary, 0.05)}, op_options());
    }});

    cases.push_back({"relu", [](std::uint64_t seed) {
        Rng rng(seed);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::relu(tape, in[0]), seed); };
        return grad_check(f, {avoiding_tensor(small_shape(rng), rng, -2.0, 2.0, 0.0, 0.05)}, op_options());
    }});

    cases.push_back({"sigmoid", [](std::uint64_t seed) {
        Rng rng(seed);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::sigmoid(tape, in[0]), seed); };
        return grad_check(f, {uniform_tensor(small_shape(rng), rng, -4.0, 4.0)}, op_options());
    }});

    cases.push_back({"spatial_moments", [](std::uint64_t seed) {
        Rng rng(seed);
        auto f = [=](auto& tape, auto in) {
            const auto m = ops::spatial_moments(tape, in[0]);
            return ops::add(tape, probe(tape, m.mean, seed), probe(tape, m.var, seed + 7919));
        };
        return grad_check(f, {uniform_tensor(small_shape(rng), rng)}, op_options());
    }});

    for (const auto kind : {ops::PoolKind::avg, ops::PoolKind::max}) {
        const std::string name = kind == ops::PoolKind::avg ? "adaptive_pool.avg" : "adaptive_pool.max";
        cases.push_back({name, [kind](std::uint64_t seed) {
            Rng rng(seed);
            const Shape s = small_shape(rng);
            const std::size_t oh = pick(rng, 1, s.h), ow = pick(rng, 1, s.w);
            auto f = [=](auto& tape, auto in) { return probe(tape, ops::adaptive_pool(tape, kind, in[0], oh, ow), seed); };
            Tensor x = kind == ops::PoolKind::max ? distinct_tensor(s, rng) : uniform_tensor(s, rng);
            return grad_check(f, {x}, op_options());
        }});
    }

    cases.push_back({"hadamard", [](std::uint64_t seed) {
        Rng rng(seed);
        const Shape s = small_shape(rng);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::hadamard(tape, in[0], in[1]), seed); };
        return grad_check(f, {uniform_tensor(s, rng), uniform_tensor(s, rng)}, op_options());
    }});

    cases.push_back({"hadamard.broadcast", [](std::uint64_t seed) {
        Rng rng(seed);
        const Shape s = small_shape(rng);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::hadamard(tape, in[0], in[1]), seed); };
        return grad_check(f, {uniform_tensor(s, rng), uniform_tensor({s.n, 1, 1, s.c}, rng)}, op_options());
    }});

    cases.push_back({"concat_channels", [](std::uint64_t seed) {
        Rng rng(seed);
        const Shape a = small_shape(rng, 32);
        const Shape b{a.n, a.h, a.w, pick(rng, 1, 2)};
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::concat_channels(tape, in[0], in[1]), seed); };
        return grad_check(f, {uniform_tensor(a, rng), uniform_tensor(b, rng)}, op_options());
    }});

    cases.push_back({"slice_channels", [](std::uint64_t seed) {
        Rng rng(seed);
        const Shape s = small_shape(rng);
        const std::size_t begin = pick(rng, 0, s.c - 1), end = pick(rng, begin + 1, s.c);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::slice_channels(tape, in[0], begin, end), seed); };
        return grad_check(f, {uniform_tensor(s, rng)}, op_options());
    }});

    cases.push_back({"add", [](std::uint64_t seed) {
        Rng rng(seed);
        const Shape s = small_shape(rng);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::add(tape, in[0], in[1]), seed); };
        return grad_check(f, {uniform_tensor(s, rng), uniform_tensor(s, rng)}, op_options());
    }});

    cases.push_back({"scale", [](std::uint64_t seed) {
        Rng rng(seed);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::scale(tape, in[0], in[1]), seed); };
        return grad_check(f, {uniform_tensor(small_shape(rng), rng), uniform_tensor(scalar_shape, rng)}, op_options());
    }});

    cases.push_back({"sum", [](std::uint64_t seed) {
        Rng rng(seed);
        auto f = [=](auto& tape, auto in) { return probe(tape, ops::sum(tape, in[0]), seed); };
        return grad_check(f, {uniform_tensor(small_shape(rng), rng)}, op_options());
    }});

    cases.push_back({"softmax_cross_entropy", [](std::uint64_t seed) {
        Rng rng(seed);
        const std::size_t n = pick(rng, 1, 4), q = pick(rng, 2, 7);
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) l = pick(rng, 0, q - 1);
        auto f = [labels](auto& tape, auto in) {
            return ops::softmax_cross_entropy(tape, in[0], std::span<const std::size_t>(labels));
        };
        return grad_check(f, {uniform_tensor({n, 1, 1, q}, rng, -3.0, 3.0)}, op_options());
    }});

    return cases;
}

/// Every op case over `seeds` consecutive seeds starting at first_seed.
inline ModuleResult check_ops(std::uint64_t first_seed, std::size_t seeds) {
    ModuleResult result{"tensor-core", kOpTolerance};
    for (const OpCase& c : op_cases()) {
        for (std::size_t s = 0; s < seeds; ++s) {
            const std::uint64_t seed = first_seed + s;
            result.merge(c.name + " seed " + std::to_string(seed), c.run(mix_key(seed, 0x09)));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Module checks

inline GradCheckOptions module_options(std::size_t max_coordinates = 0, std::uint64_t seed = 0) {
    GradCheckOptions o;
    o.eps = kModuleEps;
    o.max_coordinates = max_coordinates;
    o.seed = seed;
    o.analytic = kModuleAnalytic;
    return o;
}

/// tkfnet-small backbone on an 8x8 image; image and every parameter checked.
inline ModuleResult check_backbone(std::uint64_t seed) {
    const BackboneConfig cfg = BackboneConfig::small();
    auto bb = build_backbone<float>(cfg, seed);
    Rng rng(mix_key(seed, 0xB0));
    std::vector<Tensor> inputs{uniform_tensor({1, 8, 8, 3}, rng)};
    for (Tensor& p : collect_params(bb, "backbone")) inputs.push_back(p);
    auto f = [&](auto& tape, auto in) {
        using T = TKF_SCALAR(in);
        Backbone<T> net(cfg);
        bind_params(net, "backbone", in, 1);
        return probe(tape, net.extract_features(tape, in[0]), seed);
    };
    ModuleResult r{"backbone", kModuleTolerance};
    r.merge("backbone seed " + std::to_string(seed), grad_check(f, inputs, module_options()));
    return r;
}

/// TAFE over a (1,4,4,4) map; input, every parameter, alpha and beta checked.
inline ModuleResult check_tafe(std::uint64_t seed) {
    constexpr std::size_t c = 4;
    Tafe<float> tafe(c);
    Rng rng(mix_key(seed, 0x7A));
    tafe.init(rng);
    std::vector<Tensor> inputs{uniform_tensor({1, 4, 4, c}, rng)};
    for (Tensor& p : collect_params(tafe, "tafe")) inputs.push_back(p);
    auto f = [&](auto& tape, auto in) {
        using T = TKF_SCALAR(in);
        Tafe<T> net(c);
        bind_params(net, "tafe", in, 1);
        return probe(tape, net(tape, in[0]), seed);
    };
    ModuleResult r{"tafe", kModuleTolerance};
    r.merge("tafe seed " + std::to_string(seed), grad_check(f, inputs, module_options()));
    return r;
}

/// DCIF attention, context encoding and head over a (1,2,2,4) map.
inline ModuleResult check_dcif(std::uint64_t seed) {
    constexpr std::size_t c = 4, r = 4, q = 7;
    Dcif<float> dcif(c, r, q);
    Rng rng(mix_key(seed, 0xDC));
    dcif.init(rng);
    std::vector<Tensor> inputs{distinct_tensor({1, 2, 2, c}, rng)};
    for (Tensor& p : collect_params(dcif, "dcif")) inputs.push_back(p);
    auto f = [&](auto& tape, auto in) {
        using T = TKF_SCALAR(in);
        Dcif<T> net(c, r, q);
        bind_params(net, "dcif", in, 1);
        const auto attention = net.dual_pool_attention(tape, in[0]);
        return probe(tape, net.classify_head(tape, net.global_context_encode(tape, attention.theta)), seed);
    };
    ModuleResult res{"dcif", kModuleTolerance};
    res.merge("dcif seed " + std::to_string(seed), grad_check(f, inputs, module_options()));
    return res;
}

/// End-to-end cross-entropy of tkfnet-small on one 16x16 image: `sampled`
/// random scalar parameters plus alpha and beta.
inline ModuleResult check_model(std::uint64_t seed, std::size_t sampled = 62) {
    const ModelConfig cfg = ModelConfig::small(7);
    auto model = TKFNet<float>::build(cfg, seed);
    Rng rng(mix_key(seed, 0xE2E));
    const Tensor image = uniform_tensor({1, 16, 16, 3}, rng);
    const std::vector<std::size_t> labels{pick(rng, 0, cfg.classes - 1)};

    auto params = model.parameters();
    std::vector<Tensor> inputs;
    std::vector<GradCoordinate> all, coords;
    for (std::size_t i = 0; i < params.size(); ++i) {
        inputs.push_back(params[i].value);
        if (params[i].name == "tafe.alpha" || params[i].name == "tafe.beta") {
            coords.push_back({i, 0});
            continue;
        }
        for (std::size_t k = 0; k < params[i].value.size(); ++k) all.push_back({i, k});
    }
    std::sample(all.begin(), all.end(), std::back_inserter(coords), sampled, rng);

    auto f = [&](auto& tape, auto in) {
        using T = TKF_SCALAR(in);
        TKFNet<T> net(cfg);
        net.bind(in);
        const auto logits = net.forward(tape, tensor_cast_if_needed<T>(image));
        return ops::softmax_cross_entropy(tape, logits, std::span<const std::size_t>(labels));
    };
    GradCheckOptions o = module_options();
    o.coordinates = coords;
    o.analytic = NumericPrecision::native;
    ModuleResult r{"train", kModuleTolerance};
    r.merge("tkfnet-small loss seed " + std::to_string(seed), grad_check(f, inputs, o));
    return r;
}

#undef TKF_SCALAR

/// The full suite reported by `tkfnet gradcheck`.
inline std::vector<ModuleResult> run_suite(std::uint64_t seed, std::size_t op_seeds = 100) {
    return {check_ops(seed, op_seeds), check_backbone(seed), check_tafe(seed), check_dcif(seed), check_model(seed)};
}

}  // namespace tkfnet::verify
