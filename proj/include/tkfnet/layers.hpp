#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "tkfnet/ops.hpp"
#include "tkfnet/random.hpp"
#include "tkfnet/tensor.hpp"

namespace tkfnet {

/// A named learnable tensor. The tensor is a handle into the owning model, so
/// gradients accumulated by backward passes land here.
template <typename T>
struct Parameter {
    std::string name;
    BasicTensor<T> value;
};

template <typename T>
BasicTensor<T> make_parameter(Shape shape) {
    return BasicTensor<T>(shape, /*requires_grad=*/true);
}

// Fan-in-scaled Gaussian, std = sqrt(2 / fan_in).
template <typename T>
void init_he_normal(BasicTensor<T>& weight, std::size_t fan_in, Rng& rng) {
    fill_normal(weight, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

template <typename T>
struct Conv2d {
    BasicTensor<T> weight;
    BasicTensor<T> bias;
    std::size_t stride = 1;
    ops::Padding padding = ops::Padding::same;

    Conv2d() = default;
    Conv2d(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, std::size_t stride_ = 1,
           ops::Padding padding_ = ops::Padding::same)
        : weight(make_parameter<T>(Shape{kh, kw, cin, cout})),
          bias(make_parameter<T>(Shape{1, 1, 1, cout})),
          stride(stride_),
          padding(padding_) {}

    std::size_t in_channels() const { return weight.shape().w; }
    std::size_t out_channels() const { return weight.shape().c; }

    void init(Rng& rng) {
        const Shape s = weight.shape();
        init_he_normal(weight, s.n * s.h * s.w, rng);
        bias = make_parameter<T>(bias.shape());
    }

    BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x) const {
        return ops::conv2d(tape, x, weight, bias, stride, padding);
    }

    template <typename V>
    void visit(const std::string& prefix, V&& v) {
        v(prefix + ".weight", weight);
        v(prefix + ".bias", bias);
    }
};

template <typename T>
struct Dense {
    BasicTensor<T> weight;  // (1, 1, in, out)
    BasicTensor<T> bias;

    Dense() = default;
    Dense(std::size_t in, std::size_t out)
        : weight(make_parameter<T>(Shape{1, 1, in, out})), bias(make_parameter<T>(Shape{1, 1, 1, out})) {}

    void init(Rng& rng) {
        init_he_normal(weight, weight.shape().w, rng);
        bias = make_parameter<T>(bias.shape());
    }

    BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x) const {
        return ops::linear(tape, x, weight, bias);
    }

    template <typename V>
    void visit(const std::string& prefix, V&& v) {
        v(prefix + ".weight", weight);
        v(prefix + ".bias", bias);
    }
};

}  // namespace tkfnet
