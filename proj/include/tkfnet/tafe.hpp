#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "tkfnet/layers.hpp"
#include "tkfnet/ops.hpp"

namespace tkfnet {

/// Per-channel spatial statistics of the first branch and their fusion
/// O = alpha * O_s + beta * O_v.
template <typename T>
struct TextureDescriptor {
    BasicTensor<T> mean;      // O_s, (n, 1, 1, C)
    BasicTensor<T> variance;  // O_v, (n, 1, 1, C), population form
    BasicTensor<T> fused;     // O
};

template <typename T>
struct TafeTrace {
    BasicTensor<T> o1;
    BasicTensor<T> o2;
    TextureDescriptor<T> descriptor;
    BasicTensor<T> modulation;  // Conv(GeLU(O)), one gain per (sample, channel)
    BasicTensor<T> texture;     // first branch after channel modulation
    BasicTensor<T> context;     // second branch after the cascaded convolutions
    BasicTensor<T> fused;       // concat(texture, context), 2C channels
};

/// Texture-aware feature extractor over a C-channel feature map.
///
/// Branch 1 projects phi per position, summarises it with spatial mean and
/// variance, fuses those with the learnable scalars alpha and beta, and uses
/// Conv(GeLU(O)) as a channel-wise gain on the projection. Branch 2 runs a
/// 3x3 -> 1x1 -> GeLU -> 1x1 cascade. The two results are concatenated.
template <typename T>
struct Tafe {
    std::size_t channels = 0;
    Conv2d<T> branch1;
    Conv2d<T> branch2;
    BasicTensor<T> alpha;
    BasicTensor<T> beta;
    Conv2d<T> mod_conv;
    Conv2d<T> ctx_conv3;
    Conv2d<T> ctx_conv1a;
    Conv2d<T> ctx_conv1b;

    static constexpr double kAlphaInit = 1.0;
    static constexpr double kBetaInit = 0.1;

    explicit Tafe(std::size_t c)
        : channels(c),
          branch1(1, 1, c, c),
          branch2(1, 1, c, c),
          alpha(BasicTensor<T>::scalar(static_cast<T>(kAlphaInit), true)),
          beta(BasicTensor<T>::scalar(static_cast<T>(kBetaInit), true)),
          mod_conv(1, 1, c, c),
          ctx_conv3(3, 3, c, c),
          ctx_conv1a(1, 1, c, c),
          ctx_conv1b(1, 1, c, c) {}

    void init(Rng& rng) {
        branch1.init(rng);
        branch2.init(rng);
        alpha = BasicTensor<T>::scalar(static_cast<T>(kAlphaInit), true);
        beta = BasicTensor<T>::scalar(static_cast<T>(kBetaInit), true);
        mod_conv.init(rng);
        ctx_conv3.init(rng);
        ctx_conv1a.init(rng);
        ctx_conv1b.init(rng);
    }

    std::pair<BasicTensor<T>, BasicTensor<T>> branch_project(BasicTape<T>& tape, const BasicTensor<T>& phi) const {
        if (phi.shape().c != channels) {
            throw ShapeError("tafe: expected " + std::to_string(channels) + " channels, got " + phi.shape().str());
        }
        return {branch1(tape, phi), branch2(tape, phi)};
    }

    TextureDescriptor<T> texture_descriptor(BasicTape<T>& tape, const BasicTensor<T>& o1) const {
        auto m = ops::spatial_moments(tape, o1);
        auto fused = ops::add(tape, ops::scale(tape, m.mean, alpha), ops::scale(tape, m.var, beta));
        return {std::move(m.mean), std::move(m.var), std::move(fused)};
    }

    TafeTrace<T> trace(BasicTape<T>& tape, const BasicTensor<T>& phi) const {
        TafeTrace<T> t;
        std::tie(t.o1, t.o2) = branch_project(tape, phi);
        t.descriptor = texture_descriptor(tape, t.o1);
        t.modulation = mod_conv(tape, ops::gelu(tape, t.descriptor.fused));
        t.texture = ops::hadamard(tape, t.o1, t.modulation);
        t.context = ctx_conv1b(tape, ops::gelu(tape, ctx_conv1a(tape, ctx_conv3(tape, t.o2))));
        t.fused = ops::concat_channels(tape, t.texture, t.context);
        return t;
    }

    BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& phi) const { return trace(tape, phi).fused; }

    template <typename V>
    void visit(const std::string& prefix, V&& v) {
        branch1.visit(prefix + ".branch1", v);
        branch2.visit(prefix + ".branch2", v);
        v(prefix + ".alpha", alpha);
        v(prefix + ".beta", beta);
        mod_conv.visit(prefix + ".mod_conv", v);
        ctx_conv3.visit(prefix + ".ctx_conv3", v);
        ctx_conv1a.visit(prefix + ".ctx_conv1a", v);
        ctx_conv1b.visit(prefix + ".ctx_conv1b", v);
    }
};

}  // namespace tkfnet
