#pragma once

#include <cstddef>
#include <string>

#include "tkfnet/errors.hpp"
#include "tkfnet/layers.hpp"
#include "tkfnet/ops.hpp"

namespace tkfnet {

template <typename T>
struct AttentionResult {
    BasicTensor<T> theta;  // eta * v, broadcast over positions
    BasicTensor<T> eta;    // (n, 1, 1, C') gate, every element in (0, 1)
};

/// Dual contextual information filtering and classification head.
///
/// Average- and max-pooled global descriptors are concatenated and turned
/// into a sigmoid channel gate eta; the gated map is average-pooled, passed
/// through an FC -> ReLU -> FC bottleneck, and classified by a final FC.
template <typename T>
struct Dcif {
    std::size_t channels = 0;
    std::size_t reduction = 4;
    std::size_t classes = 7;
    Conv2d<T> attn_conv;  // 1x1, 2C' -> C'
    Dense<T> fc1;         // C' -> C'/r
    Dense<T> fc2;         // C'/r -> C'
    Dense<T> head;        // C' -> Q

    Dcif(std::size_t c, std::size_t r, std::size_t q) : channels(c), reduction(r), classes(q) {
        if (c == 0 || r == 0 || c % r != 0) {
            throw ConfigError("dcif: width " + std::to_string(c) + " is not divisible by reduction " + std::to_string(r));
        }
        if (q == 0) throw ConfigError("dcif: class count must be >= 1");
        attn_conv = Conv2d<T>(1, 1, 2 * c, c);
        fc1 = Dense<T>(c, c / r);
        fc2 = Dense<T>(c / r, c);
        head = Dense<T>(c, q);
    }

    void init(Rng& rng) {
        attn_conv.init(rng);
        fc1.init(rng);
        fc2.init(rng);
        head.init(rng);
    }

    AttentionResult<T> dual_pool_attention(BasicTape<T>& tape, const BasicTensor<T>& v) const {
        if (v.shape().c != channels) {
            throw ShapeError("dcif: expected " + std::to_string(channels) + " channels, got " + v.shape().str());
        }
        const auto r1 = ops::adaptive_pool(tape, ops::PoolKind::avg, v, 1, 1);
        const auto r2 = ops::adaptive_pool(tape, ops::PoolKind::max, v, 1, 1);
        const auto descriptor = ops::concat_channels(tape, r1, r2);
        auto eta = ops::sigmoid(tape, attn_conv(tape, descriptor));
        auto theta = ops::hadamard(tape, v, eta);
        return {std::move(theta), std::move(eta)};
    }

    BasicTensor<T> global_context_encode(BasicTape<T>& tape, const BasicTensor<T>& theta) const {
        const auto kappa = ops::adaptive_pool(tape, ops::PoolKind::avg, theta, 1, 1);
        return fc2(tape, ops::relu(tape, fc1(tape, kappa)));
    }

    // K is already one vector per sample, so global pooling and flattening
    // before the head are identities.
    BasicTensor<T> classify_head(BasicTape<T>& tape, const BasicTensor<T>& k) const { return head(tape, k); }

    template <typename V>
    void visit(const std::string& prefix, V&& v) {
        attn_conv.visit(prefix + ".attn_conv", v);
        fc1.visit(prefix + ".fc1", v);
        fc2.visit(prefix + ".fc2", v);
        head.visit(prefix + ".head", v);
    }
};

}  // namespace tkfnet
