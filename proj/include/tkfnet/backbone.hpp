#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tkfnet/errors.hpp"
#include "tkfnet/layers.hpp"
#include "tkfnet/ops.hpp"
#include "tkfnet/random.hpp"

namespace tkfnet {

/// Residual feature extractor layout: a 3x3 stem convolution, an optional
/// 2x2 stride-2 max-pool, then stages of plain (normalization-free) residual
/// blocks.
struct BackboneConfig {
    std::size_t in_channels = 3;
    std::size_t stem_channels = 32;
    std::size_t stem_stride = 2;
    std::size_t stem_pool = 1;  // 1: none, 2: 2x2 max-pool with stride 2
    std::vector<std::size_t> stage_widths;
    std::vector<std::size_t> blocks_per_stage;
    std::vector<std::size_t> stride_per_stage;

    /// 32-channel stem with pooling, stages [32, 64, 128] x 2 blocks,
    /// strides [1, 2, 2]: total stride 16.
    static BackboneConfig base() { return {3, 32, 2, 2, {32, 64, 128}, {2, 2, 2}, {1, 2, 2}}; }
    /// 8-channel stem without pooling, stages [8, 16] x 1 block, strides
    /// [2, 2]: total stride 8.
    static BackboneConfig small() { return {3, 8, 2, 1, {8, 16}, {1, 1}, {2, 2}}; }

    void validate() const {
        if (stage_widths.empty()) throw ConfigError("backbone: at least one stage is required");
        if (stage_widths.size() != blocks_per_stage.size() || stage_widths.size() != stride_per_stage.size()) {
            throw ConfigError("backbone: stage_widths, blocks_per_stage and stride_per_stage differ in length");
        }
        if (in_channels == 0 || stem_channels == 0) throw ConfigError("backbone: zero-width stem");
        if (stem_stride != 1 && stem_stride != 2) throw ConfigError("backbone: stem stride must be 1 or 2");
        if (stem_pool != 1 && stem_pool != 2) throw ConfigError("backbone: stem pool must be 1 or 2");
        for (std::size_t i = 0; i < stage_widths.size(); ++i) {
            if (stage_widths[i] == 0) throw ConfigError("backbone: stage " + std::to_string(i) + " has zero width");
            if (blocks_per_stage[i] == 0) throw ConfigError("backbone: stage " + std::to_string(i) + " has no blocks");
            if (stride_per_stage[i] != 1 && stride_per_stage[i] != 2) {
                throw ConfigError("backbone: stage " + std::to_string(i) + " stride must be 1 or 2");
            }
        }
    }

    std::size_t total_stride() const {
        std::size_t s = stem_stride * stem_pool;
        for (std::size_t v : stride_per_stage) s *= v;
        return s;
    }

    std::size_t out_channels() const { return stage_widths.back(); }
};

template <typename T>
struct ResidualBlock {
    Conv2d<T> conv_a;
    Conv2d<T> conv_b;
    std::optional<Conv2d<T>> projection;  // present when width or stride changes

    ResidualBlock(std::size_t cin, std::size_t cout, std::size_t stride)
        : conv_a(3, 3, cin, cout, stride), conv_b(3, 3, cout, cout, 1) {
        if (cin != cout || stride != 1) projection.emplace(1, 1, cin, cout, stride);
    }

    void init(Rng& rng) {
        conv_a.init(rng);
        conv_b.init(rng);
        if (projection) projection->init(rng);
    }

    BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x) const {
        const auto a = ops::relu(tape, conv_a(tape, x));
        const auto b = conv_b(tape, a);
        const auto shortcut = projection ? (*projection)(tape, x) : x;
        return ops::relu(tape, ops::add(tape, b, shortcut));
    }

    template <typename V>
    void visit(const std::string& prefix, V&& v) {
        conv_a.visit(prefix + ".conv_a", v);
        conv_b.visit(prefix + ".conv_b", v);
        if (projection) projection->visit(prefix + ".proj", v);
    }
};

template <typename T>
class Backbone {
public:
    explicit Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        stem_ = Conv2d<T>(3, 3, cfg_.in_channels, cfg_.stem_channels, cfg_.stem_stride);
        std::size_t cin = cfg_.stem_channels;
        for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
            for (std::size_t b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
                const std::size_t stride = b == 0 ? cfg_.stride_per_stage[s] : 1;
                blocks_.emplace_back(cin, cfg_.stage_widths[s], stride);
                names_.push_back("stage" + std::to_string(s) + ".block" + std::to_string(b));
                cin = cfg_.stage_widths[s];
            }
        }
    }

    const BackboneConfig& config() const noexcept { return cfg_; }
    Conv2d<T>& stem() noexcept { return stem_; }
    std::vector<ResidualBlock<T>>& blocks() noexcept { return blocks_; }

    void init(Rng& rng) {
        stem_.init(rng);
        for (auto& b : blocks_) b.init(rng);
    }

    /// phi = g(e): (n, H, W, 3) -> (n, H/s, W/s, C_last) for total stride s.
    BasicTensor<T> extract_features(BasicTape<T>& tape, const BasicTensor<T>& images) const {
        const Shape s = images.shape();
        const std::size_t stride = cfg_.total_stride();
        if (s.c != cfg_.in_channels) {
            throw ShapeError("backbone: expected " + std::to_string(cfg_.in_channels) + " input channels, got " + s.str());
        }
        if (s.h == 0 || s.w == 0 || s.h % stride != 0 || s.w % stride != 0) {
            throw ShapeError("backbone: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                             " must be a non-zero multiple of " + std::to_string(stride));
        }
        BasicTensor<T> x = ops::relu(tape, stem_(tape, images));
        if (cfg_.stem_pool > 1) {
            const Shape xs = x.shape();
            x = ops::adaptive_pool(tape, ops::PoolKind::max, x, xs.h / cfg_.stem_pool, xs.w / cfg_.stem_pool);
        }
        for (const auto& b : blocks_) x = b(tape, x);
        return x;
    }

    template <typename V>
    void visit(const std::string& prefix, V&& v) {
        stem_.visit(prefix + ".stem", v);
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(prefix + "." + names_[i], v);
    }

private:
    BackboneConfig cfg_;
    Conv2d<T> stem_;
    std::vector<ResidualBlock<T>> blocks_;
    std::vector<std::string> names_;
};

template <typename T = float>
Backbone<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
    Backbone<T> bb(cfg);
    Rng rng(seed);
    bb.init(rng);
    return bb;
}

}  // namespace tkfnet
