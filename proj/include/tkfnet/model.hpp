#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tkfnet/backbone.hpp"
#include "tkfnet/dcif.hpp"
#include "tkfnet/errors.hpp"
#include "tkfnet/random.hpp"
#include "tkfnet/tafe.hpp"

namespace tkfnet {

struct ModelConfig {
    std::string name = "base";
    BackboneConfig backbone = BackboneConfig::base();
    std::size_t classes = 7;
    std::size_t reduction = 4;

    static ModelConfig base(std::size_t classes = 7) { return {"base", BackboneConfig::base(), classes, 4}; }
    static ModelConfig small(std::size_t classes = 7) { return {"small", BackboneConfig::small(), classes, 4}; }

    static ModelConfig named(const std::string& name, std::size_t classes = 7) {
        if (name == "base") return base(classes);
        if (name == "small") return small(classes);
        throw ConfigError("unknown model '" + name + "' (expected base or small)");
    }

    std::size_t feature_channels() const { return backbone.out_channels(); }
    std::size_t fused_channels() const { return 2 * feature_channels(); }
};

template <typename T>
struct ForwardTrace {
    BasicTensor<T> features;  // phi
    TafeTrace<T> tafe;
    AttentionResult<T> attention;
    BasicTensor<T> context;  // K
    BasicTensor<T> logits;
};

/// Backbone -> TAFE -> DCIF -> logits.
template <typename T = float>
class TKFNet {
public:
    /// Zero-initialised network (alpha = 1, beta = 0.1); see build() for seeded init.
    explicit TKFNet(ModelConfig cfg)
        : cfg_(std::move(cfg)),
          backbone_(cfg_.backbone),
          tafe_(cfg_.feature_channels()),
          dcif_(cfg_.fused_channels(), cfg_.reduction, cfg_.classes) {}

    static TKFNet build(const ModelConfig& cfg, std::uint64_t seed) {
        TKFNet net(cfg);
        Rng bb(mix_key(seed, 1)), tf(mix_key(seed, 2)), dc(mix_key(seed, 3));
        net.backbone_.init(bb);
        net.tafe_.init(tf);
        net.dcif_.init(dc);
        return net;
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    Backbone<T>& backbone() noexcept { return backbone_; }
    Tafe<T>& tafe() noexcept { return tafe_; }
    Dcif<T>& dcif() noexcept { return dcif_; }
    const Backbone<T>& backbone() const noexcept { return backbone_; }
    const Tafe<T>& tafe() const noexcept { return tafe_; }
    const Dcif<T>& dcif() const noexcept { return dcif_; }

    ForwardTrace<T> trace(BasicTape<T>& tape, const BasicTensor<T>& images) const {
        ForwardTrace<T> t;
        t.features = backbone_.extract_features(tape, images);
        t.tafe = tafe_.trace(tape, t.features);
        t.attention = dcif_.dual_pool_attention(tape, t.tafe.fused);
        t.context = dcif_.global_context_encode(tape, t.attention.theta);
        t.logits = dcif_.classify_head(tape, t.context);
        return t;
    }

    BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& images) const {
        return trace(tape, images).logits;
    }

    /// Visits every (name, tensor) pair in a fixed order.
    template <typename V>
    void visit(V&& v) {
        backbone_.visit("backbone", v);
        tafe_.visit("tafe", v);
        dcif_.visit("dcif", v);
    }

    std::vector<Parameter<T>> parameters() {
        std::vector<Parameter<T>> out;
        visit([&](const std::string& name, BasicTensor<T>& t) { out.push_back({name, t}); });
        return out;
    }

    std::vector<BasicTensor<T>> parameter_tensors() {
        std::vector<BasicTensor<T>> out;
        visit([&](const std::string&, BasicTensor<T>& t) { out.push_back(t); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t total = 0;
        visit([&](const std::string&, BasicTensor<T>& t) { total += t.size(); });
        return total;
    }

    /// Rebinds the parameter handles, in visit() order, to the given tensors.
    void bind(std::span<const BasicTensor<T>> tensors) {
        std::size_t i = 0;
        visit([&](const std::string& name, BasicTensor<T>& t) {
            if (i >= tensors.size()) throw ShapeError("bind: too few tensors, missing " + name);
            if (!(tensors[i].shape() == t.shape())) {
                throw ShapeError("bind: " + name + " expects " + t.shape().str() + ", got " + tensors[i].shape().str());
            }
            t = tensors[i++];
        });
        if (i != tensors.size()) throw ShapeError("bind: " + std::to_string(tensors.size() - i) + " surplus tensors");
    }

    /// Deep copy with converted element type.
    template <typename U>
    TKFNet<U> cast() {
        std::vector<BasicTensor<U>> converted;
        visit([&](const std::string&, BasicTensor<T>& t) {
            auto c = tensor_cast<U>(t);
            c.set_requires_grad(true);
            converted.push_back(std::move(c));
        });
        TKFNet<U> out(cfg_);
        out.bind(converted);
        return out;
    }

private:
    ModelConfig cfg_;
    Backbone<T> backbone_;
    Tafe<T> tafe_;
    Dcif<T> dcif_;
};

}  // namespace tkfnet
