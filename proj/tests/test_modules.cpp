#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "tkfnet/backbone.hpp"
#include "tkfnet/dcif.hpp"
#include "tkfnet/random.hpp"
#include "tkfnet/tafe.hpp"

using namespace tkfnet;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    Rng rng(seed);
    fill_uniform(t, lo, hi, rng);
    return t;
}

template <typename Module>
std::vector<Tensor> snapshot(Module& m) {
    std::vector<Tensor> out;
    m.visit("m", [&](const std::string&, Tensor& t) { out.push_back(t.clone()); });
    return out;
}

void set_identity(Conv2d<float>& conv) {
    conv.weight = make_parameter<float>(conv.weight.shape());
    for (std::size_t i = 0; i < conv.in_channels(); ++i) conv.weight.at(0, 0, i, i) = 1.0f;
    conv.bias = make_parameter<float>(conv.bias.shape());
}

}  // namespace

// --- backbone ------------------------------------------------------------------

TEST(Backbone, SmallParameterCountMatchesConvShapes) {
    auto bb = build_backbone(BackboneConfig::small(), 0);
    // (kh * kw * cin + 1) * cout per conv.
    const auto conv = [](std::size_t k, std::size_t cin, std::size_t cout) { return (k * k * cin + 1) * cout; };
    const std::size_t expected = conv(3, 3, 8)                                    // stem
                                 + conv(3, 8, 8) + conv(3, 8, 8) + conv(1, 8, 8)  // stage0, stride 2
                                 + conv(3, 8, 16) + conv(3, 16, 16) + conv(1, 8, 16);
    std::size_t count = 0;
    bb.visit("bb", [&](const std::string&, Tensor& t) { count += t.size(); });
    EXPECT_EQ(count, expected);
    EXPECT_EQ(count, 5096u);
}

TEST(Backbone, SeedDeterminesParameters) {
    auto a = build_backbone(BackboneConfig::small(), 11);
    auto b = build_backbone(BackboneConfig::small(), 11);
    auto c = build_backbone(BackboneConfig::small(), 12);
    const auto pa = snapshot(a), pb = snapshot(b), pc = snapshot(c);
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        for (std::size_t k = 0; k < pa[i].size(); ++k) {
            EXPECT_EQ(pa[i][k], pb[i][k]);
            any_diff = any_diff || pa[i][k] != pc[i][k];
        }
    }
    EXPECT_TRUE(any_diff);
}

TEST(Backbone, BaseShapeAt224) {
    const auto cfg = BackboneConfig::base();
    EXPECT_EQ(cfg.total_stride(), 16u);
    auto bb = build_backbone(cfg, 0);
    Tape tape(false);
    const Tensor phi = bb.extract_features(tape, Tensor(Shape{1, 224, 224, 3}));
    EXPECT_EQ(phi.shape(), (Shape{1, 14, 14, 128}));
}

TEST(Backbone, SmallShapeAt32) {
    EXPECT_EQ(BackboneConfig::small().total_stride(), 8u);
    auto bb = build_backbone(BackboneConfig::small(), 0);
    Tape tape(false);
    EXPECT_EQ(bb.extract_features(tape, Tensor(Shape{2, 32, 32, 3})).shape(), (Shape{2, 4, 4, 16}));
}

TEST(Backbone, ShapeContractOverConfigGrid) {
    for (std::size_t pool : {1, 2})
        for (std::size_t s0 : {1, 2})
            for (std::size_t s1 : {1, 2})
                for (std::size_t blocks : {1, 2}) {
                    BackboneConfig cfg{3, 4, 2, pool, {4, 6}, {blocks, 1}, {s0, s1}};
                    auto bb = build_backbone(cfg, 1);
                    const std::size_t stride = cfg.total_stride();
                    Tape tape(false);
                    const Tensor phi = bb.extract_features(tape, random_tensor(Shape{1, 2 * stride, 3 * stride, 3}, 2));
                    EXPECT_EQ(phi.shape(), (Shape{1, 2, 3, 6}));
                }
}

TEST(Backbone, ZeroInputGivesZeroFeatures) {
    auto bb = build_backbone(BackboneConfig::small(), 3);
    Tape tape(false);
    const Tensor phi = bb.extract_features(tape, Tensor(Shape{1, 16, 16, 3}));
    for (float v : phi.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Backbone, RejectsIndivisibleInputWithMultiple) {
    auto bb = build_backbone(BackboneConfig::small(), 0);
    Tape tape(false);
    try {
        bb.extract_features(tape, Tensor(Shape{1, 20, 16, 3}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("multiple of 8"), std::string::npos) << e.what();
    }
    EXPECT_THROW(bb.extract_features(tape, Tensor(Shape{1, 16, 16, 1})), ShapeError);
}

TEST(Backbone, RejectsInvalidConfigs) {
    BackboneConfig zero_width = BackboneConfig::small();
    zero_width.stage_widths[1] = 0;
    EXPECT_THROW(build_backbone(zero_width, 0), ConfigError);
    BackboneConfig ragged = BackboneConfig::small();
    ragged.blocks_per_stage.push_back(1);
    EXPECT_THROW(build_backbone(ragged, 0), ConfigError);
    BackboneConfig bad_stride = BackboneConfig::small();
    bad_stride.stride_per_stage[0] = 3;
    EXPECT_THROW(build_backbone(bad_stride, 0), ConfigError);
    BackboneConfig empty = BackboneConfig::small();
    empty.stage_widths.clear();
    empty.blocks_per_stage.clear();
    empty.stride_per_stage.clear();
    EXPECT_THROW(build_backbone(empty, 0), ConfigError);
}

TEST(ResidualBlock, ZeroBranchPassesReluOfInput) {
    ResidualBlock<float> block(4, 4, 1);
    ASSERT_FALSE(block.projection.has_value());
    Rng rng(5);
    block.init(rng);
    block.conv_b.weight = make_parameter<float>(block.conv_b.weight.shape());
    const Tensor x = random_tensor(Shape{1, 3, 3, 4}, 6);
    Tape tape(false);
    const Tensor y = block(tape, x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], std::max(0.0f, x[i]));
}

TEST(ResidualBlock, ProjectionWhenShapeChanges) {
    EXPECT_TRUE(ResidualBlock<float>(4, 8, 1).projection.has_value());
    EXPECT_TRUE(ResidualBlock<float>(4, 4, 2).projection.has_value());
}

// --- TAFE ------------------------------------------------------------------

TEST(Tafe, IdentityProjection) {
    Tafe<float> t(3);
    set_identity(t.branch1);
    set_identity(t.branch2);
    const Tensor phi = random_tensor(Shape{1, 2, 2, 3}, 7);
    Tape tape(false);
    const auto [o1, o2] = t.branch_project(tape, phi);
    for (std::size_t i = 0; i < phi.size(); ++i) {
        EXPECT_EQ(o1[i], phi[i]);
        EXPECT_EQ(o2[i], phi[i]);
    }
}

TEST(Tafe, ZeroWeightProjectionIsBias) {
    Tafe<float> t(2);
    t.branch1.bias = Tensor(Shape{1, 1, 1, 2}, std::vector<float>{0.25f, -3.0f}, true);
    Tape tape(false);
    const auto [o1, o2] = t.branch_project(tape, random_tensor(Shape{1, 3, 3, 2}, 8));
    for (std::size_t p = 0; p < 9; ++p) {
        EXPECT_EQ(o1[p * 2], 0.25f);
        EXPECT_EQ(o1[p * 2 + 1], -3.0f);
    }
}

TEST(Tafe, ProjectionMatchesHandAffineMap) {
    Tafe<float> t(2);
    Rng rng(9);
    t.init(rng);
    t.branch1.bias = Tensor(Shape{1, 1, 1, 2}, std::vector<float>{0.1f, -0.2f}, true);
    const Tensor x(Shape{1, 1, 1, 2}, std::vector<float>{0.7f, -1.3f});
    Tape tape(false);
    const Tensor o1 = t.branch_project(tape, x).first;
    const Tensor& w = t.branch1.weight;
    for (std::size_t j = 0; j < 2; ++j) {
        const double expected = x[0] * w.at(0, 0, 0, j) + x[1] * w.at(0, 0, 1, j) + t.branch1.bias[j];
        EXPECT_NEAR(o1[j], expected, 1e-6);
    }
}

TEST(Tafe, RejectsChannelMismatch) {
    Tafe<float> t(4);
    Tape tape(false);
    EXPECT_THROW(t.branch_project(tape, Tensor(Shape{1, 2, 2, 3})), ShapeError);
}

TEST(TextureDescriptor, HandEvaluation) {
    Tafe<float> t(1);
    t.alpha = Tensor::scalar(2.0f, true);
    t.beta = Tensor::scalar(4.0f, true);
    Tape tape(false);
    const auto d = t.texture_descriptor(tape, Tensor(Shape{1, 2, 2, 1}, std::vector<float>{1, 2, 3, 4}));
    EXPECT_NEAR(d.mean[0], 2.5, 1e-6);
    EXPECT_NEAR(d.variance[0], 1.25, 1e-6);
    EXPECT_NEAR(d.fused[0], 10.0, 1e-6);
}

TEST(TextureDescriptor, ConstantMap) {
    Tafe<float> t(2);
    t.alpha = Tensor::scalar(0.75f, true);
    Tape tape(false);
    const auto d = t.texture_descriptor(tape, Tensor::filled(Shape{1, 3, 3, 2}, 1.5f));
    for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_EQ(d.mean[c], 1.5f);
        EXPECT_EQ(d.variance[c], 0.0f);
        EXPECT_FLOAT_EQ(d.fused[c], 0.75f * 1.5f);
    }
}

TEST(TextureDescriptor, BetaZeroReducesToMean) {
    Tafe<float> t(3);
    t.alpha = Tensor::scalar(1.0f, true);
    t.beta = Tensor::scalar(0.0f, true);
    Tape tape(false);
    const auto d = t.texture_descriptor(tape, random_tensor(Shape{2, 3, 2, 3}, 10));
    for (std::size_t i = 0; i < d.mean.size(); ++i) EXPECT_EQ(d.fused[i], d.mean[i]);
}

TEST(TextureDescriptor, InvariantUnderSpatialPermutation) {
    Tafe<float> t(3);
    Rng rng(11);
    t.init(rng);
    const Tensor o1 = random_tensor(Shape{1, 4, 4, 3}, 12);
    Tensor shuffled(o1.shape());
    const auto perm = counter_permutation(16, 99);
    for (std::size_t p = 0; p < 16; ++p)
        for (std::size_t c = 0; c < 3; ++c) shuffled[perm[p] * 3 + c] = o1[p * 3 + c];
    Tape tape(false);
    const auto a = t.texture_descriptor(tape, o1);
    const auto b = t.texture_descriptor(tape, shuffled);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(a.mean[c], b.mean[c], 1e-6);
        EXPECT_NEAR(a.variance[c], b.variance[c], 1e-6);
        EXPECT_NEAR(a.fused[c], b.fused[c], 1e-6);
    }
}

TEST(Tafe, OutputDoublesWidth) {
    Tafe<float> t(8);
    Rng rng(13);
    t.init(rng);
    Tape tape(false);
    EXPECT_EQ(t(tape, random_tensor(Shape{1, 4, 4, 8}, 14)).shape(), (Shape{1, 4, 4, 16}));
}

TEST(Tafe, ZeroModulationSilencesTextureBranch) {
    Tafe<float> t(3);
    Rng rng(15);
    t.init(rng);
    set_identity(t.mod_conv);
    t.alpha = Tensor::scalar(0.0f, true);
    t.beta = Tensor::scalar(0.0f, true);
    Tape tape(false);
    const Tensor y = t(tape, random_tensor(Shape{1, 3, 3, 3}, 16));
    for (std::size_t p = 0; p < 9; ++p)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y[p * 6 + c], 0.0f);
}

TEST(Tafe, BranchSeparation) {
    Tafe<float> t(3);
    Rng rng(17);
    t.init(rng);
    const Tensor phi = random_tensor(Shape{1, 3, 3, 3}, 18);
    Tape tape(false);
    const Tensor before = t(tape, phi);
    t.ctx_conv3.weight[0] += 1.0f;
    const Tensor after = t(tape, phi);
    bool context_moved = false;
    for (std::size_t p = 0; p < 9; ++p) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(after[p * 6 + c], before[p * 6 + c]);
        for (std::size_t c = 3; c < 6; ++c) context_moved = context_moved || after[p * 6 + c] != before[p * 6 + c];
    }
    EXPECT_TRUE(context_moved);
}

// --- DCIF ------------------------------------------------------------------

TEST(Dcif, ConstantInputPoolsAgree) {
    Tape tape(false);
    const Tensor v = Tensor::filled(Shape{1, 3, 3, 4}, 0.625f);
    const Tensor avg = ops::adaptive_pool(tape, ops::PoolKind::avg, v, 1, 1);
    const Tensor max = ops::adaptive_pool(tape, ops::PoolKind::max, v, 1, 1);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(avg[c], max[c]);
}

TEST(Dcif, ZeroAttentionConvHalvesInput) {
    Dcif<float> d(4, 2, 7);
    const Tensor v = random_tensor(Shape{2, 2, 2, 4}, 19);
    Tape tape(false);
    const auto a = d.dual_pool_attention(tape, v);
    for (float e : a.eta.data()) EXPECT_EQ(e, 0.5f);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(a.theta[i], v[i] / 2);
}

TEST(Dcif, GatedMagnitudeNeverExceedsInput) {
    Dcif<float> d(6, 3, 7);
    Rng rng(20);
    d.init(rng);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor v = random_tensor(Shape{2, 3, 3, 6}, 100 + s, -5.0, 5.0);
        Tape tape(false);
        const auto a = d.dual_pool_attention(tape, v);
        EXPECT_EQ(a.eta.shape(), (Shape{2, 1, 1, 6}));
        for (float e : a.eta.data()) {
            EXPECT_GT(e, 0.0f);
            EXPECT_LT(e, 1.0f);
        }
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::abs(a.theta[i]), std::abs(v[i]));
    }
}

TEST(Dcif, RejectsChannelMismatchAndBadReduction) {
    Dcif<float> d(4, 2, 7);
    Tape tape(false);
    EXPECT_THROW(d.dual_pool_attention(tape, Tensor(Shape{1, 2, 2, 3})), ShapeError);
    EXPECT_THROW(Dcif<float>(6, 4, 7), ConfigError);
    EXPECT_THROW(Dcif<float>(4, 2, 0), ConfigError);
}

TEST(GlobalContext, IdentityBottleneckReturnsPooledMean) {
    Dcif<float> d(3, 1, 7);
    d.fc1.weight = Tensor(Shape{1, 1, 3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1}, true);
    d.fc2.weight = d.fc1.weight.clone();
    const Tensor theta = random_tensor(Shape{1, 2, 2, 3}, 21, 0.0, 2.0);
    Tape tape(false);
    const Tensor k = d.global_context_encode(tape, theta);
    const Tensor kappa = ops::adaptive_pool(tape, ops::PoolKind::avg, theta, 1, 1);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(k[c], kappa[c]);
}

TEST(GlobalContext, ZeroInputGivesZero) {
    Dcif<float> d(4, 2, 7);
    Rng rng(22);
    d.init(rng);
    Tape tape(false);
    const Tensor k = d.global_context_encode(tape, Tensor(Shape{1, 2, 2, 4}));
    for (float v : k.data()) EXPECT_EQ(v, 0.0f);
}

TEST(GlobalContext, HandEvaluation) {
    Dcif<float> d(1, 1, 7);
    d.fc1.weight = Tensor(Shape{1, 1, 1, 1}, std::vector<float>{2}, true);
    d.fc2.weight = Tensor(Shape{1, 1, 1, 1}, std::vector<float>{3}, true);
    Tape tape(false);
    const Tensor theta(Shape{1, 2, 2, 1}, std::vector<float>{1, 2, 3, 4});
    EXPECT_NEAR(ops::adaptive_pool(tape, ops::PoolKind::avg, theta, 1, 1)[0], 2.5, 1e-6);
    EXPECT_NEAR(d.global_context_encode(tape, theta)[0], 15.0, 1e-6);
}

TEST(ClassifyHead, ProducesQLogits) {
    Dcif<float> d(8, 4, 7);
    Rng rng(23);
    d.init(rng);
    Tape tape(false);
    EXPECT_EQ(d.classify_head(tape, random_tensor(Shape{3, 1, 1, 8}, 24)).shape(), (Shape{3, 1, 1, 7}));
}

TEST(ClassifyHead, ZeroWeightsGiveBias) {
    Dcif<float> d(2, 1, 3);
    d.head.bias = Tensor(Shape{1, 1, 1, 3}, std::vector<float>{0.5f, -1.0f, 2.0f}, true);
    Tape tape(false);
    const Tensor logits = d.classify_head(tape, random_tensor(Shape{2, 1, 1, 2}, 25));
    for (std::size_t n = 0; n < 2; ++n) {
        EXPECT_EQ(logits[n * 3 + 0], 0.5f);
        EXPECT_EQ(logits[n * 3 + 1], -1.0f);
        EXPECT_EQ(logits[n * 3 + 2], 2.0f);
    }
}

TEST(ClassifyHead, HandMatrixProduct) {
    Dcif<float> d(2, 1, 2);
    d.head.weight = Tensor(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4}, true);
    Tape tape(false);
    const Tensor logits = d.classify_head(tape, Tensor(Shape{1, 1, 1, 2}, std::vector<float>{1, 0}));
    EXPECT_EQ(logits[0], 1.0f);
    EXPECT_EQ(logits[1], 2.0f);
}
