#include <gtest/gtest.h>

#include <vector>

#include "tkfnet/tensor.hpp"

using tkfnet::Shape;
using tkfnet::Tape;
using tkfnet::Tensor;

TEST(Shape, SizeAndPredicates) {
    const Shape s{2, 3, 4, 5};
    EXPECT_EQ(s.size(), 120u);
    EXPECT_EQ(s.spatial(), 12u);
    EXPECT_FALSE(s.is_vector());
    EXPECT_TRUE((Shape{4, 1, 1, 7}).is_vector());
    EXPECT_TRUE(tkfnet::scalar_shape.is_scalar());
    EXPECT_EQ(s.str(), "(2,3,4,5)");
}

TEST(Tensor, NhwcOffsets) {
    Tensor t(Shape{2, 2, 3, 4});
    EXPECT_EQ(t.offset(0, 0, 0, 1), 1u);
    EXPECT_EQ(t.offset(0, 0, 1, 0), 4u);
    EXPECT_EQ(t.offset(0, 1, 0, 0), 12u);
    EXPECT_EQ(t.offset(1, 0, 0, 0), 24u);
    t.at(1, 1, 2, 3) = 7.0f;
    EXPECT_EQ(t[t.size() - 1], 7.0f);
}

TEST(Tensor, RejectsMismatchedData) {
    EXPECT_THROW(Tensor(Shape{1, 2, 2, 1}, std::vector<float>{1, 2, 3}), tkfnet::ShapeError);
}

TEST(Tensor, CopiesShareStorageAndCloneDoesNot) {
    Tensor a = Tensor::vector({1, 2, 3}, true);
    Tensor b = a;
    b[0] = 10;
    EXPECT_EQ(a[0], 10);
    EXPECT_TRUE(a.shares_storage(b));

    Tensor c = a.clone();
    c[1] = -1;
    EXPECT_EQ(a[1], 2);
    EXPECT_FALSE(c.shares_storage(a));
    EXPECT_TRUE(c.requires_grad());
}

TEST(Tensor, GradBufferLifecycle) {
    Tensor t = Tensor::filled(Shape{1, 1, 1, 3}, 2.0f, true);
    EXPECT_FALSE(t.has_grad());
    auto g = t.ensure_grad();
    ASSERT_EQ(g.size(), 3u);
    g[1] = 5;
    EXPECT_EQ(t.grad()[1], 5);
    t.zero_grad();
    EXPECT_EQ(t.grad()[1], 0);
    t.clear_grad();
    EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, ItemRequiresScalar) {
    EXPECT_EQ(Tensor::scalar(3.5f).item(), 3.5f);
    EXPECT_THROW(Tensor::vector({1, 2}).item(), tkfnet::ShapeError);
}

TEST(Tensor, CastConvertsElements) {
    const Tensor f = Tensor::vector({0.5f, -2.0f}, true);
    const auto d = tkfnet::tensor_cast<double>(f);
    EXPECT_EQ(d.shape(), f.shape());
    EXPECT_DOUBLE_EQ(d[0], 0.5);
    EXPECT_DOUBLE_EQ(d[1], -2.0);
    EXPECT_FALSE(d.requires_grad());
    EXPECT_TRUE(tkfnet::tensor_cast_if_needed<float>(f).shares_storage(f));
}

TEST(Tape, ReplaysInReverseOrder) {
    Tape tape;
    std::vector<int> order;
    tape.record([&] { order.push_back(1); });
    tape.record([&] { order.push_back(2); });
    tape.record([&] { order.push_back(3); });
    tape.backward(Tensor::scalar(1.0f, true));
    EXPECT_EQ(order, (std::vector<int>{3, 2, 1}));
    EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, RecordsOnlyWhenNeeded) {
    Tape on, off(false);
    const Tensor a = Tensor::scalar(1.0f, true);
    const Tensor b = Tensor::scalar(1.0f, false);
    EXPECT_TRUE(on.should_record(a, b));
    EXPECT_FALSE(on.should_record(b));
    EXPECT_FALSE(off.should_record(a));
}

TEST(Tape, BackwardSeedsOnesAndRejectsConstantRoot) {
    Tape tape;
    Tensor root = Tensor::vector({1, 2}, true);
    tape.backward(root);
    EXPECT_EQ(root.grad()[0], 1.0f);
    EXPECT_EQ(root.grad()[1], 1.0f);
    EXPECT_THROW(tape.backward(Tensor::scalar(1.0f)), std::logic_error);
}
