#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tkfnet/errors.hpp"

namespace tkfnet {

/// Rank-4 extent in (batch, height, width, channel) order. Vectors are
/// (n, 1, 1, c) and scalars (1, 1, 1, 1).
struct Shape {
    std::size_t n = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;

    constexpr std::size_t size() const noexcept { return n * h * w * c; }
    constexpr std::size_t spatial() const noexcept { return h * w; }
    constexpr bool is_vector() const noexcept { return h == 1 && w == 1; }
    constexpr bool is_scalar() const noexcept { return n == 1 && h == 1 && w == 1 && c == 1; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
               std::to_string(c) + ")";
    }
};

inline constexpr Shape scalar_shape{1, 1, 1, 1};

/// Dense NHWC tensor with an optional gradient buffer.
///
/// A tensor is a handle: copies share storage, so a tensor captured by a tape
/// record and the caller's copy see the same data and gradient. Use clone()
/// for an independent deep copy.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() : storage_(std::make_shared<Storage>()) {}

    explicit BasicTensor(Shape shape, bool requires_grad = false)
        : storage_(std::make_shared<Storage>()) {
        storage_->shape = shape;
        storage_->data.assign(shape.size(), T(0));
        storage_->requires_grad = requires_grad;
    }

    BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : storage_(std::make_shared<Storage>()) {
        if (values.size() != shape.size()) {
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape.str());
        }
        storage_->shape = shape;
        storage_->data = std::move(values);
        storage_->requires_grad = requires_grad;
    }

    static BasicTensor filled(Shape shape, T value, bool requires_grad = false) {
        BasicTensor t(shape, requires_grad);
        std::fill(t.storage_->data.begin(), t.storage_->data.end(), value);
        return t;
    }

    static BasicTensor scalar(T value, bool requires_grad = false) {
        return BasicTensor(scalar_shape, std::vector<T>{value}, requires_grad);
    }

    static BasicTensor vector(std::vector<T> values, bool requires_grad = false) {
        const Shape s{1, 1, 1, values.size()};
        return BasicTensor(s, std::move(values), requires_grad);
    }

    const Shape& shape() const noexcept { return storage_->shape; }
    std::size_t size() const noexcept { return storage_->data.size(); }

    std::span<T> data() noexcept { return storage_->data; }
    std::span<const T> data() const noexcept { return storage_->data; }

    T& operator[](std::size_t i) noexcept { return storage_->data[i]; }
    const T& operator[](std::size_t i) const noexcept { return storage_->data[i]; }

    std::size_t offset(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
        const Shape& s = storage_->shape;
        return ((n * s.h + h) * s.w + w) * s.c + c;
    }
    T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) noexcept {
        return storage_->data[offset(n, h, w, c)];
    }
    const T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
        return storage_->data[offset(n, h, w, c)];
    }

    T item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
        return storage_->data[0];
    }

    bool requires_grad() const noexcept { return storage_->requires_grad; }
    void set_requires_grad(bool on) noexcept { storage_->requires_grad = on; }

    /// True once a backward pass (or an explicit zero_grad) populated the buffer.
    bool has_grad() const noexcept { return !storage_->grad.empty(); }

    std::span<T> grad() noexcept { return storage_->grad; }
    std::span<const T> grad() const noexcept { return storage_->grad; }

    /// Returns the gradient buffer, allocating it as zeros on first use. The
    /// buffer belongs to the shared storage, so this is callable on a const handle.
    std::span<T> ensure_grad() const {
        if (storage_->grad.empty()) storage_->grad.assign(size(), T(0));
        return storage_->grad;
    }

    void zero_grad() { storage_->grad.assign(size(), T(0)); }
    void clear_grad() noexcept {
        storage_->grad.clear();
        storage_->grad.shrink_to_fit();
    }

    BasicTensor clone() const {
        BasicTensor out(shape(), std::vector<T>(storage_->data.begin(), storage_->data.end()));
        out.set_requires_grad(requires_grad());
        return out;
    }

    bool shares_storage(const BasicTensor& other) const noexcept {
        return storage_ == other.storage_;
    }

private:
    struct Storage {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> storage_;
};

using Tensor = BasicTensor<float>;

/// Element-converting deep copy; the result never requires grad.
template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& src) {
    std::vector<To> values(src.size());
    std::transform(src.data().begin(), src.data().end(), values.begin(),
                   [](From v) { return static_cast<To>(v); });
    return BasicTensor<To>(src.shape(), std::move(values));
}

/// Same handle when the element type already matches, otherwise tensor_cast.
template <typename To, typename From>
BasicTensor<To> tensor_cast_if_needed(const BasicTensor<From>& src) {
    if constexpr (std::is_same_v<To, From>) {
        return src;
    } else {
        return tensor_cast<To>(src);
    }
}

/// Ordered record of differentiable operations.
///
/// Ops append a backward closure when recording is on and at least one input
/// requires a gradient. backward() seeds the root with ones (the gradient of
/// sum(root)) and replays the closures in exact reverse order; every closure
/// accumulates into its inputs' gradient buffers.
template <typename T>
class BasicTape {
public:
    explicit BasicTape(bool recording = true) : recording_(recording) {}

    BasicTape(const BasicTape&) = delete;
    BasicTape& operator=(const BasicTape&) = delete;

    bool recording() const noexcept { return recording_; }
    std::size_t size() const noexcept { return records_.size(); }

    template <typename... Inputs>
    bool should_record(const Inputs&... inputs) const noexcept {
        return recording_ && (inputs.requires_grad() || ...);
    }

    void record(std::function<void()> backward) { records_.push_back(std::move(backward)); }

    void backward(BasicTensor<T> root) {
        if (!root.requires_grad()) {
            throw std::logic_error("backward() root does not depend on any tensor requiring grad");
        }
        auto g = root.ensure_grad();
        std::fill(g.begin(), g.end(), T(1));
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
        records_.clear();
    }

    void clear() noexcept { records_.clear(); }

private:
    bool recording_;
    std::vector<std::function<void()>> records_;
};

using Tape = BasicTape<float>;

}  // namespace tkfnet
