#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mate/error.hpp"
#include "mate/rng.hpp"

namespace mate {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Dense row-major array with optional participation in reverse-mode
/// differentiation. Copies share storage; op outputs are never mutated by
/// the library after construction. Scalars have shape {1}.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) : node_(std::make_shared<detail::Node<T>>()) {
        if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
        for (std::size_t e : shape)
            if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                                 shape_string(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

    static Tensor filled(Shape shape, T value) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        const std::size_t n = shape_numel(shape);
        std::vector<T> v(n);
        for (auto& x : v) x = static_cast<T>(rng.normal()) * stddev;
        return Tensor(std::move(shape), std::move(v));
    }

    static Tensor randn(Shape shape, std::uint64_t seed, T stddev = T(1)) {
        Rng rng(seed);
        return randn(std::move(shape), rng, stddev);
    }

    static Tensor from_node(NodePtr node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const noexcept { return node_ != nullptr; }

    const Shape& shape() const { return node().shape; }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t dim(std::size_t i) const { return node().shape.at(i); }
    std::size_t numel() const { return node().data.size(); }
    std::size_t rows() const { return rank() == 2 ? dim(0) : throw DimensionError("rows() needs a 2-D tensor"); }
    std::size_t cols() const { return rank() == 2 ? dim(1) : throw DimensionError("cols() needs a 2-D tensor"); }

    std::span<const T> data() const { return node().data; }
    // Mutable access is for leaves (parameters, optimizer updates, test setup).
    std::span<T> mutable_data() { return node().data; }

    T at(std::size_t i) const { return node().data.at(i); }
    T at(std::size_t r, std::size_t c) const { return node().data.at(r * cols() + c); }

    T item() const {
        if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
        return node().data[0];
    }

    bool requires_grad() const { return node().requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node().requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !node().grad.empty(); }
    std::span<const T> grad() const { return node().grad; }
    std::span<T> mutable_grad() { return node().ensure_grad(); }
    void zero_grad() { node().grad.clear(); }

    // Same values, fresh storage, no gradient history.
    Tensor detach() const { return Tensor(shape(), std::vector<T>(data().begin(), data().end())); }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape(), std::vector<U>(data().begin(), data().end()));
    }

    const NodePtr& node_ptr() const noexcept { return node_; }

private:
    detail::Node<T>& node() const {
        if (!node_) throw ContractError("use of an undefined tensor");
        return *node_;
    }

    NodePtr node_;
};

/// Define-by-run gradient tape. Constructing a tape makes it the current
/// tape of the calling thread until it is destroyed; ops whose inputs
/// require gradients append a backward record to the current tape.
template <typename T>
class GradTape {
public:
    GradTape() : previous_(current_) { current_ = this; }
    ~GradTape() { current_ = previous_; }

    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* current() noexcept { return current_; }

    void record(std::function<void()> backward_fn) { records_.push_back(std::move(backward_fn)); }

    std::size_t size() const noexcept { return records_.size(); }

    void clear() { records_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and replays records newest-first. The tape is
    // empty afterwards.
    void backward(const Tensor<T>& loss) {
        if (!loss.defined() || loss.numel() != 1)
            throw ContractError("backward() needs a scalar loss, got shape " +
                                (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
        if (!loss.requires_grad()) throw ContractError("backward() on a loss that is not connected to the tape");
        auto& g = loss.node_ptr()->ensure_grad();
        g[0] += T(1);
        auto records = std::move(records_);
        records_.clear();
        for (auto it = records.rbegin(); it != records.rend(); ++it) (*it)();
    }

private:
    static inline thread_local GradTape* current_ = nullptr;

    std::vector<std::function<void()>> records_;
    GradTape* previous_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
    GradTape<T>* tape = GradTape<T>::current();
    if (tape == nullptr) throw ContractError("backward() without an active GradTape");
    tape->backward(loss);
}

}  // namespace mate
