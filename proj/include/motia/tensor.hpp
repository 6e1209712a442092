#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <utility>

#include "common.hpp"
#include "rng.hpp"

namespace motia {

// Dense row-major tensor with optional gradient storage. Value-semantics
// wrapper over a shared node so tape closures can hold references cheaply.
template <typename T>
class Tensor {
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;        // empty until touched by backward
        bool requires_grad = false; // leaf parameter flag
        bool needs_grad = false;    // true if gradient must flow through this node
    };

public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

    static Tensor filled(Shape shape, T value) {
        validate(shape);
        Tensor t;
        t.n_ = std::make_shared<Node>();
        t.n_->shape = std::move(shape);
        t.n_->data.assign(static_cast<size_t>(motia::numel(t.n_->shape)), value);
        return t;
    }

    static Tensor from_vector(Shape shape, std::vector<T> values) {
        validate(shape);
        if (motia::numel(shape) != static_cast<int64_t>(values.size()))
            throw ShapeError("from_vector: data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.n_ = std::make_shared<Node>();
        t.n_->shape = std::move(shape);
        t.n_->data = std::move(values);
        return t;
    }

    static Tensor scalar(T value) { return filled({1}, value); }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int64_t numel() const { return static_cast<int64_t>(n_->data.size()); }

    // Tensor is a shared handle; const handles still reach the shared node,
    // mirroring shared_ptr semantics.
    T* data() const { return n_->data.data(); }
    std::span<const T> span() const { return {n_->data.data(), n_->data.size()}; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor");
        return n_->data[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool v) const {
        n_->requires_grad = v;
        n_->needs_grad = n_->needs_grad || v;
    }
    bool needs_grad() const { return n_->needs_grad; }
    void mark_needs_grad() const { n_->needs_grad = true; }

    bool has_grad() const { return !n_->grad.empty(); }
    T* grad() const {
        if (n_->grad.empty()) n_->grad.assign(n_->data.size(), T(0));
        return n_->grad.data();
    }
    const std::vector<T>& grad_vector() const { return n_->grad; }
    void zero_grad() const {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    // identity for aliasing checks and deterministic ordering in parameter maps
    const void* id() const { return n_.get(); }

    Tensor clone() const {
        Tensor t;
        t.n_ = std::make_shared<Node>(*n_);
        t.n_->requires_grad = false;
        t.n_->needs_grad = false;
        t.n_->grad.clear();
        return t;
    }

private:
    static void validate(const Shape& shape) {
        if (shape.empty()) throw ShapeError("empty shape");
        for (int64_t d : shape)
            if (d < 1) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    }
    std::shared_ptr<Node> n_;
};

// Recording tape. Ops append backward rules in execution order, so replaying
// in reverse is a valid topological sweep that touches each rule once.
template <typename T>
class GradTape {
public:
    void record(std::function<void()> backward_rule) {
        if (consumed_) throw ContractError("tape already consumed");
        entries_.push_back(std::move(backward_rule));
    }

    size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

    void backward(Tensor<T> loss) {
        if (loss.numel() != 1) throw ContractError("backward: loss must be scalar");
        if (consumed_) throw ContractError("backward: tape already consumed");
        loss.grad()[0] = T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
        entries_.clear();
        consumed_ = true;
    }

    void reset() {
        entries_.clear();
        consumed_ = false;
    }

    // Active tape for op recording; single-owner per thread by contract.
    static GradTape*& active() {
        static thread_local GradTape* cur = nullptr;
        return cur;
    }

private:
    std::vector<std::function<void()>> entries_;
    bool consumed_ = false;
};

// RAII activation of a tape for the enclosing scope.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(GradTape<T>& tape) : prev_(GradTape<T>::active()) {
        GradTape<T>::active() = &tape;
    }
    ~TapeScope() { GradTape<T>::active() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape<T>* prev_;
};

template <typename T>
void backward(GradTape<T>& tape, Tensor<T> loss) {
    tape.backward(std::move(loss));
}

// Standard-normal fill from the counter RNG; identical (shape, seed) pairs
// produce bit-identical tensors.
template <typename T>
Tensor<T> randn(Shape shape, uint64_t seed) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    RngStream stream(seed, "randn");
    T* p = t.data();
    int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(stream.normal(static_cast<uint64_t>(i)));
    return t;
}

template <typename T>
Tensor<T> randn_stream(Shape shape, const RngStream& stream) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    T* p = t.data();
    int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(stream.normal(static_cast<uint64_t>(i)));
    return t;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    check_shape(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                            shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    const T* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
}

}  // namespace motia
