#pragma once

// Dense n-dimensional tensor with reverse-mode automatic differentiation.
//
// A Tensor<T> is a shared handle to an immutable value buffer plus an
// optional gradient buffer and an optional lineage node recording the
// producing operation. backward() on a scalar walks the lineage graph in
// reverse topological order and accumulates dLoss/dLeaf into every
// reachable leaf that requires_grad; repeated calls accumulate until
// zero_grad(). T is float for training and double for gradient checking.
//
// Every reduction in this library runs in one fixed sequential order, so
// identical inputs produce bitwise identical outputs.

#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ghvit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// Thread-local switch: when off, ops do not record lineage and outputs do
// not require grad. Used for evaluation and finite-difference probes.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class Tensor;

template <typename T>
struct AutodiffNode {
    std::string op;
    std::vector<Tensor<T>> inputs;
    // Reads the output's grad buffer, accumulates into the inputs' buffers.
    std::function<void(const Tensor<T>&)> backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad{false};
    std::unique_ptr<AutodiffNode<T>> node;
};

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from_vector(std::move(shape), {}, requires_grad, true);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->data.assign(n, value);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_vector(Shape shape, std::vector<T> data,
                              bool requires_grad = false, bool fill_zero = false) {
        const std::size_t n = shape_numel(shape);
        if (fill_zero) {
            data.assign(n, T{0});
        } else if (data.size() != n) {
            throw std::invalid_argument("Tensor: data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        }
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(data);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T value) { return from_vector({}, {value}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t extent(std::size_t axis) const { return impl_->shape[axis]; }

    const std::vector<T>& values() const { return impl_->data; }

    // Direct write access; meant for leaves (parameter updates, probes).
    // Const like grad_accum(): the handle is const, the shared buffer is not.
    std::vector<T>& mutable_values() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }

    void set_requires_grad(bool rg) {
        if (impl_->node) {
            throw std::invalid_argument("set_requires_grad: only leaf tensors may be toggled");
        }
        impl_->requires_grad = rg;
    }

    bool has_grad() const { return !impl_->grad.empty(); }

    const std::vector<T>& grad() const {
        if (impl_->grad.empty()) {
            throw std::runtime_error("grad: no gradient has been accumulated");
        }
        return impl_->grad;
    }

    // Grad buffer, zero-allocated on first use.
    std::vector<T>& grad_accum() const {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T{0});
        return impl_->grad;
    }

    void zero_grad() const {
        if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T{0});
    }

    T item() const {
        if (numel() != 1) {
            throw std::invalid_argument("item: tensor has shape " + shape_str(shape()) +
                                        ", expected a single element");
        }
        return impl_->data[0];
    }

    const AutodiffNode<T>* node() const { return impl_->node.get(); }

    TensorImpl<T>* impl() const { return impl_.get(); }

    bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

    // Reverse-mode sweep from a scalar. Gradients accumulate into every
    // reachable tensor that requires grad (leaves and intermediates).
    void backward() const {
        if (!defined() || numel() != 1) {
            throw std::invalid_argument("backward: loss must be a scalar tensor, got shape " +
                                        (defined() ? shape_str(shape()) : std::string("<undefined>")));
        }
        if (!impl_->requires_grad) {
            throw std::invalid_argument("backward: loss does not require grad");
        }

        // Iterative post-order DFS over tensors that require grad.
        std::vector<Tensor<T>> order;
        std::unordered_set<const TensorImpl<T>*> visited;
        struct Frame {
            Tensor<T> t;
            std::size_t next_input;
        };
        std::vector<Frame> stack;
        stack.push_back({*this, 0});
        visited.insert(impl_.get());
        while (!stack.empty()) {
            Frame& fr = stack.back();
            const AutodiffNode<T>* n = fr.t.node();
            bool descended = false;
            while (n && fr.next_input < n->inputs.size()) {
                const Tensor<T>& in = n->inputs[fr.next_input++];
                if (in.requires_grad() && !visited.count(in.impl())) {
                    visited.insert(in.impl());
                    stack.push_back({in, 0});
                    descended = true;
                    break;
                }
            }
            if (!descended) {
                order.push_back(fr.t);
                stack.pop_back();
            }
        }

        // Each call propagates exactly one dL: op outputs start this pass
        // from zero, while leaf grads persist and accumulate across calls.
        for (const auto& t : order) {
            if (t.node() != nullptr) t.zero_grad();
        }
        grad_accum()[0] += T{1};
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const AutodiffNode<T>* n = it->node();
            if (n && n->backward) n->backward(*it);
        }
    }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

// Builds an op result: attaches lineage only when grad mode is on and some
// input requires grad.
template <typename T>
Tensor<T> make_op(std::string op, Shape out_shape, std::vector<T> out_data,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(const Tensor<T>&)> backward) {
    Tensor<T> out = Tensor<T>::from_vector(std::move(out_shape), std::move(out_data));
    bool needs_grad = false;
    if (grad_mode()) {
        for (const auto& in : inputs) {
            if (in.requires_grad()) {
                needs_grad = true;
                break;
            }
        }
    }
    if (needs_grad) {
        auto* impl = out.impl();
        impl->requires_grad = true;
        impl->node = std::make_unique<AutodiffNode<T>>();
        impl->node->op = std::move(op);
        impl->node->inputs = std::move(inputs);
        impl->node->backward = std::move(backward);
    }
    return out;
}

}  // namespace ghvit
