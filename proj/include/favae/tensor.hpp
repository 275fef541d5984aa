#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "favae/error.hpp"

namespace favae {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One value in the define-by-run graph. Nodes are created in program order and
// carry a monotonically increasing id, so sorting the reachable set by id
// descending replays backward rules in reverse recording order.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }

    // Gradient buffer of a parent, allocated on first accumulation.
    std::span<T> grad_acc() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

std::uint64_t next_node_id();

}  // namespace detail

bool grad_enabled();

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

template <typename T>
class Tensor {
   public:
    using value_type = T;
    using NodeT = detail::Node<T>;
    using NodePtr = std::shared_ptr<NodeT>;
    using BackwardFn = std::function<void(NodeT&)>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor ones(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    // Records an op result. The node joins the graph only when recording is
    // enabled and at least one input requires grad.
    static Tensor make(Shape shape, std::vector<T> values, std::initializer_list<const Tensor*> inputs,
                       const char* op, BackwardFn backward);
    static Tensor make(Shape shape, std::vector<T> values, const std::vector<const Tensor*>& inputs,
                       const char* op, BackwardFn backward);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::int64_t dim(int axis) const;
    std::size_t rank() const { return shape().size(); }
    std::int64_t numel() const;

    std::span<const T> data() const;
    // In-place access for optimizers, initializers and EMA updates. Never call
    // on a tensor whose value has already been consumed by a recorded op.
    std::span<T> mutable_data();
    T item() const;
    T operator[](std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    void zero_grad();

    Tensor detach() const;
    Tensor clone() const;

    // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    // calls until zero_grad(); intermediate buffers are released.
    void backward() const;

    const NodePtr& node() const { return node_; }

   private:
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}
    NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace favae
