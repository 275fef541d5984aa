#include "favae/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace favae {

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {
std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}
}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("Tensor::from: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<NodeT>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->id = detail::next_node_id();
    Tensor t(std::move(node));
    t.set_requires_grad(requires_grad);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = numel_of(shape);
    return from(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::ones(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(1), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::make(Shape shape, std::vector<T> values, std::initializer_list<const Tensor*> inputs,
                          const char* op, BackwardFn backward) {
    return make(std::move(shape), std::move(values), std::vector<const Tensor*>(inputs), op,
                std::move(backward));
}

template <typename T>
Tensor<T> Tensor<T>::make(Shape shape, std::vector<T> values, const std::vector<const Tensor*>& inputs,
                          const char* op, BackwardFn backward) {
    auto node = std::make_shared<NodeT>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->id = detail::next_node_id();
    node->op = op;
    if (grad_enabled()) {
        bool any = false;
        for (const Tensor* in : inputs) any = any || (in->defined() && in->requires_grad());
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (const Tensor* in : inputs) node->parents.push_back(in->node_);
            node->backward = std::move(backward);
        }
    }
    return Tensor(std::move(node));
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->shape;
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
    const auto& s = shape();
    const int r = static_cast<int>(s.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[static_cast<std::size_t>(a)];
}

template <typename T>
std::int64_t Tensor<T>::numel() const {
    return static_cast<std::int64_t>(node_ ? node_->data.size() : 0);
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    if (!node_) throw ContractError("use of undefined tensor");
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = on;
    if (on) {
        node_->grad.assign(node_->data.size(), T(0));
    } else {
        node_->grad.clear();
    }
    return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
    return !node_ || node_->is_leaf();
}

template <typename T>
bool Tensor<T>::has_grad() const {
    return node_ && node_->grad.size() == node_->data.size() && !node_->data.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient buffer");
    return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
    if (!has_grad()) throw ContractError("tensor has no gradient buffer");
    return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return from(shape(), node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return from(shape(), node_->data, requires_grad() && is_leaf());
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) throw ContractError("backward: loss must be a scalar, got shape " + shape_str(shape()));
    if (!requires_grad()) throw ContractError("backward: loss is not attached to any tensor requiring grad");

    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<NodeT*> stack{node_.get()};
    while (!stack.empty()) {
        NodeT* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && !seen.count(p.get())) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const NodeT* a, const NodeT* b) { return a->id > b->id; });

    node_->grad_acc()[0] += T(1);
    for (NodeT* n : order) {
        if (n->is_leaf()) continue;
        n->grad_acc();
        n->backward(*n);
        n->grad.clear();
        n->grad.shrink_to_fit();
    }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace favae
