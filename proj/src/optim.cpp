#include "favae/optim.hpp"

#include <cmath>

namespace favae {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        if (!p.defined() || !p.is_leaf()) throw ContractError("Adam: parameters must be defined leaf tensors");
        m_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
        v_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    }
}

template <typename T>
void Adam<T>::step() {
    for (const auto& p : params_) {
        if (!p.requires_grad() || !p.has_grad()) throw ContractError("Adam::step: parameter without gradient");
    }
    ++step_;
    const T b1 = static_cast<T>(options_.beta1);
    const T b2 = static_cast<T>(options_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(options_.beta1, static_cast<double>(step_)));
    const T c2 = static_cast<T>(1.0 - std::pow(options_.beta2, static_cast<double>(step_)));
    const T lr = static_cast<T>(options_.lr);
    const T eps = static_cast<T>(options_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mh = m[i] / c1;
            const T vh = v[i] / c2;
            w[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace favae
