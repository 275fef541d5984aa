#pragma once

#include <cstdint>
#include <vector>

#include "favae/tensor.hpp"

namespace favae {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Gradients are read, never cleared.
template <typename T>
class Adam {
   public:
    Adam(std::vector<Tensor<T>> params, AdamOptions options);

    void step();
    void zero_grad();

    std::uint64_t step_count() const { return step_; }
    void set_step_count(std::uint64_t step) { step_ = step; }
    const AdamOptions& options() const { return options_; }
    void set_lr(double lr) { options_.lr = lr; }

    const std::vector<Tensor<T>>& params() const { return params_; }
    std::vector<T>& first_moment(std::size_t i) { return m_[i]; }
    std::vector<T>& second_moment(std::size_t i) { return v_[i]; }
    const std::vector<T>& first_moment(std::size_t i) const { return m_[i]; }
    const std::vector<T>& second_moment(std::size_t i) const { return v_[i]; }

   private:
    std::vector<Tensor<T>> params_;
    AdamOptions options_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    std::uint64_t step_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace favae
