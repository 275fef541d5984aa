#pragma once

#include <functional>
#include <vector>

#include "favae/tensor.hpp"

namespace favae {

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
// Inputs are switched to requires_grad and their gradients are overwritten.
GradcheckReport gradcheck_report(const std::function<TensorD()>& f, std::vector<TensorD> inputs, double h = 1e-5);

double gradcheck(const std::function<TensorD()>& f, std::vector<TensorD> inputs, double h = 1e-5);
double gradcheck(const std::function<TensorD(const TensorD&)>& f, TensorD x, double h = 1e-5);

}  // namespace favae
