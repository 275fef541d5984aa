#include "favae/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace favae {

GradcheckReport gradcheck_report(const std::function<TensorD()>& f, std::vector<TensorD> inputs, double h) {
    for (auto& x : inputs) {
        if (!x.requires_grad()) x.set_requires_grad(true);
        x.zero_grad();
    }
    f().backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

    GradcheckReport report;
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto values = inputs[k].mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = f().item();
            values[i] = saved - h;
            const double down = f().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            if (!(err <= report.max_rel_error)) {
                report.max_rel_error = std::isnan(err) ? INFINITY : err;
                report.worst_input = k;
                report.worst_index = i;
            }
        }
    }
    for (auto& x : inputs) x.zero_grad();
    return report;
}

double gradcheck(const std::function<TensorD()>& f, std::vector<TensorD> inputs, double h) {
    return gradcheck_report(f, std::move(inputs), h).max_rel_error;
}

double gradcheck(const std::function<TensorD(const TensorD&)>& f, TensorD x, double h) {
    return gradcheck([&] { return f(x); }, {x}, h);
}

}  // namespace favae
