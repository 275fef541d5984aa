#include "favae/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "favae/ops.hpp"

namespace favae::spectral {

namespace {

template <typename T>
struct DftBasis {
    std::vector<T> cos;
    std::vector<T> sin;
};

// cos/sin(2 pi k j / n) with the product reduced mod n before scaling.
template <typename T>
DftBasis<T> dft_basis(std::int64_t n) {
    DftBasis<T> b;
    b.cos.resize(static_cast<std::size_t>(n * n));
    b.sin.resize(static_cast<std::size_t>(n * n));
    for (std::int64_t k = 0; k < n; ++k) {
        for (std::int64_t j = 0; j < n; ++j) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
            b.cos[static_cast<std::size_t>(k * n + j)] = static_cast<T>(std::cos(angle));
            b.sin[static_cast<std::size_t>(k * n + j)] = static_cast<T>(std::sin(angle));
        }
    }
    return b;
}

template <typename T>
std::vector<double> magnitudes(const Tensor<T>& x) {
    NoGradGuard no_grad;
    auto f = dft2(x);
    auto re = f.real.data();
    auto im = f.imag.data();
    std::vector<double> mag(re.size());
    for (std::size_t i = 0; i < re.size(); ++i) mag[i] = std::hypot(static_cast<double>(re[i]), static_cast<double>(im[i]));
    return mag;
}

}  // namespace

template <typename T>
Spectrum<T> dft2(const Tensor<T>& x) {
    if (x.rank() < 2) throw DimensionError("dft2: expected x[..., M, N], got " + shape_str(x.shape()));
    const auto m = x.dim(-2), n = x.dim(-1);
    if (m < 1 || n < 1) throw DimensionError("dft2: empty plane");
    const auto bm = dft_basis<T>(m);
    const auto bn = dft_basis<T>(n);
    auto cc = ops::plane_transform<T>(x, bm.cos, m, bn.cos, n);
    auto ss = ops::plane_transform<T>(x, bm.sin, m, bn.sin, n);
    auto sc = ops::plane_transform<T>(x, bm.sin, m, bn.cos, n);
    auto cs = ops::plane_transform<T>(x, bm.cos, m, bn.sin, n);
    return {ops::sub(cc, ss), ops::neg(ops::add(sc, cs))};
}

template <typename T>
std::vector<T> center_shift(std::span<const T> plane, std::int64_t rows, std::int64_t cols) {
    std::vector<T> out(plane.size());
    for (std::int64_t u = 0; u < rows; ++u) {
        for (std::int64_t v = 0; v < cols; ++v) {
            const auto su = (u + rows / 2) % rows, sv = (v + cols / 2) % cols;
            out[static_cast<std::size_t>(su * cols + sv)] = plane[static_cast<std::size_t>(u * cols + v)];
        }
    }
    return out;
}

template <typename T>
Tensor<T> ffl(const Tensor<T>& a, const Tensor<T>& c, const FflOptions& options) {
    if (a.shape() != c.shape()) {
        throw DimensionError("ffl: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
    }
    auto f = dft2(ops::sub(a, c));
    auto power = ops::add(ops::square(f.real), ops::square(f.imag));
    const auto m = a.dim(-2), n = a.dim(-1);
    const auto plane = static_cast<std::size_t>(m * n);
    auto pd = power.data();

    std::vector<T> inv_max;
    if (options.normalize_weight) {
        inv_max.resize(pd.size());
        for (std::size_t p = 0; p < pd.size(); p += plane) {
            T mx = 0;
            for (std::size_t i = 0; i < plane; ++i) mx = std::max(mx, std::sqrt(pd[p + i]));
            const T s = mx > T(0) ? T(1) / mx : T(1);
            std::fill(inv_max.begin() + static_cast<std::ptrdiff_t>(p),
                      inv_max.begin() + static_cast<std::ptrdiff_t>(p + plane), s);
        }
    }

    if (options.detach_weight) {
        std::vector<T> w(pd.size());
        for (std::size_t i = 0; i < pd.size(); ++i) {
            w[i] = std::sqrt(pd[i]) * (inv_max.empty() ? T(1) : inv_max[i]);
        }
        return ops::mean(ops::mul(Tensor<T>::from(power.shape(), std::move(w)), power));
    }
    auto focal = ops::pow(power, T(1.5));
    if (!inv_max.empty()) focal = ops::mul(focal, Tensor<T>::from(power.shape(), std::move(inv_max)));
    return ops::mean(focal);
}

template <typename T>
GaussianKernel<T>::GaussianKernel(int size, T sigma, T sigma_min) : size_(size), sigma_min_(sigma_min) {
    if (size < 1 || size % 2 == 0) throw ContractError("GaussianKernel: size must be odd and positive");
    if (!(sigma_min > T(0))) throw ContractError("GaussianKernel: sigma_min must be positive");
    rho_ = Tensor<T>::scalar(T(0), true);
    set_sigma(sigma);
    std::vector<T> r2(static_cast<std::size_t>(size * size));
    const int mid = size / 2;
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) r2[static_cast<std::size_t>(i * size + j)] = T((i - mid) * (i - mid) + (j - mid) * (j - mid));
    }
    radius_sq_ = Tensor<T>::from({size, size}, std::move(r2));
}

template <typename T>
T GaussianKernel<T>::sigma() const {
    const T r = rho_.item();
    const T sp = r > 0 ? r + std::log1p(std::exp(-r)) : std::log1p(std::exp(r));
    return sp + sigma_min_;
}

template <typename T>
void GaussianKernel<T>::set_sigma(T sigma) {
    if (!(sigma > sigma_min_)) throw ContractError("GaussianKernel: sigma must exceed sigma_min");
    const double excess = static_cast<double>(sigma - sigma_min_);
    // softplus^-1(y) = log(expm1(y)), written to stay finite for large y.
    const double rho = excess > 30.0 ? excess + std::log1p(-std::exp(-excess)) : std::log(std::expm1(excess));
    rho_.mutable_data()[0] = static_cast<T>(rho);
}

template <typename T>
Tensor<T> GaussianKernel<T>::sigma_tensor() const {
    return ops::add_scalar(ops::softplus(rho_), sigma_min_);
}

template <typename T>
Tensor<T> GaussianKernel<T>::weights() const {
    auto s = sigma_tensor();
    auto inv = ops::div(Tensor<T>::scalar(T(-0.5)), ops::square(s));
    auto g = ops::exp(ops::mul(radius_sq_, inv));
    return ops::div(g, ops::sum(g));
}

template <typename T>
Tensor<T> smooth(const Tensor<T>& x, const GaussianKernel<T>& kernel) {
    const int pad = (kernel.size() - 1) / 2;
    return ops::depthwise_conv2d(ops::pad_reflect(x, pad), kernel.weights());
}

template <typename T>
Tensor<T> spectrum_loss(const Tensor<T>& a, const Tensor<T>& c, const GaussianKernel<T>& kernel_a,
                        const GaussianKernel<T>& kernel_c, const FflOptions& options) {
    return ffl(smooth(a, kernel_a), smooth(c, kernel_c), options);
}

template <typename T>
Tensor<T> spectrum_loss(const Tensor<T>& a, const Tensor<T>& c, const GaussianKernel<T>& kernel,
                        const FflOptions& options) {
    return spectrum_loss(a, c, kernel, kernel, options);
}

template <typename T>
SigmaBank<T>::SigmaBank(std::vector<int> kernel_sizes, SigmaMode mode, T sigma_init, T sigma_min)
    : sizes_(std::move(kernel_sizes)), mode_(mode) {
    const std::size_t per_level = mode == SigmaMode::pairwise ? 2 : 1;
    kernels_.reserve(sizes_.size() * per_level);
    for (int size : sizes_) {
        for (std::size_t k = 0; k < per_level; ++k) kernels_.emplace_back(size, sigma_init, sigma_min);
    }
}

template <typename T>
const GaussianKernel<T>& SigmaBank<T>::encoder_kernel(std::size_t level) const {
    if (level >= levels()) throw ContractError("SigmaBank: level out of range");
    return kernels_[mode_ == SigmaMode::pairwise ? 2 * level : level];
}

template <typename T>
const GaussianKernel<T>& SigmaBank<T>::fcm_kernel(std::size_t level) const {
    if (level >= levels()) throw ContractError("SigmaBank: level out of range");
    return kernels_[mode_ == SigmaMode::pairwise ? 2 * level + 1 : level];
}

template <typename T>
std::vector<Tensor<T>> SigmaBank<T>::parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& k : kernels_) out.push_back(k.rho());
    return out;
}

template <typename T>
std::vector<T> SigmaBank<T>::sigmas() const {
    std::vector<T> out;
    for (const auto& k : kernels_) out.push_back(k.sigma());
    return out;
}

template <typename T>
std::vector<Tensor<T>> dsl_terms(const std::vector<FeaturePair<T>>& pairs, const SigmaBank<T>& bank,
                                 const FflOptions& options) {
    if (pairs.size() != bank.levels()) {
        throw ContractError("dsl: " + std::to_string(pairs.size()) + " feature pairs for a bank of " +
                            std::to_string(bank.levels()) + " levels");
    }
    std::vector<Tensor<T>> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        out.push_back(
            spectrum_loss(pairs[i].first, pairs[i].second, bank.encoder_kernel(i), bank.fcm_kernel(i), options));
    }
    return out;
}

template <typename T>
Tensor<T> dsl_total(const std::vector<FeaturePair<T>>& pairs, const SigmaBank<T>& bank, const FflOptions& options) {
    auto terms = dsl_terms(pairs, bank, options);
    Tensor<T> total = Tensor<T>::scalar(T(0));
    for (const auto& t : terms) total = ops::add(total, t);
    return total;
}

template <typename T>
Tensor<T> freq_map(const Tensor<T>& x, FreqMapMode mode, int channel) {
    if (x.rank() != 2 && x.rank() != 3) throw DimensionError("freq_map: expected [C, M, N] or [M, N]");
    const auto m = x.dim(-2), n = x.dim(-1);
    const auto plane = static_cast<std::size_t>(m * n);
    const auto channels = x.numel() / (m * n);
    auto mag = magnitudes(x);
    std::vector<double> acc(plane, 0.0);
    if (mode == FreqMapMode::mean_channel) {
        for (std::int64_t c = 0; c < channels; ++c) {
            for (std::size_t i = 0; i < plane; ++i) acc[i] += std::log1p(mag[static_cast<std::size_t>(c) * plane + i]);
        }
        for (auto& v : acc) v /= static_cast<double>(channels);
    } else {
        if (channel < 0 || channel >= channels) throw ContractError("freq_map: channel out of range");
        for (std::size_t i = 0; i < plane; ++i) acc[i] = std::log1p(mag[static_cast<std::size_t>(channel) * plane + i]);
    }
    auto shifted = center_shift<double>(acc, m, n);
    const auto [lo, hi] = std::minmax_element(shifted.begin(), shifted.end());
    const double mn = *lo, range = *hi - *lo;
    std::vector<T> out(plane);
    for (std::size_t i = 0; i < plane; ++i) out[i] = range > 0 ? static_cast<T>((shifted[i] - mn) / range) : T(0);
    return Tensor<T>::from({m, n}, std::move(out));
}

int radial_band(std::int64_t u, std::int64_t v, std::int64_t rows, std::int64_t cols) {
    const double fu = static_cast<double>(std::min(u, rows - u)) / static_cast<double>(rows);
    const double fv = static_cast<double>(std::min(v, cols - v)) / static_cast<double>(cols);
    const double t = std::sqrt(fu * fu + fv * fv) / 0.5;
    return t < 1.0 / 3.0 ? 0 : (t < 2.0 / 3.0 ? 1 : 2);
}

template <typename T>
BandValues band_energy(const Tensor<T>& x) {
    const auto m = x.dim(-2), n = x.dim(-1);
    const auto planes = x.numel() / (m * n);
    auto mag = magnitudes(x);
    BandValues e{0, 0, 0};
    for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t u = 0; u < m; ++u) {
            for (std::int64_t v = 0; v < n; ++v) {
                e[static_cast<std::size_t>(radial_band(u, v, m, n))] += mag[static_cast<std::size_t>((p * m + u) * n + v)];
            }
        }
    }
    for (auto& v : e) v /= static_cast<double>(planes);
    return e;
}

template <typename T>
BandValues band_fraction(const Tensor<T>& x) {
    auto e = band_energy(x);
    const double total = e[0] + e[1] + e[2];
    for (auto& v : e) v = total > 0 ? v / total : 0.0;
    return e;
}

template <typename T>
BandValues band_energy_error(const Tensor<T>& x, const Tensor<T>& y) {
    if (x.shape() != y.shape()) throw DimensionError("band_energy_error: shape mismatch");
    const auto m = x.dim(-2), n = x.dim(-1);
    const auto planes = x.numel() / (m * n);
    auto mx = magnitudes(x);
    auto my = magnitudes(y);
    BandValues diff{0, 0, 0}, ref{0, 0, 0};
    for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t u = 0; u < m; ++u) {
            for (std::int64_t v = 0; v < n; ++v) {
                const auto i = static_cast<std::size_t>((p * m + u) * n + v);
                const auto b = static_cast<std::size_t>(radial_band(u, v, m, n));
                diff[b] += std::abs(mx[i] - my[i]);
                ref[b] += mx[i];
            }
        }
    }
    BandValues out{};
    for (std::size_t b = 0; b < 3; ++b) out[b] = ref[b] > 0 ? diff[b] / ref[b] : diff[b];
    return out;
}

#define FAVAE_INSTANTIATE_SPECTRAL(T)                                                                        \
    template struct Spectrum<T>;                                                                             \
    template Spectrum<T> dft2(const Tensor<T>&);                                                             \
    template std::vector<T> center_shift(std::span<const T>, std::int64_t, std::int64_t);                   \
    template Tensor<T> ffl(const Tensor<T>&, const Tensor<T>&, const FflOptions&);                         \
    template class GaussianKernel<T>;                                                                        \
    template Tensor<T> smooth(const Tensor<T>&, const GaussianKernel<T>&);                                  \
    template Tensor<T> spectrum_loss(const Tensor<T>&, const Tensor<T>&, const GaussianKernel<T>&,          \
                                     const GaussianKernel<T>&, const FflOptions&);                          \
    template Tensor<T> spectrum_loss(const Tensor<T>&, const Tensor<T>&, const GaussianKernel<T>&,          \
                                     const FflOptions&);                                                     \
    template class SigmaBank<T>;                                                                             \
    template std::vector<Tensor<T>> dsl_terms(const std::vector<FeaturePair<T>>&, const SigmaBank<T>&,     \
                                              const FflOptions&);                                            \
    template Tensor<T> dsl_total(const std::vector<FeaturePair<T>>&, const SigmaBank<T>&, const FflOptions&); \
    template Tensor<T> freq_map(const Tensor<T>&, FreqMapMode, int);                                        \
    template BandValues band_energy(const Tensor<T>&);                                                       \
    template BandValues band_fraction(const Tensor<T>&);                                                     \
    template BandValues band_energy_error(const Tensor<T>&, const Tensor<T>&);

FAVAE_INSTANTIATE_SPECTRAL(float)
FAVAE_INSTANTIATE_SPECTRAL(double)

}  // namespace favae::spectral
