#pragma once

#include <array>
#include <utility>
#include <vector>

#include "favae/tensor.hpp"

namespace favae::spectral {

// Complex 2D spectrum with F(0,0) (DC) at index (0,0).
template <typename T>
struct Spectrum {
    Tensor<T> real;
    Tensor<T> imag;
};

// Unnormalized forward DFT of every plane of x[..., M, N]:
//   F(u,v) = sum_x sum_y f(x,y) exp(-i 2 pi (ux/M + vy/N))
// evaluated directly as C f C - S f S (real) and -(S f C + C f S) (imag).
template <typename T>
Spectrum<T> dft2(const Tensor<T>& x);

// Moves DC to the centre of each plane (index (M/2, N/2)). Visualization only.
template <typename T>
std::vector<T> center_shift(std::span<const T> plane, std::int64_t rows, std::int64_t cols);

struct FflOptions {
    // Treat w(u,v) = |dF| as a constant modulating factor.
    bool detach_weight = true;
    // Rescale w per plane so its maximum is 1; the maximum is treated as a constant.
    bool normalize_weight = false;
};

// Focal frequency loss: mean over planes and frequencies of w(u,v) * |dF(u,v)|^2
// with w = |dF|, dF = DFT(a) - DFT(c). Inputs of identical shape [..., M, N].
template <typename T>
Tensor<T> ffl(const Tensor<T>& a, const Tensor<T>& c, const FflOptions& options = {});

// Square low-pass kernel of odd side whose standard deviation is learned through
// sigma = softplus(rho) + sigma_min.
template <typename T>
class GaussianKernel {
   public:
    static constexpr double kDefaultSigmaMin = 0.3;

    GaussianKernel(int size, T sigma, T sigma_min = T(kDefaultSigmaMin));

    int size() const { return size_; }
    T sigma_min() const { return sigma_min_; }
    T sigma() const;
    void set_sigma(T sigma);

    // The unconstrained parameter optimized in place of sigma.
    Tensor<T>& rho() { return rho_; }
    const Tensor<T>& rho() const { return rho_; }

    Tensor<T> sigma_tensor() const;
    // size x size weights, normalized to sum to 1, differentiable w.r.t. rho.
    Tensor<T> weights() const;

   private:
    int size_;
    T sigma_min_;
    Tensor<T> rho_;
    Tensor<T> radius_sq_;
};

// Gaussian smoothing of every plane of x[..., M, N] with reflect padding; output
// has the input's shape.
template <typename T>
Tensor<T> smooth(const Tensor<T>& x, const GaussianKernel<T>& kernel);

// FFL of the two smoothed maps. Distinct kernels per side give pairwise sigma.
template <typename T>
Tensor<T> spectrum_loss(const Tensor<T>& a, const Tensor<T>& c, const GaussianKernel<T>& kernel_a,
                        const GaussianKernel<T>& kernel_c, const FflOptions& options = {});
template <typename T>
Tensor<T> spectrum_loss(const Tensor<T>& a, const Tensor<T>& c, const GaussianKernel<T>& kernel,
                        const FflOptions& options = {});

enum class SigmaMode { shared, pairwise };

// Per-level sigma parameters. In shared mode a level's encoder map and FCM map
// are smoothed by one kernel; pairwise mode keeps one kernel per side.
template <typename T>
class SigmaBank {
   public:
    SigmaBank() = default;
    SigmaBank(std::vector<int> kernel_sizes, SigmaMode mode, T sigma_init = T(3),
              T sigma_min = T(GaussianKernel<T>::kDefaultSigmaMin));

    std::size_t levels() const { return sizes_.size(); }
    SigmaMode mode() const { return mode_; }
    const GaussianKernel<T>& encoder_kernel(std::size_t level) const;
    const GaussianKernel<T>& fcm_kernel(std::size_t level) const;

    std::vector<GaussianKernel<T>>& kernels() { return kernels_; }
    const std::vector<GaussianKernel<T>>& kernels() const { return kernels_; }
    std::vector<Tensor<T>> parameters() const;
    std::vector<T> sigmas() const;

   private:
    std::vector<int> sizes_;
    SigmaMode mode_ = SigmaMode::shared;
    std::vector<GaussianKernel<T>> kernels_;
};

template <typename T>
using FeaturePair = std::pair<Tensor<T>, Tensor<T>>;

// Spectrum loss per level, pairing encoder map a_i with FCM map c_i.
template <typename T>
std::vector<Tensor<T>> dsl_terms(const std::vector<FeaturePair<T>>& pairs, const SigmaBank<T>& bank,
                                 const FflOptions& options = {});
template <typename T>
Tensor<T> dsl_total(const std::vector<FeaturePair<T>>& pairs, const SigmaBank<T>& bank,
                    const FflOptions& options = {});

enum class FreqMapMode { mean_channel, single_channel };

// Centre-shifted log(1 + |F|) of x[C, M, N] (or [M, N]), averaged over channels
// or taken from one channel, min-max normalized to [0, 1]. Not differentiable.
template <typename T>
Tensor<T> freq_map(const Tensor<T>& x, FreqMapMode mode = FreqMapMode::mean_channel, int channel = 0);

// Sum of |F| per radial band for x[C, M, N], averaged over channels. Bands are
// thirds of the radius up to the axis Nyquist frequency of 0.5 cycles/sample;
// the corners beyond it belong to the high band.
using BandValues = std::array<double, 3>;

template <typename T>
BandValues band_energy(const Tensor<T>& x);
template <typename T>
BandValues band_fraction(const Tensor<T>& x);
// Per band: sum over the band of ||F_x| - |F_y|| divided by the band energy of x.
template <typename T>
BandValues band_energy_error(const Tensor<T>& x, const Tensor<T>& y);
int radial_band(std::int64_t u, std::int64_t v, std::int64_t rows, std::int64_t cols);

}  // namespace favae::spectral
