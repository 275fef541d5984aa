#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "favae/gradcheck.hpp"
#include "favae/ops.hpp"
#include "favae/spectral.hpp"

using namespace favae;
using namespace favae::spectral;
namespace o = favae::ops;
using cd = std::complex<double>;

namespace {

TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = u(rng);
    return TensorD::from(std::move(shape), std::move(v));
}

// Literal O(M^2 N^2) evaluation of the DFT sum for one plane.
std::vector<cd> naive_dft(std::span<const double> f, int m, int n) {
    std::vector<cd> out(static_cast<std::size_t>(m * n));
    for (int u = 0; u < m; ++u)
        for (int v = 0; v < n; ++v) {
            cd s = 0;
            for (int x = 0; x < m; ++x)
                for (int y = 0; y < n; ++y) {
                    const double ang = -2.0 * std::numbers::pi * (double(u) * x / m + double(v) * y / n);
                    s += f[x * n + y] * std::polar(1.0, ang);
                }
            out[u * n + v] = s;
        }
    return out;
}

// Literal focal frequency sum: (1 / (M N C)) sum w J with w = |dF|, J = |dF|^2.
double naive_ffl(const TensorD& a, const TensorD& c) {
    const int m = static_cast<int>(a.dim(-2)), n = static_cast<int>(a.dim(-1));
    const auto planes = a.numel() / (m * n);
    double total = 0;
    for (std::int64_t p = 0; p < planes; ++p) {
        auto fa = naive_dft(a.data().subspan(p * m * n, m * n), m, n);
        auto fc = naive_dft(c.data().subspan(p * m * n, m * n), m, n);
        for (int i = 0; i < m * n; ++i) {
            const double w = std::abs(fa[i] - fc[i]);
            total += w * std::norm(fa[i] - fc[i]);
        }
    }
    return total / static_cast<double>(planes * m * n);
}

}  // namespace

TEST(Dft2, ConstantImageIsDcOnly) {
    const double c = 0.75;
    auto f = dft2(TensorD::full({1, 4, 4}, c));
    EXPECT_NEAR(f.real[0], 16 * c, 1e-12);
    EXPECT_NEAR(f.imag[0], 0.0, 1e-12);
    for (int i = 1; i < 16; ++i) {
        EXPECT_NEAR(f.real[i], 0.0, 1e-12);
        EXPECT_NEAR(f.imag[i], 0.0, 1e-12);
    }
}

TEST(Dft2, CosineConcentratesOnBasisPair) {
    const int m = 8, n = 6;
    std::vector<double> v(m * n);
    for (int x = 0; x < m; ++x)
        for (int y = 0; y < n; ++y) v[x * n + y] = std::cos(2.0 * std::numbers::pi * x / m);
    auto f = dft2(TensorD::from({1, m, n}, v));
    for (int u = 0; u < m; ++u)
        for (int w = 0; w < n; ++w) {
            const double mag = std::hypot(f.real[u * n + w], f.imag[u * n + w]);
            if (w == 0 && (u == 1 || u == m - 1)) {
                EXPECT_NEAR(mag, m * n / 2.0, 1e-9);
            } else {
                EXPECT_NEAR(mag, 0.0, 1e-9);
            }
        }
}

TEST(Dft2, MatchesLiteralSumOnRandomShapes) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> side(1, 8);
    double worst = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const int m = trial == 0 ? 8 : side(rng), n = trial == 0 ? 8 : side(rng), ch = 1 + trial % 3;
        auto x = random_tensor({ch, m, n}, rng);
        auto f = dft2(x);
        for (int c = 0; c < ch; ++c) {
            auto ref = naive_dft(x.data().subspan(c * m * n, m * n), m, n);
            for (int i = 0; i < m * n; ++i) {
                worst = std::max(worst, std::abs(f.real[c * m * n + i] - ref[i].real()));
                worst = std::max(worst, std::abs(f.imag[c * m * n + i] - ref[i].imag()));
            }
        }
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(Dft2, ParsevalConjugateSymmetryLinearity) {
    std::mt19937_64 rng(12);
    for (auto [m, n] : {std::pair{8, 8}, std::pair{5, 7}, std::pair{6, 3}}) {
        auto x = random_tensor({2, m, n}, rng);
        auto y = random_tensor({2, m, n}, rng);
        auto f = dft2(x);
        double e_space = 0, e_freq = 0;
        for (auto v : x.data()) e_space += v * v;
        for (int i = 0; i < x.numel(); ++i) e_freq += f.real[i] * f.real[i] + f.imag[i] * f.imag[i];
        EXPECT_NEAR(e_space, e_freq / (m * n), 1e-9 * e_space);

        double sym = 0;
        for (int c = 0; c < 2; ++c)
            for (int u = 0; u < m; ++u)
                for (int v = 0; v < n; ++v) {
                    const int a = (c * m + u) * n + v;
                    const int b = (c * m + (m - u) % m) * n + (n - v) % n;
                    sym = std::max(sym, std::abs(f.real[a] - f.real[b]));
                    sym = std::max(sym, std::abs(f.imag[a] + f.imag[b]));
                }
        EXPECT_LT(sym, 1e-9);

        const double alpha = 0.7, beta = -1.3;
        auto lhs = dft2(o::add(o::scale(x, alpha), o::scale(y, beta)));
        auto fy = dft2(y);
        for (int i = 0; i < x.numel(); ++i) {
            const double re = alpha * f.real[i] + beta * fy.real[i];
            const double im = alpha * f.imag[i] + beta * fy.imag[i];
            EXPECT_NEAR(lhs.real[i], re, 1e-10 * std::max(1.0, std::abs(re)));
            EXPECT_NEAR(lhs.imag[i], im, 1e-10 * std::max(1.0, std::abs(im)));
        }
    }
}

TEST(Ffl, ZeroForIdenticalInputs) {
    std::mt19937_64 rng(13);
    auto x = random_tensor({2, 3, 8, 8}, rng);
    EXPECT_EQ(ffl(x, x).item(), 0.0);
}

TEST(Ffl, SinglePixelHandEvaluation) {
    auto loss = ffl(TensorD::from({1, 1, 1, 1}, {2.0}), TensorD::from({1, 1, 1, 1}, {0.0}));
    EXPECT_DOUBLE_EQ(loss.item(), 8.0);
}

TEST(Ffl, MatchesLiteralOracle) {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = random_tensor({1, 8, 8}, rng);
        auto c = random_tensor({1, 8, 8}, rng);
        const double ref = naive_ffl(a, c);
        EXPECT_NEAR(ffl(a, c).item(), ref, 1e-9 * ref);
    }
    auto a = random_tensor({2, 3, 5, 6}, rng);
    auto c = random_tensor({2, 3, 5, 6}, rng);
    EXPECT_NEAR(ffl(a, c).item(), naive_ffl(a, c), 1e-9 * naive_ffl(a, c));
}

TEST(Ffl, SymmetricNonNegativeAndShapeChecked) {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_tensor({2, 4, 4}, rng);
        auto c = random_tensor({2, 4, 4}, rng);
        const double ab = ffl(a, c).item(), ba = ffl(c, a).item();
        EXPECT_GT(ab, 0.0);
        EXPECT_NEAR(ab, ba, 1e-12 * ab);
    }
    EXPECT_THROW(ffl(TensorD::zeros({1, 4, 4}), TensorD::zeros({1, 4, 5})), DimensionError);
}

TEST(Ffl, WeightOptionsAffectGradientsOnly) {
    std::mt19937_64 rng(16);
    auto a = random_tensor({1, 4, 4}, rng);
    auto c = random_tensor({1, 4, 4}, rng);
    const double detached = ffl(a, c).item();
    const double through = ffl(a, c, {.detach_weight = false}).item();
    EXPECT_NEAR(detached, through, 1e-10 * detached);
    EXPECT_LT(gradcheck([&] { return ffl(a, c, {.detach_weight = false}); }, {a, c}), 1e-4);
    // Normalized weights never exceed one, so the loss is at most the mean power.
    const double normalized = ffl(a, c, {.normalize_weight = true}).item();
    EXPECT_LT(normalized, detached);
}

TEST(Ffl, DetachedWeightGradientIsTwiceDeltaTimesWeight) {
    // Stop-gradient w makes d(wJ)/dJ = w, a factor 2/3 of the full derivative of |dF|^3.
    std::mt19937_64 rng(17);
    auto a = random_tensor({1, 4, 4}, rng);
    auto c = random_tensor({1, 4, 4}, rng);
    a.set_requires_grad(true);
    ffl(a, c).backward();
    std::vector<double> detached(a.grad().begin(), a.grad().end());
    a.zero_grad();
    ffl(a, c, {.detach_weight = false}).backward();
    for (std::size_t i = 0; i < detached.size(); ++i) EXPECT_NEAR(detached[i], a.grad()[i] * 2.0 / 3.0, 1e-9);
}

TEST(Ffl, GradcheckOnSmallMaps) {
    std::mt19937_64 rng(18);
    for (Shape s : {Shape{1, 1, 4, 4}, Shape{2, 3, 3}, Shape{1, 2, 5, 4}}) {
        auto a = random_tensor(s, rng);
        auto c = random_tensor(s, rng);
        EXPECT_LT(gradcheck([&] { return ffl(a, c, {.detach_weight = false}); }, {a, c}), 1e-4);
    }
}

TEST(Ffl, DetachedGradientMatchesFrozenWeightFiniteDifferences) {
    std::mt19937_64 rng(27);
    for (Shape s : {Shape{1, 4, 4}, Shape{2, 3, 5}, Shape{1, 1, 6, 6}}) {
        auto a = random_tensor(s, rng);
        auto c = random_tensor(s, rng);
        const int m = static_cast<int>(a.dim(-2)), n = static_cast<int>(a.dim(-1));
        const auto planes = a.numel() / (m * n);
        auto spectra = [&](const TensorD& x) {
            std::vector<cd> out;
            for (std::int64_t p = 0; p < planes; ++p) {
                auto fa = naive_dft(x.data().subspan(p * m * n, m * n), m, n);
                auto fc = naive_dft(c.data().subspan(p * m * n, m * n), m, n);
                for (int i = 0; i < m * n; ++i) out.push_back(fa[i] - fc[i]);
            }
            return out;
        };
        std::vector<double> w0;
        for (auto d : spectra(a)) w0.push_back(std::abs(d));
        auto frozen = [&](const TensorD& x) {
            auto d = spectra(x);
            double total = 0;
            for (std::size_t i = 0; i < d.size(); ++i) total += w0[i] * std::norm(d[i]);
            return total / static_cast<double>(d.size());
        };
        a.set_requires_grad(true);
        ffl(a, c).backward();
        for (int i = 0; i < a.numel(); ++i) {
            const double h = 1e-6;
            auto up = a.detach().clone(), down = a.detach().clone();
            up.mutable_data()[i] += h;
            down.mutable_data()[i] -= h;
            const double numeric = (frozen(up) - frozen(down)) / (2 * h);
            EXPECT_NEAR(a.grad()[i], numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
        }
    }
}

TEST(GaussianKernel, NormalizedSymmetricAndRejectsEvenSize) {
    for (int size : {3, 5, 9, 11, 15}) {
        GaussianKernel<double> k(size, 3.0);
        EXPECT_NEAR(k.sigma(), 3.0, 1e-12);
        auto w = k.weights();
        double total = 0;
        for (auto v : w.data()) total += v;
        EXPECT_NEAR(total, 1.0, 1e-12);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                EXPECT_DOUBLE_EQ(w[i * size + j], w[(size - 1 - i) * size + j]);
                EXPECT_DOUBLE_EQ(w[i * size + j], w[i * size + (size - 1 - j)]);
                EXPECT_DOUBLE_EQ(w[i * size + j], w[j * size + i]);
            }
    }
    EXPECT_THROW(GaussianKernel<double>(4, 3.0), ContractError);
    EXPECT_THROW(GaussianKernel<double>(3, 0.2), ContractError);
}

TEST(GaussianKernel, WeightDerivativeInSigmaMatchesFiniteDifferences) {
    for (double sigma : {0.5, 1.3, 3.0, 10.0}) {
        GaussianKernel<double> k(5, sigma);
        const int n = 25;
        const double h = 1e-5;
        GaussianKernel<double> up(5, sigma + h), down(5, sigma - h);
        auto wu = up.weights();
        auto wd = down.weights();
        const double rho = k.rho().item();
        const double dsigma_drho = 1.0 / (1.0 + std::exp(-rho));
        for (int i = 0; i < n; ++i) {
            k.rho().zero_grad();
            std::vector<double> pick(n, 0.0);
            pick[i] = 1.0;
            o::sum(o::mul(k.weights(), TensorD::from({5, 5}, pick))).backward();
            const double analytic = k.rho().grad()[0] / dsigma_drho;
            const double numeric = (wu[i] - wd[i]) / (2 * h);
            EXPECT_NEAR(analytic, numeric, 1e-6 * std::max(std::abs(numeric), 1e-3)) << "sigma " << sigma << " i " << i;
        }
    }
}

TEST(Smooth, ConstantInputIsPreserved) {
    GaussianKernel<double> k(3, 3.0);
    auto y = smooth(TensorD::full({2, 6, 7}, -0.4), k);
    EXPECT_EQ(y.shape(), (Shape{2, 6, 7}));
    for (auto v : y.data()) EXPECT_NEAR(v, -0.4, 1e-14);
}

TEST(Smooth, SmallSigmaApproachesIdentity) {
    // With the floor lowered to 0.1, sigma = 0.2 makes the neighbour weight exp(-12.5).
    std::mt19937_64 rng(19);
    GaussianKernel<double> k(3, 0.2, 0.1);
    auto x = random_tensor({2, 8, 8}, rng);
    auto y = smooth(x, k);
    for (int i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], x[i], 1e-3);
}

TEST(Smooth, ImpulseReproducesKernel) {
    GaussianKernel<double> k(5, 1.7);
    std::vector<double> v(11 * 11, 0.0);
    v[5 * 11 + 5] = 1.0;
    auto y = smooth(TensorD::from({1, 11, 11}, v), k);
    auto w = k.weights();
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            const int di = i - 5 + 2, dj = j - 5 + 2;
            const double expect = (di >= 0 && di < 5 && dj >= 0 && dj < 5) ? w[di * 5 + dj] : 0.0;
            EXPECT_NEAR(y[i * 11 + j], expect, 1e-15);
        }
}

TEST(Smooth, PreservesMeanOfInteriorSupportedMaps) {
    std::mt19937_64 rng(20);
    for (int size : {3, 5}) {
        GaussianKernel<double> k(size, 3.0);
        const int pad = size / 2, hw = 12;
        auto x = random_tensor({2, hw, hw}, rng, 0.1, 1.0);
        auto xv = x.mutable_data();
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < hw; ++i)
                for (int j = 0; j < hw; ++j) {
                    if (i <= pad || j <= pad || i >= hw - 1 - pad || j >= hw - 1 - pad) xv[(c * hw + i) * hw + j] = 0.0;
                }
        const double before = o::mean(x).item();
        const double after = o::mean(smooth(x, k)).item();
        EXPECT_NEAR(after, before, 1e-10 * before);
    }
}

TEST(SpectrumLoss, ZeroWhenEqual) {
    std::mt19937_64 rng(21);
    auto a = random_tensor({3, 16, 16}, rng);
    for (double s : {0.5, 3.0, 8.0}) EXPECT_EQ(spectrum_loss(a, a, GaussianKernel<double>(3, s)).item(), 0.0);
}

namespace {

// cos(omega i) cos(omega j) per channel; reflect padding extends it exactly when the
// pattern is mirror-symmetric about the first and last rows.
TensorD cosine_pattern(double omega, int size) {
    std::vector<double> v(3 * size * size);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) v[(c * size + i) * size + j] = 0.5 * std::cos(omega * i) * std::cos(omega * j);
    return TensorD::from({3, size, size}, v);
}

// Separable 3-tap response to cos(omega t); the smoothed checker is the checker scaled by its square.
double tap3_response(double sigma, double omega) {
    const double r = std::exp(-1.0 / (2 * sigma * sigma));
    return (1 + 2 * r * std::cos(omega)) / (1 + 2 * r);
}

}  // namespace

TEST(SpectrumLoss, CheckerDifferenceFollowsKernelResponse) {
    // The loss scales as |H|^3 with H the 2D kernel response at the checker frequency.
    std::mt19937_64 rng(21);
    auto a = random_tensor({3, 16, 16}, rng);
    auto a4 = random_tensor({3, 17, 17}, rng);
    const double omega2 = std::numbers::pi, omega4 = std::numbers::pi / 2;
    const auto p2 = cosine_pattern(omega2, 16), p4 = cosine_pattern(omega4, 17);
    const double base2 = ffl(p2, TensorD::zeros({3, 16, 16})).item();
    const double base4 = ffl(p4, TensorD::zeros({3, 17, 17})).item();
    double previous = INFINITY;
    for (double s : {0.5, 1.0, 2.0, 4.0, 8.0}) {
        GaussianKernel<double> k(3, s);
        const double l2 = spectrum_loss(a, o::add(a, p2), k).item();
        const double l4 = spectrum_loss(a4, o::add(a4, p4), k).item();
        const double h2 = std::pow(tap3_response(s, omega2), 2), h4 = std::pow(tap3_response(s, omega4), 2);
        EXPECT_NEAR(l2, base2 * std::pow(std::abs(h2), 3), 1e-9 * base2);
        EXPECT_NEAR(l4, base4 * std::pow(std::abs(h4), 3), 1e-9 * base4);
        EXPECT_LE(l4, previous) << "sigma " << s;
        previous = l4;
    }
    // A truncated 3-tap kernel has a zero at the Nyquist frequency near sigma = 0.85, beyond
    // which the period-2 response climbs back toward the box-filter value of 1/9.
    const double at1 = spectrum_loss(a, o::add(a, p2), GaussianKernel<double>(3, 1.0)).item();
    const double at8 = spectrum_loss(a, o::add(a, p2), GaussianKernel<double>(3, 8.0)).item();
    EXPECT_GT(at8, at1);
}

TEST(SpectrumLoss, GradcheckJointlyInInputsAndSigma) {
    std::mt19937_64 rng(22);
    const FflOptions full{.detach_weight = false};
    for (Shape s : {Shape{1, 4, 4}, Shape{2, 5, 6}, Shape{1, 2, 6, 6}}) {
        auto a = random_tensor(s, rng);
        auto c = random_tensor(s, rng);
        GaussianKernel<double> k(3, 1.5);
        EXPECT_LT(gradcheck([&] { return spectrum_loss(a, c, k, full); }, {a, c, k.rho()}), 1e-4);
        GaussianKernel<double> ka(3, 0.9), kc(3, 2.5);
        EXPECT_LT(gradcheck([&] { return spectrum_loss(a, c, ka, kc, full); }, {a, c, ka.rho(), kc.rho()}), 1e-4);
    }
}

TEST(SpectrumLoss, SigmaDerivativeMatchesFiniteDifferences) {
    std::mt19937_64 rng(23);
    auto a = random_tensor({2, 8, 8}, rng);
    auto c = random_tensor({2, 8, 8}, rng);
    const FflOptions full{.detach_weight = false};
    for (double sigma : {0.5, 3.0, 10.0}) {
        GaussianKernel<double> k(5, sigma);
        const double dsigma_drho = 1.0 / (1.0 + std::exp(-k.rho().item()));
        spectrum_loss(a, c, k, full).backward();
        const double analytic = k.rho().grad()[0] / dsigma_drho;
        k.rho().zero_grad();
        spectrum_loss(a, c, k).backward();
        const double detached = k.rho().grad()[0] / dsigma_drho;
        const double h = 1e-5;
        const double up = spectrum_loss(a, c, GaussianKernel<double>(5, sigma + h)).item();
        const double down = spectrum_loss(a, c, GaussianKernel<double>(5, sigma - h)).item();
        const double numeric = (up - down) / (2 * h);
        EXPECT_NEAR(analytic, numeric, 1e-4 * std::max(1.0, std::abs(numeric))) << "sigma " << sigma;
        EXPECT_NEAR(detached, analytic * 2.0 / 3.0, 1e-12 * std::max(1.0, std::abs(analytic)));
    }
}

TEST(Dsl, EmptySingleAndAdditive) {
    std::mt19937_64 rng(24);
    SigmaBank<double> empty({}, SigmaMode::shared);
    EXPECT_EQ(dsl_total<double>({}, empty).item(), 0.0);

    auto a = random_tensor({2, 8, 8}, rng);
    SigmaBank<double> one({3}, SigmaMode::shared);
    EXPECT_EQ(dsl_total<double>({{a, a}}, one).item(), 0.0);

    auto b = random_tensor({2, 8, 8}, rng);
    auto c = random_tensor({4, 4, 4}, rng);
    auto d = random_tensor({4, 4, 4}, rng);
    for (auto mode : {SigmaMode::shared, SigmaMode::pairwise}) {
        SigmaBank<double> bank({3, 5}, mode);
        bank.kernels()[1].set_sigma(1.1);
        const double total = dsl_total<double>({{a, b}, {c, d}}, bank).item();
        const double l0 = spectrum_loss(a, b, bank.encoder_kernel(0), bank.fcm_kernel(0)).item();
        const double l1 = spectrum_loss(c, d, bank.encoder_kernel(1), bank.fcm_kernel(1)).item();
        EXPECT_NEAR(total, l0 + l1, 1e-12 * total);
    }
    EXPECT_THROW(dsl_total<double>({{a, b}}, SigmaBank<double>({3, 3}, SigmaMode::shared)), ContractError);
}

TEST(SigmaBank, CountsAndPairwiseKernelsAreDistinct) {
    SigmaBank<double> shared({3, 3, 3}, SigmaMode::shared);
    EXPECT_EQ(shared.parameters().size(), 3u);
    EXPECT_EQ(&shared.encoder_kernel(1), &shared.fcm_kernel(1));
    SigmaBank<double> pairwise({3, 3, 3}, SigmaMode::pairwise);
    EXPECT_EQ(pairwise.parameters().size(), 6u);
    EXPECT_NE(&pairwise.encoder_kernel(1), &pairwise.fcm_kernel(1));
    for (auto s : pairwise.sigmas()) EXPECT_NEAR(s, 3.0, 1e-12);
}

TEST(FreqMap, ConstantImageIsCenterDot) {
    auto map = freq_map(TensorD::full({3, 8, 8}, 0.5));
    for (int i = 0; i < 64; ++i) EXPECT_NEAR(map[i], i == 4 * 8 + 4 ? 1.0 : 0.0, 1e-12);
}

TEST(FreqMap, WhiteNoiseIsFlat) {
    std::mt19937_64 rng(25);
    std::normal_distribution<double> g;
    std::vector<double> v(3 * 32 * 32);
    for (auto& x : v) x = g(rng);
    auto map = freq_map(TensorD::from({3, 32, 32}, v));
    double m = 0, s = 0;
    for (auto x : map.data()) m += x;
    m /= map.numel();
    for (auto x : map.data()) s += (x - m) * (x - m);
    EXPECT_LT(std::sqrt(s / map.numel()), 0.25);
    auto single = freq_map(TensorD::from({3, 32, 32}, v), FreqMapMode::single_channel, 2);
    EXPECT_EQ(single.shape(), (Shape{32, 32}));
}

TEST(FreqMap, LowPassDarkensOuterAnnulus) {
    std::mt19937_64 rng(26);
    auto x = random_tensor({3, 32, 32}, rng);
    auto smoothed = smooth(x, GaussianKernel<double>(5, 1.5));
    auto outer_mean = [](const TensorD& map) {
        double s = 0;
        int n = 0;
        for (int i = 0; i < 32; ++i)
            for (int j = 0; j < 32; ++j) {
                const double r = std::hypot(i - 16.0, j - 16.0);
                if (r >= 8.0) {
                    s += map[i * 32 + j];
                    ++n;
                }
            }
        return s / n;
    };
    EXPECT_LT(outer_mean(freq_map(smoothed)), outer_mean(freq_map(x)));
}

TEST(BandEnergy, CheckerIsHighBandAndIdenticalMapsHaveZeroError) {
    std::vector<double> v(16 * 16);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) v[i * 16 + j] = (i + j) % 2 ? 1.0 : -1.0;
    auto x = TensorD::from({1, 16, 16}, v);
    auto frac = band_fraction(x);
    EXPECT_NEAR(frac[2], 1.0, 1e-12);
    auto err = band_energy_error(x, x);
    for (auto e : err) EXPECT_EQ(e, 0.0);
    EXPECT_EQ(radial_band(0, 0, 8, 8), 0);
    EXPECT_EQ(radial_band(4, 4, 8, 8), 2);
}
