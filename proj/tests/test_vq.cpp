#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "favae/gradcheck.hpp"
#include "favae/ops.hpp"
#include "favae/vq.hpp"

using namespace favae;
using namespace favae::vq;
namespace o = favae::ops;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

// Exhaustive scan written independently of the library: normalize, then compare
// squared distances with strict < so the lowest index wins ties.
std::vector<std::int32_t> argmin_oracle(const std::vector<double>& z, const std::vector<double>& entries, int d, bool norm) {
    auto unit = [&](std::vector<double> v) {
        if (!norm) return v;
        double s = 0;
        for (auto x : v) s += x * x;
        s = std::sqrt(s);
        for (auto& x : v) x /= s;
        return v;
    };
    const int k = static_cast<int>(entries.size()) / d;
    std::vector<std::vector<double>> e;
    for (int i = 0; i < k; ++i) e.push_back(unit({entries.begin() + i * d, entries.begin() + (i + 1) * d}));
    std::vector<std::int32_t> out;
    for (std::size_t n = 0; n < z.size() / d; ++n) {
        auto q = unit({z.begin() + n * d, z.begin() + (n + 1) * d});
        int best = -1;
        double best_d = 0;
        for (int i = 0; i < k; ++i) {
            double dist = 0;
            for (int j = 0; j < d; ++j) dist += (q[j] - e[i][j]) * (q[j] - e[i][j]);
            if (best < 0 || dist < best_d) {
                best = i;
                best_d = dist;
            }
        }
        out.push_back(best);
    }
    return out;
}

CodebookOptions opts(int size, int dim, bool l2 = true) {
    CodebookOptions o;
    o.size = size;
    o.dim = dim;
    o.l2_normalize = l2;
    o.dead_after = 0;
    return o;
}

}  // namespace

TEST(Quantize, ExactEntryMapsToItself) {
    Codebook<double> cb(opts(16, 4), 3);
    std::vector<double> z(cb.entry(7).begin(), cb.entry(7).end());
    auto q = quantize(TensorD::from({1, 4}, z), cb);
    EXPECT_EQ(q.indices[0], 7);
    for (int j = 0; j < 4; ++j) EXPECT_EQ(q.zq[j], cb.entry(7)[j]);
}

TEST(Quantize, TwoEntryHandCase) {
    Codebook<double> cb(opts(2, 2, false), TensorD::from({2, 2}, {0, 0, 1, 1}));
    EXPECT_EQ(quantize(TensorD::from({1, 2}, {0.9, 0.9}), cb).indices[0], 1);
    EXPECT_EQ(quantize(TensorD::from({1, 2}, {0.4, 0.4}), cb).indices[0], 0);
}

TEST(Quantize, TiesGoToLowestIndex) {
    Codebook<double> cb(opts(3, 2, false), TensorD::from({3, 2}, {1, 0, -1, 0, 1, 0}));
    EXPECT_EQ(quantize(TensorD::from({1, 2}, {0, 1}), cb).indices[0], 0);
    EXPECT_EQ(quantize(TensorD::from({1, 2}, {1, 0}), cb).indices[0], 0);
}

TEST(Quantize, MatchesBruteForceOracle) {
    std::mt19937_64 rng(31);
    for (bool l2 : {true, false}) {
        auto entries = random_values(16 * 8, rng);
        Codebook<double> cb(opts(16, 8, l2), TensorD::from({16, 8}, entries));
        auto z = random_values(2 * 4 * 4 * 8, rng);
        auto q = quantize(TensorD::from({2, 4, 4, 8}, z), cb);
        EXPECT_EQ(q.indices, argmin_oracle(z, entries, 8, l2));
        EXPECT_EQ(q.zq.shape(), (Shape{2, 4, 4, 8}));
    }
}

TEST(Quantize, LargeScanMatchesOracleExactly) {
    std::mt19937_64 rng(32);
    auto entries = random_values(64 * 16, rng);
    Codebook<double> cb(opts(64, 16), TensorD::from({64, 16}, entries));
    auto z = random_values(10000 * 16, rng);
    EXPECT_EQ(nearest<double>(z, cb), argmin_oracle(z, entries, 16, true));
}

TEST(Quantize, ScaleInvariantUnderNormalization) {
    std::mt19937_64 rng(33);
    Codebook<double> cb(opts(32, 6), 5);
    auto z = random_values(100 * 6, rng);
    auto base = nearest<double>(z, cb);
    for (double s : {1e-3, 0.5, 7.0, 1e4}) {
        auto scaled = z;
        for (auto& v : scaled) v *= s;
        EXPECT_EQ(nearest<double>(scaled, cb), base);
    }
}

TEST(Quantize, RejectsBadInputs) {
    CodebookOptions empty = opts(0, 4);
    EXPECT_THROW(Codebook<double>(empty, 1), ContractError);
    Codebook<double> cb(opts(4, 4), 1);
    EXPECT_THROW(quantize(TensorD::zeros({2, 3}), cb), DimensionError);
}

TEST(Quantize, StraightThroughIsIdentityAndEntriesGetNoGradient) {
    std::mt19937_64 rng(34);
    Codebook<double> cb(opts(8, 4), 2);
    cb.entries().set_requires_grad(true);
    auto z = TensorD::from({3, 4}, random_values(12, rng), true);
    auto w = TensorD::from({3, 4}, random_values(12, rng));
    auto q = quantize(z, cb);
    auto loss = o::add(o::sum(o::mul(q.zq, w)), quantization_loss(z, q.codes));
    loss.backward();
    // Identity path: d/dz sum(w * z) + commitment gradient.
    for (int i = 0; i < 12; ++i) {
        const double commit = 0.25 * 2.0 * (z[i] - q.codes[i]) / 12.0;
        EXPECT_NEAR(z.grad()[i], w[i] + commit, 1e-14);
    }
    for (auto g : cb.entries().grad()) EXPECT_EQ(g, 0.0);
}

TEST(QuantizationLoss, HandValuesAndGradcheck) {
    auto z = TensorD::from({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(quantization_loss(z, z.detach()).item(), 0.0);
    auto zq = TensorD::from({2, 2}, {3, 0, 5, 2});
    EXPECT_DOUBLE_EQ(quantization_loss(z, zq).item(), 1.0);

    std::mt19937_64 rng(35);
    Codebook<double> cb(opts(16, 4), 9);
    for (Shape s : {Shape{3, 4}, Shape{2, 2, 3, 4}, Shape{1, 5, 4}}) {
        auto x = TensorD::from(s, random_values(static_cast<std::size_t>(numel_of(s)), rng));
        EXPECT_LT(gradcheck([&] { return quantization_loss(x, quantize(x, cb).codes); }, {x}), 1e-4);
    }
}

TEST(QuantizationLoss, GradientCodebookModeTrainsEntries) {
    std::mt19937_64 rng(36);
    auto o2 = opts(8, 4);
    o2.ema = false;
    Codebook<double> cb(o2, 4);
    EXPECT_TRUE(cb.entries().requires_grad());
    auto z = TensorD::from({5, 4}, random_values(20, rng), true);
    auto q = quantize(z, cb);
    quantization_loss(z, q.codes).backward();
    auto e = cb.entries().grad();
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) {
            const double commit = 0.25 * 2.0 * (z[i * 4 + j] - q.codes[i * 4 + j]) / 20.0;
            EXPECT_NEAR(z.grad()[i * 4 + j], commit, 1e-14);
        }
    double total = 0;
    for (auto g : e) total += std::abs(g);
    EXPECT_GT(total, 0.0);
}

TEST(Ema, GammaZeroGivesBatchMean) {
    auto o0 = opts(3, 2, false);
    o0.decay = 0.0;
    Codebook<double> cb(o0, 7);
    std::vector<double> z = {1, 2, 3, 4, 5, 6, -1, -1};
    std::vector<std::int32_t> idx = {0, 0, 0, 2};
    cb.ema_update(z, idx);
    const double c0 = 3.0 / (3.0 + o0.eps);
    EXPECT_DOUBLE_EQ(cb.entry(0)[0], 3.0 * c0);
    EXPECT_DOUBLE_EQ(cb.entry(0)[1], 4.0 * c0);
    EXPECT_NEAR(cb.entry(0)[0], 3.0, 3.0 * o0.eps / 3.0 + 1e-15);
    EXPECT_NEAR(cb.entry(2)[0], -1.0, o0.eps);
}

TEST(Ema, UnassignedEntryKeepsDirection) {
    Codebook<double> cb(opts(4, 3), 8);
    std::vector<double> before(cb.entry(3).begin(), cb.entry(3).end());
    std::vector<double> z = {1, 0, 0, 0, 1, 0};
    cb.ema_update(z, std::vector<std::int32_t>{0, 1});
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(cb.entry(3)[j], before[j], 1e-12);
    EXPECT_LT(cb.cluster_size()[3], 1.0);
    EXPECT_EQ(cb.unused_steps()[3], 1u);
}

TEST(Ema, FixedPointConvergesToClusterMeans) {
    // Closed form under a stationary assignment of n vectors with mean m:
    //   size_t = g^t + (1 - g^t) n,  sum_t = g^t e0 + (1 - g^t) n m.
    for (double offset : {0.0, 3.0}) {
        std::mt19937_64 rng(37);
        Codebook<double> cb(opts(4, 3, false), 9);
        const int per = 32;
        const double g = cb.options().decay, eps = cb.options().eps;
        std::vector<std::vector<double>> init, means(4, std::vector<double>(3, 0.0));
        for (int k = 0; k < 4; ++k) init.emplace_back(cb.entry(k).begin(), cb.entry(k).end());
        std::vector<double> z;
        std::vector<std::int32_t> idx;
        for (int k = 0; k < 4; ++k)
            for (int n = 0; n < per; ++n) {
                auto v = random_values(3, rng);
                for (int j = 0; j < 3; ++j) {
                    v[j] += offset * k;
                    means[k][j] += v[j] / per;
                }
                z.insert(z.end(), v.begin(), v.end());
                idx.push_back(k);
            }
        for (int step = 1; step <= 1000; ++step) {
            cb.ema_update(z, idx);
            if (step != 500 && step != 1000) continue;
            const double gt = std::pow(g, step);
            double err = 0;
            for (int k = 0; k < 4; ++k) {
                auto e = cb.unnormalized_entry(k);
                for (int j = 0; j < 3; ++j) {
                    const double predicted = (gt * init[k][j] + (1 - gt) * per * means[k][j]) / (gt + (1 - gt) * per + eps);
                    EXPECT_NEAR(e[j], predicted, 1e-9 * std::max(1.0, std::abs(predicted)));
                    err = std::max(err, std::abs(e[j] - means[k][j]));
                }
            }
            if (step == 1000 || offset == 0.0) EXPECT_LT(err, 1e-3) << "step " << step << " offset " << offset;
        }
    }
}

TEST(Ema, NormalizedEntriesStayUnitAndCountsNonNegative) {
    std::mt19937_64 rng(38);
    Codebook<double> cb(opts(16, 5), 10);
    for (int step = 0; step < 50; ++step) {
        auto z = random_values(40 * 5, rng);
        cb.ema_update(z, nearest<double>(z, cb));
        for (int k = 0; k < 16; ++k) {
            double n = 0;
            for (auto v : cb.entry(k)) n += v * v;
            EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
            EXPECT_GE(cb.cluster_size()[k], 0.0);
        }
    }
}

TEST(Ema, DeadEntriesAreReseededFromBatch) {
    auto od = opts(3, 2, false);
    od.dead_after = 4;
    Codebook<double> cb(od, TensorD::from({3, 2}, {0, 0, 1, 1, 100, 100}));
    std::vector<double> z = {0.1, 0.1, 0.9, 0.9};
    std::vector<std::int32_t> idx = {0, 1};
    for (int step = 0; step < 3; ++step) cb.ema_update(z, idx, step);
    EXPECT_NEAR(cb.entry(2)[0], 100.0, 1.0);
    cb.ema_update(z, idx, 3);
    const double e0 = cb.entry(2)[0], e1 = cb.entry(2)[1];
    EXPECT_TRUE((e0 == 0.1 && e1 == 0.1) || (e0 == 0.9 && e1 == 0.9));
    EXPECT_EQ(cb.unused_steps()[2], 0u);
    EXPECT_EQ(cb.usage()[0], 4u);
}

TEST(Codebook, CopiesAreIndependent) {
    Codebook<double> a(opts(4, 2), 1);
    Codebook<double> b = a;
    b.ema_update(std::vector<double>{1, 0}, std::vector<std::int32_t>{0});
    EXPECT_NE(a.entry(0)[0], b.entry(0)[0]);
}

TEST(Codebook, BlobRoundTrip) {
    std::mt19937_64 rng(39);
    auto ob = opts(8, 3);
    ob.dead_after = 256;
    Codebook<float> cb(ob, 11);
    std::vector<float> z(30);
    for (auto& v : z) v = static_cast<float>(random_values(1, rng)[0]);
    cb.ema_update(z, nearest<float>(z, cb), 1);
    std::stringstream first;
    cb.save(first);
    auto loaded = Codebook<float>::load(first);
    std::stringstream second;
    loaded.save(second);
    EXPECT_EQ(first.str(), second.str());
    EXPECT_EQ(first.str().substr(0, 4), "FVQ1");
    for (int k = 0; k < 8; ++k)
        for (int j = 0; j < 3; ++j) EXPECT_EQ(cb.entry(k)[j], loaded.entry(k)[j]);
    std::stringstream bad("NOPE0000");
    EXPECT_THROW(Codebook<float>::load(bad), IoError);
    std::stringstream truncated(first.str().substr(0, 20));
    EXPECT_THROW(Codebook<float>::load(truncated), IoError);
}

TEST(Perplexity, HandValues) {
    std::vector<std::int32_t> one(10, 3);
    EXPECT_DOUBLE_EQ(perplexity(one, 16), 1.0);
    std::vector<std::int32_t> uniform(16);
    for (int i = 0; i < 16; ++i) uniform[i] = i;
    EXPECT_NEAR(perplexity(uniform, 16), 16.0, 1e-12);
    // Entropy of {0,0,1,1}: -2 * 0.5 ln 0.5 = ln 2.
    EXPECT_NEAR(perplexity(std::vector<std::int32_t>{0, 0, 1, 1}, 4), std::exp(std::log(2.0)), 1e-12);
}
