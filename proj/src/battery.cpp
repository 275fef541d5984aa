#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "favae/cat.hpp"
#include "favae/error.hpp"
#include "favae/gradcheck.hpp"
#include "favae/harness.hpp"
#include "favae/ops.hpp"
#include "favae/spectral.hpp"
#include "favae/vq.hpp"

namespace favae::harness {

namespace {

using D = double;
constexpr int kShapes = 3;

TensorD random(Shape shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    std::vector<D> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = g(rng);
    return TensorD::from(std::move(shape), std::move(v));
}

// Random linear functional of an op's output, so no symmetry hides an error.
TensorD probe(const TensorD& y, std::uint64_t seed) { return ops::sum(ops::mul(y, random(y.shape(), seed))); }

double check(const std::function<TensorD()>& f, std::vector<TensorD> inputs) {
    return gradcheck_report(f, std::move(inputs)).max_rel_error;
}

double check_unary(const std::function<TensorD(const TensorD&)>& op, Shape shape, std::uint64_t seed) {
    auto x = random(shape, seed);
    return check([&] { return probe(op(x), seed + 1); }, {x});
}

struct Check {
    const char* scope;
    const char* op;
    std::function<double(int)> run;  // argument selects one of the shapes
};

model::Model<D> tiny_model(int k) {
    model::ModelSpec spec;
    spec.image_size = 8;
    spec.channels = {2, 3 + k};
    spec.n_z = 3;
    spec.codebook_size = 8;
    spec.fcm = {model::FcmVariant::conv_attention, k == 1 ? model::FcmVariant::conv_residual : model::FcmVariant::conv};
    spec.alpha = 0.5;
    spec.beta = 1.0;
    spec.sigma_mode = k == 2 ? spectral::SigmaMode::shared : spectral::SigmaMode::pairwise;
    spec.kernel_sizes = {3, k == 0 ? 3 : 5};
    spec.sigma_init = 1.0 + k;
    spec.ffl_detach_weight = false;
    spec.ffl_normalize_weight = false;
    model::Model<D> m(spec, 5 + k);
    for (auto& [name, t] : m.parameters()) {
        if (name.rfind("fcm.", 0) == 0 && name.find(".conv2.") != std::string::npos) {
            auto r = random(t.shape(), model::fnv1a(name), 0.2);
            std::copy(r.data().begin(), r.data().end(), t.mutable_data().begin());
        }
    }
    return m;
}

std::vector<TensorD> select(const model::Model<D>& m, bool encoder) {
    std::vector<TensorD> out;
    const auto names = m.trainable_names();
    const auto all = m.trainable();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if ((names[i].rfind("enc.", 0) == 0) == encoder) out.push_back(all[i]);
    }
    return out;
}

std::vector<Check> checks() {
    namespace o = ops;
    namespace s = spectral;
    std::vector<Check> c;

    c.push_back({"tensor", "matmul", [](int k) {
                     auto a = random({2 + k, 4}, 1), b = random({4, 3 + k}, 2);
                     return check([&] { return probe(o::matmul(a, b), 3); }, {a, b});
                 }});
    c.push_back({"tensor", "bmm", [](int k) {
                     auto a = random({2, 3, 2 + k}, 1), b = random({2, 4, 2 + k}, 2);
                     return check([&] { return probe(o::bmm(a, b, true), 3); }, {a, b});
                 }});
    c.push_back({"tensor", "conv2d", [](int k) {
                     auto x = random({2, 2 + k, 5 + k, 6}, 1), w = random({3, 2 + k, 3, 3}, 2, 0.3), b = random({3}, 3);
                     return check([&] { return probe(o::conv2d(x, w, b, 1 + k % 2, 1), 4); }, {x, w, b});
                 }});
    c.push_back({"tensor", "depthwise_conv2d", [](int k) {
                     auto x = random({2, 5 + k, 6}, 1), kk = random({1 + 2 * k, 1 + 2 * k}, 2);
                     return check([&] { return probe(o::depthwise_conv2d(x, kk), 4); }, {x, kk});
                 }});
    c.push_back({"tensor", "group_norm", [](int k) {
                     auto x = random({2, 2 + k, 3, 4}, 1), g = random({2 + k}, 2), b = random({2 + k}, 3);
                     return check([&] { return probe(o::group_norm(x, g, b), 4); }, {x, g, b});
                 }});
    c.push_back({"tensor", "layer_norm", [](int k) {
                     auto x = random({3, 4 + k}, 1), g = random({4 + k}, 2), b = random({4 + k}, 3);
                     return check([&] { return probe(o::layer_norm(x, g, b), 4); }, {x, g, b});
                 }});
    c.push_back({"tensor", "softmax", [](int k) {
                     const int n = 4 + k;
                     std::vector<std::uint8_t> keep(static_cast<std::size_t>(3 * n), 1);
                     keep[2] = keep[n + 1] = keep[2 * n + 3] = 0;
                     return check_unary([&](const TensorD& x) { return o::softmax(x, keep); }, {3, n}, 1);
                 }});
    c.push_back({"tensor", "cross_entropy", [](int k) {
                     std::vector<std::int32_t> t{0, 3, 1, 2};
                     t.resize(static_cast<std::size_t>(2 + k));
                     auto x = random({2 + k, 4 + k}, 1);
                     return check([&] { return o::cross_entropy(x, t); }, {x});
                 }});
    c.push_back({"tensor", "pow", [](int k) {
                     const D e = 1.5 + k;
                     return check_unary([&](const TensorD& x) { return o::pow(o::add_scalar(o::square(x), 0.5), e); },
                                        {3 + k, 3}, 1);
                 }});
    c.push_back({"tensor", "swish", [](int k) { return check_unary([](const TensorD& x) { return o::swish(x); }, {3 + k, 3}, 1); }});
    c.push_back({"tensor", "gelu", [](int k) { return check_unary([](const TensorD& x) { return o::gelu(x); }, {3 + k, 3}, 1); }});
    c.push_back({"tensor", "softplus", [](int k) {
                     return check_unary([](const TensorD& x) { return o::softplus(x); }, {3 + k, 3}, 1);
                 }});
    c.push_back({"tensor", "upsample_nearest2x", [](int k) {
                     return check_unary([](const TensorD& x) { return o::upsample_nearest2x(x); }, {1, 2, 2 + k, 3}, 1);
                 }});
    c.push_back({"tensor", "pad_reflect", [](int k) {
                     return check_unary([&](const TensorD& x) { return o::pad_reflect(x, 1 + k); }, {2, 4 + k, 5}, 1);
                 }});

    c.push_back({"spectral", "dft2", [](int k) {
                     auto x = random({2, 4 + k, 5 + 2 * k}, 1);
                     return check(
                         [&] {
                             auto f = s::dft2(x);
                             return o::add(probe(f.real, 2), probe(f.imag, 3));
                         },
                         {x});
                 }});
    c.push_back({"spectral", "ffl", [](int k) {
                     auto a = random({1 + k, 4, 3 + k}, 1), b = random({1 + k, 4, 3 + k}, 2);
                     return check([&] { return s::ffl(a, b, {.detach_weight = false}); }, {a, b});
                 }});
    c.push_back({"spectral", "gaussian_kernel", [](int k) {
                     s::GaussianKernel<D> g(3 + 2 * k, 1.3 + k);
                     return check([&] { return probe(g.weights(), 1); }, {g.rho()});
                 }});
    c.push_back({"spectral", "smooth", [](int k) {
                     s::GaussianKernel<D> g(3 + 2 * k, 2.0);
                     auto x = random({2, 5 + k, 6 + k}, 1);
                     return check([&] { return probe(s::smooth(x, g), 2); }, {x, g.rho()});
                 }});
    c.push_back({"spectral", "spectrum_loss", [](int k) {
                     s::GaussianKernel<D> g(3 + 2 * k, 3.0);
                     auto a = random({2, 6 + k, 6}, 1), b = random({2, 6 + k, 6}, 2);
                     return check([&] { return s::spectrum_loss(a, b, g, {.detach_weight = false}); }, {a, b, g.rho()});
                 }});
    c.push_back({"spectral", "dsl_total_pairwise", [](int k) {
                     s::SigmaBank<D> bank({3, 3 + 2 * k}, s::SigmaMode::pairwise);
                     auto a0 = random({2, 6, 6 + k}, 1), c0 = random({2, 6, 6 + k}, 2);
                     auto a1 = random({3, 4, 3 + k}, 3), c1 = random({3, 4, 3 + k}, 4);
                     auto inputs = bank.parameters();
                     for (const auto& t : {a0, c0, a1, c1}) inputs.push_back(t);
                     return check([&] { return s::dsl_total<D>({{a0, c0}, {a1, c1}}, bank, {.detach_weight = false}); }, inputs);
                 }});
    c.push_back({"spectral", "dsl_total_shared", [](int k) {
                     s::SigmaBank<D> bank({3 + 2 * k}, s::SigmaMode::shared);
                     auto a = random({2, 5 + k, 6}, 1), b = random({2, 5 + k, 6}, 2);
                     auto inputs = bank.parameters();
                     inputs.push_back(a);
                     inputs.push_back(b);
                     return check([&] { return s::dsl_total<D>({{a, b}}, bank, {.detach_weight = false}); }, inputs);
                 }});

    c.push_back({"vq", "l2_normalize_lastdim", [](int k) {
                     return check_unary([](const TensorD& x) { return o::l2_normalize_lastdim(x); }, {3, 2 + k}, 1);
                 }});
    c.push_back({"vq", "quantization_loss", [](int k) {
                     vq::CodebookOptions opt;
                     opt.size = 6 + 2 * k;
                     opt.dim = 3 + k;
                     vq::Codebook<D> cb(opt, 3 + k);
                     auto z = random({2, 2 + k, opt.dim}, 1);
                     // The assignment is held fixed, as its argmin is piecewise constant.
                     const auto codes = vq::quantize(o::l2_normalize_lastdim(z).detach(), cb).codes;
                     return check([&] { return vq::quantization_loss(o::l2_normalize_lastdim(z), codes); }, {z});
                 }});

    // The straight-through estimator is not the derivative of the quantized
    // forward, so decoder-side parameters are checked through the full loss and
    // encoder parameters through the terms that reach them without it.
    c.push_back({"favae", "decoder_fcm_sigma", [](int k) {
                     auto m = tiny_model(k);
                     auto x = random({2, 3, 8, 8}, 7 + k, 0.5);
                     return check([&] { return m.loss(m.forward(x), x).total; }, select(m, false));
                 }});
    c.push_back({"favae", "encoder", [](int k) {
                     auto m = tiny_model(k);
                     auto x = random({2, 3, 8, 8}, 7 + k, 0.5);
                     const auto& bank = m.sigma_bank();
                     const auto levels = m.spec().fcm_levels();
                     return check(
                         [&] {
                             const auto trace = m.forward(x);
                             auto t = vq::quantization_loss(trace.z_flat, trace.codes, D(m.spec().beta_commit));
                             for (std::size_t j = 0; j < levels.size(); ++j) {
                                 const int i = levels[j];
                                 t = o::add(t, s::spectrum_loss(trace.encoder[i], trace.complement[i].detach(),
                                                                bank.encoder_kernel(j), bank.fcm_kernel(j),
                                                                m.spec().ffl_options()));
                             }
                             return t;
                         },
                         select(m, true));
                 }});

    c.push_back({"cat", "nll", [](int k) {
                     cat::CatSpec spec;
                     spec.vocab = 6;
                     spec.context = 4;
                     spec.layers = 1 + k % 2;
                     spec.heads = 2;
                     spec.width = 8;
                     spec.ff = 8 + 4 * k;
                     spec.cond_vocab = 5;
                     spec.cond_width = 4 + 2 * k;
                     cat::CatModel<D> m(spec, 4 + k);
                     std::vector<std::int32_t> seq{0, 5, 2, 3, 1, 1, 4, 0};
                     const int n = 2 + k;
                     std::vector<std::int32_t> s;
                     for (int b = 0; b < 2; ++b) s.insert(s.end(), seq.begin() + 4 * b, seq.begin() + 4 * b + n);
                     cat::Condition cond{2, 2, {0, 3, 1, 4}, {1, 1, 1, 0}};
                     return check([&] { return cat::CatModel<D>::nll(m.forward(s, 2, cond), s); }, m.trainable());
                 }});
    return c;
}

}  // namespace

std::vector<GradcheckLine> gradcheck_battery(const std::string& scope, double threshold) {
    static const char* scopes[] = {"tensor", "spectral", "vq", "favae", "cat", "all"};
    if (std::find(std::begin(scopes), std::end(scopes), scope) == std::end(scopes)) {
        throw UsageError("gradcheck: unknown scope '" + scope + "'");
    }
    std::vector<GradcheckLine> out;
    for (const auto& c : checks()) {
        if (scope != "all" && scope != c.scope) continue;
        double worst = 0;
        for (int k = 0; k < kShapes; ++k) {
            const double err = c.run(k);
            worst = std::isnan(err) || std::isnan(worst) ? std::numeric_limits<double>::quiet_NaN() : std::max(worst, err);
        }
        out.push_back({c.scope, c.op, worst, worst < threshold});
    }
    return out;
}

}  // namespace favae::harness
