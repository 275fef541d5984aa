#include "favae/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "favae/error.hpp"
#include "favae/ops.hpp"

namespace favae::model {

namespace {

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    return out;
}

std::string fmt(double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}

}  // namespace

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

FcmVariant parse_variant(std::string_view name) {
    if (name == "none") return FcmVariant::none;
    if (name == "conv") return FcmVariant::conv;
    if (name == "conv_residual" || name == "res") return FcmVariant::conv_residual;
    if (name == "conv_attention" || name == "attn") return FcmVariant::conv_attention;
    throw ContractError("unknown FCM variant '" + std::string(name) + "'");
}

const char* variant_name(FcmVariant variant) {
    switch (variant) {
        case FcmVariant::none: return "none";
        case FcmVariant::conv: return "conv";
        case FcmVariant::conv_residual: return "conv_residual";
        case FcmVariant::conv_attention: return "conv_attention";
    }
    return "none";
}

std::vector<int> ModelSpec::fcm_levels() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(fcm.size()); ++i) {
        if (fcm[i] != FcmVariant::none) out.push_back(i);
    }
    return out;
}

spectral::FflOptions ModelSpec::ffl_options() const {
    return {.detach_weight = ffl_detach_weight, .normalize_weight = ffl_normalize_weight};
}

vq::CodebookOptions ModelSpec::codebook_options() const {
    vq::CodebookOptions o;
    o.size = codebook_size;
    o.dim = n_z;
    o.decay = decay;
    o.l2_normalize = l2_normalize;
    o.ema = ema;
    o.dead_after = dead_after;
    return o;
}

void ModelSpec::validate() const {
    if (channels.empty()) throw ContractError("spec: at least one level is required");
    for (int c : channels) {
        if (c < 1) throw ContractError("spec: channel counts must be positive");
    }
    if (image_size < 1 || image_size % compression() != 0) {
        throw ContractError("spec: image size must be divisible by 2^(levels-1)");
    }
    if (static_cast<int>(fcm.size()) != levels()) throw ContractError("spec: fcm variant count must equal the level count");
    if (static_cast<int>(kernel_sizes.size()) != levels()) throw ContractError("spec: kernel size count must equal the level count");
    for (int i = 0; i < levels(); ++i) {
        const int k = kernel_sizes[i];
        if (k < 1 || k % 2 == 0) throw ContractError("spec: kernel sizes must be odd");
        if (fcm[i] != FcmVariant::none && k / 2 >= (image_size >> i)) {
            throw ContractError("spec: kernel too large for level " + std::to_string(i));
        }
    }
    if (alpha < 0 || beta < 0) throw ContractError("spec: alpha and beta must be non-negative");
    if (n_z < 1 || codebook_size < 1 || in_channels < 1) throw ContractError("spec: n_z, codebook size and channels must be positive");
    if (!(sigma_init > sigma_min)) throw ContractError("spec: sigma_init must exceed sigma_min");
}

std::string ModelSpec::canonical() const {
    std::vector<std::string> variants;
    std::string v;
    for (std::size_t i = 0; i < fcm.size(); ++i) v += (i ? "," : "") + std::string(variant_name(fcm[i]));
    std::ostringstream o;
    o << "image_size=" << image_size << "\n"
      << "in_channels=" << in_channels << "\n"
      << "channels=" << join(channels) << "\n"
      << "n_z=" << n_z << "\n"
      << "codebook_size=" << codebook_size << "\n"
      << "fcm=" << v << "\n"
      << "alpha=" << fmt(alpha) << "\n"
      << "beta=" << fmt(beta) << "\n"
      << "sigma_mode=" << (sigma_mode == spectral::SigmaMode::shared ? "shared" : "pairwise") << "\n"
      << "kernel_sizes=" << join(kernel_sizes) << "\n"
      << "sigma_init=" << fmt(sigma_init) << "\n"
      << "sigma_min=" << fmt(sigma_min) << "\n"
      << "detach_encoder_targets=" << detach_encoder_targets << "\n"
      << "ffl_detach_weight=" << ffl_detach_weight << "\n"
      << "ffl_normalize_weight=" << ffl_normalize_weight << "\n"
      << "l2_normalize=" << l2_normalize << "\n"
      << "ema=" << ema << "\n"
      << "decay=" << fmt(decay) << "\n"
      << "dead_after=" << dead_after << "\n"
      << "beta_commit=" << fmt(beta_commit) << "\n";
    return o.str();
}

std::uint64_t ModelSpec::digest() const { return fnv1a(canonical()); }

ModelSpec ModelSpec::from_canonical(const std::string& text) {
    ModelSpec s;
    auto ints = [](const std::string& v) {
        std::vector<int> out;
        for (auto& p : split(v, ',')) out.push_back(std::stoi(p));
        return out;
    };
    for (auto& line : split(text, '\n')) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("spec text: malformed line '" + line + "'");
        const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        if (k == "image_size") s.image_size = std::stoi(v);
        else if (k == "in_channels") s.in_channels = std::stoi(v);
        else if (k == "channels") s.channels = ints(v);
        else if (k == "n_z") s.n_z = std::stoi(v);
        else if (k == "codebook_size") s.codebook_size = std::stoi(v);
        else if (k == "fcm") {
            s.fcm.clear();
            for (auto& p : split(v, ',')) s.fcm.push_back(parse_variant(p));
        } else if (k == "alpha") s.alpha = std::stod(v);
        else if (k == "beta") s.beta = std::stod(v);
        else if (k == "sigma_mode") s.sigma_mode = v == "pairwise" ? spectral::SigmaMode::pairwise : spectral::SigmaMode::shared;
        else if (k == "kernel_sizes") s.kernel_sizes = ints(v);
        else if (k == "sigma_init") s.sigma_init = std::stod(v);
        else if (k == "sigma_min") s.sigma_min = std::stod(v);
        else if (k == "detach_encoder_targets") s.detach_encoder_targets = v == "1";
        else if (k == "ffl_detach_weight") s.ffl_detach_weight = v == "1";
        else if (k == "ffl_normalize_weight") s.ffl_normalize_weight = v == "1";
        else if (k == "l2_normalize") s.l2_normalize = v == "1";
        else if (k == "ema") s.ema = v == "1";
        else if (k == "decay") s.decay = std::stod(v);
        else if (k == "dead_after") s.dead_after = std::stoi(v);
        else if (k == "beta_commit") s.beta_commit = std::stod(v);
        else throw IoError("spec text: unknown key '" + k + "'");
    }
    s.validate();
    return s;
}

template <typename T>
Tensor<T>& Model<T>::param(const std::string& name, Shape shape, int fan_in, std::uint64_t seed) {
    // Each tensor draws from its own stream, so adding an FCM never shifts the
    // initialization of the shared encoder and decoder.
    std::mt19937_64 rng(seed ^ fnv1a(name));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return params_[name] = Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T>& Model<T>::constant_param(const std::string& name, Shape shape, T value) {
    return params_[name] = Tensor<T>::full(std::move(shape), value, true);
}

template <typename T>
void Model<T>::add_conv(const std::string& name, int in, int out, int k, std::uint64_t seed, bool zero) {
    if (zero) {
        constant_param(name + ".w", {out, in, k, k}, T(0));
        constant_param(name + ".b", {out}, T(0));
    } else {
        param(name + ".w", {out, in, k, k}, in * k * k, seed);
        param(name + ".b", {out}, in * k * k, seed);
    }
    kernel_[name] = k;
}

template <typename T>
void Model<T>::add_norm(const std::string& name, int channels) {
    constant_param(name + ".g", {channels}, T(1));
    constant_param(name + ".b", {channels}, T(0));
}

template <typename T>
const Tensor<T>& Model<T>::p(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("model: missing parameter " + name);
    return it->second;
}

template <typename T>
Tensor<T> Model<T>::conv(const std::string& name, const Tensor<T>& x, int stride) const {
    const int k = kernel_.at(name);
    return ops::conv2d(x, p(name + ".w"), p(name + ".b"), stride, k / 2);
}

template <typename T>
Tensor<T> Model<T>::norm(const std::string& name, const Tensor<T>& x) const {
    return ops::group_norm(x, p(name + ".g"), p(name + ".b"));
}

template <typename T>
Model<T>::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec.validate();
    const auto& ch = spec.channels;
    const int levels = spec.levels();
    for (int i = 0; i < levels; ++i) {
        const std::string e = "enc." + std::to_string(i);
        add_conv(e + ".conv1", i == 0 ? spec.in_channels : ch[i - 1], ch[i], 3, seed);
        add_norm(e + ".norm", ch[i]);
        add_conv(e + ".conv2", ch[i], ch[i], 3, seed);
    }
    add_conv("enc.out", ch[levels - 1], spec.n_z, 1, seed);
    add_conv("dec.in", spec.n_z, ch[levels - 1], 1, seed);
    for (int i = levels - 1; i >= 0; --i) {
        const std::string d = "dec." + std::to_string(i);
        const int out = i == 0 ? ch[0] : ch[i - 1];
        add_conv(d + ".conv1", ch[i], out, 3, seed);
        add_norm(d + ".norm", out);
        add_conv(d + ".conv2", out, out, 3, seed);
        if (spec.fcm[i] == FcmVariant::none) continue;
        const std::string f = "fcm." + std::to_string(i);
        add_conv(f + ".conv1", ch[i], ch[i], 3, seed);
        add_conv(f + ".conv2", ch[i], ch[i], 3, seed, true);
        if (spec.fcm[i] == FcmVariant::conv_attention) {
            for (const char* part : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) param(f + part, {ch[i], ch[i]}, ch[i], seed);
        }
    }
    add_conv("dec.head", ch[0], spec.in_channels, 3, seed);

    codebook_ = vq::Codebook<T>(spec.codebook_options(), seed ^ fnv1a("codebook"));
    std::vector<int> sizes;
    for (int i : spec.fcm_levels()) sizes.push_back(spec.kernel_sizes[i]);
    bank_ = spectral::SigmaBank<T>(sizes, spec.sigma_mode, T(spec.sigma_init), T(spec.sigma_min));
}

template <typename T>
Tensor<T> Model<T>::attention(const std::string& name, const Tensor<T>& x) const {
    const auto b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto seq = ops::permute(ops::reshape(x, {b, c, h * w}), {0, 2, 1});
    const Tensor<T> none;
    auto q = ops::linear(seq, p(name + ".q"), none);
    auto k = ops::linear(seq, p(name + ".k"), none);
    auto v = ops::linear(seq, p(name + ".v"), none);
    auto scores = ops::scale(ops::bmm(q, k, true), T(1.0 / std::sqrt(static_cast<double>(c))));
    auto mixed = ops::linear(ops::bmm(ops::softmax(scores), v), p(name + ".o"), none);
    return ops::add(x, ops::reshape(ops::permute(mixed, {0, 2, 1}), {b, c, h, w}));
}

template <typename T>
Tensor<T> Model<T>::fcm_forward(int level, const Tensor<T>& b) const {
    const auto variant = spec_.fcm.at(level);
    if (variant == FcmVariant::none) throw ContractError("fcm_forward: level has no FCM");
    const std::string f = "fcm." + std::to_string(level);
    auto h = ops::swish(conv(f + ".conv1", b));
    if (variant == FcmVariant::conv_attention) h = attention(f + ".attn", h);
    auto out = conv(f + ".conv2", h);
    if (variant == FcmVariant::conv_residual) out = ops::add(b, out);
    return out;
}

template <typename T>
std::pair<Tensor<T>, std::vector<Tensor<T>>> Model<T>::encode(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels || x.dim(2) != spec_.image_size || x.dim(3) != spec_.image_size) {
        throw DimensionError("encode: expected [B, " + std::to_string(spec_.in_channels) + ", " +
                             std::to_string(spec_.image_size) + ", " + std::to_string(spec_.image_size) + "], got " +
                             shape_str(x.shape()));
    }
    std::vector<Tensor<T>> acts;
    Tensor<T> h = x;
    for (int i = 0; i < spec_.levels(); ++i) {
        const std::string e = "enc." + std::to_string(i);
        h = conv(e + ".conv1", h, i == 0 ? 1 : 2);
        h = conv(e + ".conv2", ops::swish(norm(e + ".norm", h)));
        acts.push_back(h);
    }
    return {conv("enc.out", ops::swish(h)), std::move(acts)};
}

template <typename T>
typename Model<T>::Decoded Model<T>::decode(const Tensor<T>& zq) const {
    const int h = spec_.latent_size();
    if (zq.rank() != 4 || zq.dim(1) != spec_.n_z || zq.dim(2) != h || zq.dim(3) != h) {
        throw DimensionError("decode: latent shape " + shape_str(zq.shape()) + " does not match the spec");
    }
    Decoded out;
    const int levels = spec_.levels();
    out.decoder_in.resize(levels);
    out.complement.resize(levels);
    Tensor<T> b = conv("dec.in", zq);
    for (int i = levels - 1; i >= 0; --i) {
        out.decoder_in[i] = b;
        Tensor<T> u = b;
        if (spec_.fcm[i] != FcmVariant::none) {
            out.complement[i] = fcm_forward(i, b);
            u = ops::add(b, out.complement[i]);
        }
        const std::string d = "dec." + std::to_string(i);
        if (i > 0) u = ops::upsample_nearest2x(u);
        u = conv(d + ".conv1", u);
        b = conv(d + ".conv2", ops::swish(norm(d + ".norm", u)));
    }
    out.reconstruction = conv("dec.head", ops::swish(b));
    return out;
}

template <typename T>
ForwardTrace<T> Model<T>::forward(const Tensor<T>& x) const {
    ForwardTrace<T> t;
    auto [z, acts] = encode(x);
    t.encoder = std::move(acts);
    t.z = z;
    auto flat = ops::permute(z, {0, 2, 3, 1});
    t.z_flat = spec_.l2_normalize ? ops::l2_normalize_lastdim(flat) : flat;
    auto q = vq::quantize(t.z_flat, codebook_);
    t.codes = q.codes;
    t.indices = std::move(q.indices);
    t.zq = ops::permute(q.zq, {0, 3, 1, 2});
    auto dec = decode(t.zq);
    t.decoder_in = std::move(dec.decoder_in);
    t.complement = std::move(dec.complement);
    t.reconstruction = dec.reconstruction;
    return t;
}

template <typename T>
std::vector<std::int32_t> Model<T>::encode_indices(const Tensor<T>& x) const {
    NoGradGuard guard;
    auto z = ops::permute(encode(x).first, {0, 2, 3, 1});
    if (spec_.l2_normalize) z = ops::l2_normalize_lastdim(z);
    return vq::nearest(z.data(), codebook_);
}

template <typename T>
Tensor<T> Model<T>::decode_indices(std::span<const std::int32_t> indices, int batch) const {
    const int h = spec_.latent_size();
    if (static_cast<int>(indices.size()) != batch * h * h) throw DimensionError("decode_indices: expected batch*h*w indices");
    auto codes = ops::embedding(codebook_.entries().detach(), indices, {batch, h, h});
    return decode(ops::permute(codes, {0, 3, 1, 2})).reconstruction;
}

template <typename T>
LossTerms<T> Model<T>::loss(const ForwardTrace<T>& trace, const Tensor<T>& x) const {
    LossTerms<T> terms;
    const auto& xr = trace.reconstruction;
    if (xr.shape() != x.shape()) throw DimensionError("loss: reconstruction shape differs from input");
    terms.l1 = ops::mean(ops::abs(ops::sub(x, xr)));
    terms.quantization = vq::quantization_loss(trace.z_flat, trace.codes, T(spec_.beta_commit));
    Tensor<T> total = ops::add(terms.l1, terms.quantization);

    auto weighted = [&](T weight, auto&& compute) {
        if (weight > T(0)) {
            auto value = compute();
            total = ops::add(total, ops::scale(value, weight));
            return value;
        }
        NoGradGuard guard;
        return compute();
    };
    const auto ffl_opts = spec_.ffl_options();
    terms.ffl = weighted(T(spec_.alpha), [&] { return spectral::ffl(x, xr, ffl_opts); });

    const auto levels = spec_.fcm_levels();
    for (std::size_t j = 0; j < levels.size(); ++j) {
        const int i = levels[j];
        const auto& a = trace.encoder.at(i);
        const auto& c = trace.complement.at(i);
        if (!c.defined() || a.shape() != c.shape()) {
            throw DimensionError("loss: level " + std::to_string(i) + " encoder and complement maps differ in shape");
        }
        terms.dsl.push_back(weighted(T(spec_.beta), [&] {
            const auto target = spec_.detach_encoder_targets ? a.detach() : a;
            return spectral::spectrum_loss(target, c, bank_.encoder_kernel(j), bank_.fcm_kernel(j), ffl_opts);
        }));
    }
    if (perceptual_) {
        terms.perceptual = perceptual_(x, xr);
        total = ops::add(total, terms.perceptual);
    } else {
        terms.perceptual = Tensor<T>::scalar(T(0));
    }
    terms.total = total;
    return terms;
}

template <typename T>
std::vector<std::string> Model<T>::trainable_names() const {
    std::vector<std::string> names;
    for (auto& [name, t] : params_) names.push_back(name);
    for (std::size_t k = 0; k < bank_.kernels().size(); ++k) names.push_back("sigma.rho." + std::to_string(k));
    if (!spec_.ema) names.push_back("codebook.entries");
    return names;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::trainable() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : params_) out.push_back(t);
    for (auto& r : bank_.parameters()) out.push_back(r);
    if (!spec_.ema) out.push_back(codebook_.entries());
    return out;
}

template <typename T>
Trainer<T>::Trainer(Model<T>& model, AdamOptions options, std::uint64_t seed)
    : model_(model), adam_(model.trainable(), options), seed_(seed) {}

template <typename T>
StepMetrics Trainer<T>::step(const Tensor<T>& batch) {
    for (auto v : batch.data()) {
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("train_step: non-finite input batch");
    }
    auto trace = model_.forward(batch);
    auto terms = model_.loss(trace, batch);
    StepMetrics m;
    m.step = adam_.step_count();
    m.total = terms.total.item();
    m.l1 = terms.l1.item();
    m.ffl = terms.ffl.item();
    m.quantization = terms.quantization.item();
    for (auto& d : terms.dsl) m.dsl.push_back(d.item());
    if (!std::isfinite(m.total)) {
        std::ostringstream o;
        o << "train_step: non-finite loss at step " << m.step << " (l1=" << m.l1 << " ffl=" << m.ffl
          << " lq=" << m.quantization;
        for (std::size_t i = 0; i < m.dsl.size(); ++i) o << " dsl" << i << "=" << m.dsl[i];
        o << ")";
        throw NumericError(o.str());
    }
    adam_.zero_grad();
    terms.total.backward();
    double sq = 0;
    for (auto& p : adam_.params()) {
        for (auto g : p.grad()) sq += double(g) * double(g);
    }
    m.grad_norm = std::sqrt(sq);
    if (!std::isfinite(m.grad_norm)) throw NumericError("train_step: non-finite gradient at step " + std::to_string(m.step));
    adam_.step();
    model_.codebook().ema_update(trace.z_flat.data(), trace.indices, seed_ ^ (0x9E3779B97F4A7C15ull * (m.step + 1)));
    m.perplexity = vq::perplexity(trace.indices, model_.codebook().size());
    for (auto s : model_.sigma_bank().sigmas()) m.sigma.push_back(double(s));
    return m;
}

template class Model<float>;
template class Model<double>;
template class Trainer<float>;
template class Trainer<double>;

}  // namespace favae::model
