#include "favae/vq.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "favae/binio.hpp"
#include "favae/error.hpp"
#include "favae/ops.hpp"

namespace favae::vq {

namespace {

constexpr char kMagic[5] = "FVQ1";

template <typename T>
void normalize_row(std::span<T> row) {
    double n = 0;
    for (auto v : row) n += double(v) * double(v);
    n = std::sqrt(n);
    if (n <= 0) return;
    for (auto& v : row) v = static_cast<T>(v / n);
}

void check_options(const CodebookOptions& o) {
    if (o.size < 1) throw ContractError("codebook: empty codebook");
    if (o.dim < 1) throw ContractError("codebook: dim must be positive");
    if (!(o.decay >= 0 && o.decay < 1)) throw ContractError("codebook: decay must lie in [0, 1)");
}

}  // namespace

template <typename T>
Codebook<T>::Codebook(const CodebookOptions& options, std::uint64_t seed) : options_(options) {
    check_options(options);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<T> values(static_cast<std::size_t>(options.size) * options.dim);
    for (auto& v : values) v = static_cast<T>(normal(rng));
    *this = Codebook(options, Tensor<T>::from({options.size, options.dim}, std::move(values)));
}

template <typename T>
Codebook<T>::Codebook(const CodebookOptions& options, const Tensor<T>& entries) : options_(options) {
    check_options(options);
    if (entries.shape() != Shape{options.size, options.dim}) throw DimensionError("codebook: entries shape mismatch");
    std::vector<T> values(entries.data().begin(), entries.data().end());
    if (options.l2_normalize) {
        for (int k = 0; k < options.size; ++k) normalize_row(std::span<T>(values).subspan(std::size_t(k) * options.dim, options.dim));
    }
    embed_sum_ = values;
    cluster_size_.assign(options.size, T(1));
    unused_steps_.assign(options.size, 0);
    usage_.assign(options.size, 0);
    entries_ = Tensor<T>::from({options.size, options.dim}, std::move(values), !options.ema);
}

template <typename T>
Codebook<T>::Codebook(const Codebook& other)
    : options_(other.options_),
      entries_(other.entries_.defined() ? other.entries_.clone() : Tensor<T>()),
      cluster_size_(other.cluster_size_),
      embed_sum_(other.embed_sum_),
      unused_steps_(other.unused_steps_),
      usage_(other.usage_) {}

template <typename T>
Codebook<T>& Codebook<T>::operator=(const Codebook& other) {
    if (this != &other) *this = Codebook(other);
    return *this;
}

template <typename T>
std::span<const T> Codebook<T>::entry(int k) const {
    return entries_.data().subspan(std::size_t(k) * options_.dim, options_.dim);
}

template <typename T>
std::vector<T> Codebook<T>::unnormalized_entry(int k) const {
    std::vector<T> out(options_.dim);
    const T denom = cluster_size_[k] + static_cast<T>(options_.eps);
    for (int j = 0; j < options_.dim; ++j) out[j] = embed_sum_[std::size_t(k) * options_.dim + j] / denom;
    return out;
}

template <typename T>
void Codebook<T>::refresh_entry(int k) {
    auto row = entries_.mutable_data().subspan(std::size_t(k) * options_.dim, options_.dim);
    auto raw = unnormalized_entry(k);
    std::copy(raw.begin(), raw.end(), row.begin());
    if (options_.l2_normalize) normalize_row(row);
}

template <typename T>
void Codebook<T>::ema_update(std::span<const T> z, std::span<const std::int32_t> indices, std::uint64_t reseed_seed) {
    const std::size_t d = options_.dim;
    if (z.size() != indices.size() * d) throw DimensionError("ema_update: z and indices disagree");
    std::vector<double> counts(options_.size, 0.0);
    std::vector<double> sums(std::size_t(options_.size) * d, 0.0);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int k = indices[i];
        if (k < 0 || k >= options_.size) throw ContractError("ema_update: index out of range");
        counts[k] += 1;
        for (std::size_t j = 0; j < d; ++j) sums[k * d + j] += z[i * d + j];
    }
    for (int k = 0; k < options_.size; ++k) {
        usage_[k] += static_cast<std::uint64_t>(counts[k]);
        unused_steps_[k] = counts[k] > 0 ? 0 : unused_steps_[k] + 1;
    }
    if (options_.ema) {
        const double g = options_.decay;
        for (int k = 0; k < options_.size; ++k) {
            cluster_size_[k] = static_cast<T>(g * cluster_size_[k] + (1 - g) * counts[k]);
            for (std::size_t j = 0; j < d; ++j) {
                auto& s = embed_sum_[k * d + j];
                s = static_cast<T>(g * s + (1 - g) * sums[k * d + j]);
            }
            refresh_entry(k);
        }
    } else if (options_.l2_normalize) {
        for (int k = 0; k < options_.size; ++k) normalize_row(entries_.mutable_data().subspan(k * d, d));
    }
    if (options_.dead_after > 0 && !indices.empty()) {
        std::mt19937_64 rng(reseed_seed);
        std::uniform_int_distribution<std::size_t> pick(0, indices.size() - 1);
        for (int k = 0; k < options_.size; ++k) {
            if (unused_steps_[k] < static_cast<std::uint32_t>(options_.dead_after)) continue;
            const std::size_t src = pick(rng);
            auto row = entries_.mutable_data().subspan(k * d, d);
            std::copy_n(z.begin() + static_cast<std::ptrdiff_t>(src * d), d, row.begin());
            if (options_.l2_normalize) normalize_row(row);
            std::copy(row.begin(), row.end(), embed_sum_.begin() + static_cast<std::ptrdiff_t>(k * d));
            cluster_size_[k] = T(1);
            unused_steps_[k] = 0;
        }
    }
}

template <typename T>
void Codebook<T>::save(std::ostream& out) const {
    binio::put_magic(out, kMagic);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(options_.size));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(options_.dim));
    const std::uint32_t flags = (options_.l2_normalize ? 1u : 0u) | (options_.ema ? 2u : 0u) | 4u;
    binio::put<std::uint32_t>(out, flags);
    binio::put_f32<T>(out, entries_.data());
    binio::put_f32<T>(out, cluster_size_);
    binio::put_f32<T>(out, embed_sum_);
    for (auto u : unused_steps_) binio::put(out, u);
    for (auto u : usage_) binio::put(out, u);
}

template <typename T>
Codebook<T> Codebook<T>::load(std::istream& in, const CodebookOptions& defaults) {
    binio::expect_magic(in, kMagic);
    CodebookOptions o = defaults;
    o.size = static_cast<int>(binio::get<std::uint32_t>(in));
    o.dim = static_cast<int>(binio::get<std::uint32_t>(in));
    const auto flags = binio::get<std::uint32_t>(in);
    if (o.size < 1 || o.dim < 1 || std::uint64_t(o.size) * o.dim > (1u << 26)) throw IoError("codebook: bad header");
    o.l2_normalize = flags & 1u;
    o.ema = flags & 2u;
    Codebook cb;
    cb.options_ = o;
    const std::size_t n = std::size_t(o.size) * o.dim;
    std::vector<T> entries(n);
    binio::get_f32<T>(in, entries);
    cb.cluster_size_.resize(o.size);
    cb.embed_sum_.resize(n);
    binio::get_f32<T>(in, cb.cluster_size_);
    binio::get_f32<T>(in, cb.embed_sum_);
    cb.unused_steps_.assign(o.size, 0);
    cb.usage_.assign(o.size, 0);
    if (flags & 4u) {
        for (auto& u : cb.unused_steps_) u = binio::get<std::uint32_t>(in);
        for (auto& u : cb.usage_) u = binio::get<std::uint64_t>(in);
    }
    cb.entries_ = Tensor<T>::from({o.size, o.dim}, std::move(entries), !o.ema);
    return cb;
}

template <typename T>
std::vector<std::int32_t> nearest(std::span<const T> z, const Codebook<T>& codebook) {
    const std::size_t d = codebook.dim();
    if (z.size() % d != 0) throw DimensionError("quantize: trailing dimension does not match codebook");
    const std::size_t n = z.size() / d;
    const bool norm = codebook.options().l2_normalize;
    const auto entries = codebook.entries().data();
    // Entries normalized once; the stored ones already are after every update, but
    // gradient-mode entries drift between renormalizations.
    std::vector<double> e(entries.begin(), entries.end());
    if (norm) {
        for (int k = 0; k < codebook.size(); ++k) normalize_row(std::span<double>(e).subspan(k * d, d));
    }
    std::vector<std::int32_t> out(n);
    std::vector<double> q(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) q[j] = z[i * d + j];
        if (norm) normalize_row(std::span<double>(q));
        double best = std::numeric_limits<double>::infinity();
        std::int32_t arg = 0;
        for (int k = 0; k < codebook.size(); ++k) {
            double dist = 0;
            const double* ek = e.data() + k * d;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = q[j] - ek[j];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = k;
            }
        }
        out[i] = arg;
    }
    return out;
}

template <typename T>
Quantized<T> quantize(const Tensor<T>& z, const Codebook<T>& codebook) {
    if (!z.defined()) throw ContractError("quantize: undefined input");
    if (z.rank() < 1 || z.dim(-1) != codebook.dim()) throw DimensionError("quantize: trailing dimension does not match codebook");
    Quantized<T> q;
    q.indices = nearest(z.data(), codebook);
    Shape prefix(z.shape().begin(), z.shape().end() - 1);
    if (codebook.options().ema) {
        NoGradGuard guard;
        q.codes = ops::embedding(codebook.entries(), q.indices, prefix);
    } else {
        q.codes = ops::embedding(codebook.entries(), q.indices, prefix);
    }
    q.zq = ops::straight_through(z, q.codes.detach());
    return q;
}

template <typename T>
Tensor<T> quantization_loss(const Tensor<T>& z, const Tensor<T>& codes, T beta_commit) {
    if (z.shape() != codes.shape()) throw DimensionError("quantization_loss: shape mismatch");
    auto commit = ops::scale(ops::mean(ops::square(ops::sub(z, codes.detach()))), beta_commit);
    if (!codes.requires_grad()) return commit;
    return ops::add(commit, ops::mean(ops::square(ops::sub(z.detach(), codes))));
}

double perplexity(std::span<const std::int32_t> indices, int codebook_size) {
    if (indices.empty()) return 1.0;
    std::vector<double> counts(codebook_size, 0.0);
    for (auto k : indices) {
        if (k < 0 || k >= codebook_size) throw ContractError("perplexity: index out of range");
        counts[k] += 1;
    }
    double h = 0;
    const double n = static_cast<double>(indices.size());
    for (auto c : counts) {
        if (c > 0) h -= (c / n) * std::log(c / n);
    }
    return std::exp(h);
}

#define FAVAE_INSTANTIATE_VQ(T)                                                                            \
    template class Codebook<T>;                                                                            \
    template Quantized<T> quantize(const Tensor<T>&, const Codebook<T>&);                                  \
    template std::vector<std::int32_t> nearest(std::span<const T>, const Codebook<T>&);                    \
    template Tensor<T> quantization_loss(const Tensor<T>&, const Tensor<T>&, T);

FAVAE_INSTANTIATE_VQ(float)
FAVAE_INSTANTIATE_VQ(double)

}  // namespace favae::vq
