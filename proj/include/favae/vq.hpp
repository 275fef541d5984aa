#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "favae/tensor.hpp"

namespace favae::vq {

struct CodebookOptions {
    int size = 512;
    int dim = 64;
    double decay = 0.99;
    bool l2_normalize = true;
    // EMA updates; when false the entries are a trainable parameter.
    bool ema = true;
    double eps = 1e-5;
    // Reseed entries unused for this many consecutive updates; 0 disables.
    int dead_after = 256;
};

template <typename T>
class Codebook {
   public:
    Codebook() = default;
    // Entries drawn from N(0, 1) (then normalized when enabled).
    Codebook(const CodebookOptions& options, std::uint64_t seed);
    Codebook(const CodebookOptions& options, const Tensor<T>& entries);
    // Copies own their entries; tensors are otherwise shared by handle.
    Codebook(const Codebook& other);
    Codebook& operator=(const Codebook& other);
    Codebook(Codebook&&) noexcept = default;
    Codebook& operator=(Codebook&&) noexcept = default;

    const CodebookOptions& options() const { return options_; }
    int size() const { return options_.size; }
    int dim() const { return options_.dim; }

    Tensor<T>& entries() { return entries_; }
    const Tensor<T>& entries() const { return entries_; }
    std::span<const T> entry(int k) const;

    std::span<const T> cluster_size() const { return cluster_size_; }
    std::span<const T> embed_sum() const { return embed_sum_; }
    std::span<const std::uint64_t> usage() const { return usage_; }
    std::span<const std::uint32_t> unused_steps() const { return unused_steps_; }

    // embed_sum / (cluster_size + eps) for entry k, before normalization.
    std::vector<T> unnormalized_entry(int k) const;

    // One EMA step from vectors z[N, dim] (row-major values) assigned to indices.
    // Usage telemetry and dead-code counters are updated in every mode; dead
    // entries are reseeded from rows of z chosen with reseed_seed.
    void ema_update(std::span<const T> z, std::span<const std::int32_t> indices, std::uint64_t reseed_seed = 0);
    void set_decay(double decay) { options_.decay = decay; }

    // Flat blob: "FVQ1", u32 size, u32 dim, u32 flags, f32 entries, f32 cluster
    // sizes, f32 embed sums, u32 unused counters, u64 usage counts.
    void save(std::ostream& out) const;
    static Codebook load(std::istream& in, const CodebookOptions& defaults = {});

   private:
    void refresh_entry(int k);

    CodebookOptions options_;
    Tensor<T> entries_;
    std::vector<T> cluster_size_;
    std::vector<T> embed_sum_;
    std::vector<std::uint32_t> unused_steps_;
    std::vector<std::uint64_t> usage_;
};

template <typename T>
struct Quantized {
    // Forward value of the selected entries, gradient straight through to z.
    Tensor<T> zq;
    // Selected entries as a differentiable gather of the codebook (gradient mode) or constants.
    Tensor<T> codes;
    std::vector<std::int32_t> indices;
};

// Nearest entry per position of z[..., dim] by Euclidean distance, on normalized
// vectors when the codebook normalizes. Ties go to the lowest index.
template <typename T>
Quantized<T> quantize(const Tensor<T>& z, const Codebook<T>& codebook);

// Index search only, over rows of z[N, dim].
template <typename T>
std::vector<std::int32_t> nearest(std::span<const T> z, const Codebook<T>& codebook);

// beta * mean((z - sg(codes))^2), plus mean((sg(z) - codes)^2) when codes carry gradient.
template <typename T>
Tensor<T> quantization_loss(const Tensor<T>& z, const Tensor<T>& codes, T beta_commit = T(0.25));

// exp of the entropy of the empirical index distribution.
double perplexity(std::span<const std::int32_t> indices, int codebook_size);

}  // namespace favae::vq
