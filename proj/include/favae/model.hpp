#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "favae/optim.hpp"
#include "favae/spectral.hpp"
#include "favae/tensor.hpp"
#include "favae/vq.hpp"

namespace favae::model {

enum class FcmVariant { none, conv, conv_residual, conv_attention };

FcmVariant parse_variant(std::string_view name);
const char* variant_name(FcmVariant variant);

// Level 0 is the full-resolution level; level i works at image_size / 2^i.
struct ModelSpec {
    int image_size = 32;
    int in_channels = 3;
    std::vector<int> channels{16, 32};
    int n_z = 16;
    int codebook_size = 128;
    std::vector<FcmVariant> fcm{FcmVariant::conv, FcmVariant::conv};
    double alpha = 1.0;
    double beta = 1.0;
    spectral::SigmaMode sigma_mode = spectral::SigmaMode::shared;
    std::vector<int> kernel_sizes{3, 3};
    double sigma_init = 3.0;
    double sigma_min = 0.3;
    bool detach_encoder_targets = false;
    bool ffl_detach_weight = true;
    bool ffl_normalize_weight = true;
    bool l2_normalize = true;
    bool ema = true;
    double decay = 0.99;
    int dead_after = 256;
    double beta_commit = 0.25;

    int levels() const { return static_cast<int>(channels.size()); }
    int latent_size() const { return image_size >> (levels() - 1); }
    int compression() const { return 1 << (levels() - 1); }
    // Levels with an FCM, in increasing level order; these own sigma kernels.
    std::vector<int> fcm_levels() const;
    spectral::FflOptions ffl_options() const;
    vq::CodebookOptions codebook_options() const;

    void validate() const;
    // Stable text form of every field; the checkpoint digest hashes it.
    std::string canonical() const;
    std::uint64_t digest() const;
    static ModelSpec from_canonical(const std::string& text);
};

std::uint64_t fnv1a(std::string_view text);

template <typename T>
struct ForwardTrace {
    std::vector<Tensor<T>> encoder;     // A_i per level
    std::vector<Tensor<T>> decoder_in;  // B_i per level
    std::vector<Tensor<T>> complement;  // C_i per level (undefined without an FCM)
    Tensor<T> z;                        // [B, n_z, h, w] before normalization
    Tensor<T> z_flat;                   // [B, h, w, n_z] as quantized
    Tensor<T> zq;                       // [B, n_z, h, w], straight-through
    Tensor<T> codes;                    // [B, h, w, n_z]
    std::vector<std::int32_t> indices;  // [B, h, w]
    Tensor<T> reconstruction;
};

template <typename T>
struct LossTerms {
    Tensor<T> total;
    Tensor<T> l1;
    Tensor<T> ffl;
    std::vector<Tensor<T>> dsl;  // per FCM level
    Tensor<T> quantization;
    Tensor<T> perceptual;
};

template <typename T>
class Model {
   public:
    using PerceptualHook = std::function<Tensor<T>(const Tensor<T>& x, const Tensor<T>& reconstruction)>;

    Model(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }

    // z and the encoder activations A_1..A_M.
    std::pair<Tensor<T>, std::vector<Tensor<T>>> encode(const Tensor<T>& x) const;
    // Reconstruction, B_i and C_i for a quantized latent [B, n_z, h, w].
    struct Decoded {
        Tensor<T> reconstruction;
        std::vector<Tensor<T>> decoder_in;
        std::vector<Tensor<T>> complement;
    };
    Decoded decode(const Tensor<T>& zq) const;
    // Decode from codebook indices [B, h, w].
    Tensor<T> decode_indices(std::span<const std::int32_t> indices, int batch) const;
    std::vector<std::int32_t> encode_indices(const Tensor<T>& x) const;
    ForwardTrace<T> forward(const Tensor<T>& x) const;

    // The FCM output C_i for a feature map at the given level.
    Tensor<T> fcm_forward(int level, const Tensor<T>& b) const;

    LossTerms<T> loss(const ForwardTrace<T>& trace, const Tensor<T>& x) const;
    void set_perceptual_hook(PerceptualHook hook) { perceptual_ = std::move(hook); }

    std::map<std::string, Tensor<T>>& parameters() { return params_; }
    const std::map<std::string, Tensor<T>>& parameters() const { return params_; }
    // Network weights, sigma parameters, and codebook entries in gradient mode.
    std::vector<Tensor<T>> trainable() const;
    std::vector<std::string> trainable_names() const;

    vq::Codebook<T>& codebook() { return codebook_; }
    const vq::Codebook<T>& codebook() const { return codebook_; }
    spectral::SigmaBank<T>& sigma_bank() { return bank_; }
    const spectral::SigmaBank<T>& sigma_bank() const { return bank_; }

   private:
    Tensor<T>& param(const std::string& name, Shape shape, int fan_in, std::uint64_t seed);
    Tensor<T>& constant_param(const std::string& name, Shape shape, T value);
    void add_conv(const std::string& name, int in, int out, int k, std::uint64_t seed, bool zero = false);
    void add_norm(const std::string& name, int channels);
    Tensor<T> conv(const std::string& name, const Tensor<T>& x, int stride = 1) const;
    Tensor<T> norm(const std::string& name, const Tensor<T>& x) const;
    Tensor<T> attention(const std::string& name, const Tensor<T>& x) const;
    const Tensor<T>& p(const std::string& name) const;

    ModelSpec spec_;
    std::map<std::string, Tensor<T>> params_;
    std::map<std::string, int> kernel_;
    vq::Codebook<T> codebook_;
    spectral::SigmaBank<T> bank_;
    PerceptualHook perceptual_;
};

struct StepMetrics {
    std::uint64_t step = 0;
    double total = 0, l1 = 0, ffl = 0, quantization = 0, perplexity = 0;
    std::vector<double> dsl;
    std::vector<double> sigma;
    double grad_norm = 0;
};

// One forward, backward and Adam step over all trainable tensors, then the EMA
// codebook update. Throws NumericError on a non-finite loss or gradient.
template <typename T>
class Trainer {
   public:
    Trainer(Model<T>& model, AdamOptions options, std::uint64_t seed);

    StepMetrics step(const Tensor<T>& batch);

    Model<T>& model() { return model_; }
    Adam<T>& optimizer() { return adam_; }
    const Adam<T>& optimizer() const { return adam_; }
    std::uint64_t steps_done() const { return adam_.step_count(); }
    std::uint64_t seed() const { return seed_; }

   private:
    Model<T>& model_;
    Adam<T> adam_;
    std::uint64_t seed_;
};

extern template class Model<float>;
extern template class Model<double>;
extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace favae::model
