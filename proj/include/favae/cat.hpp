#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "favae/optim.hpp"
#include "favae/tensor.hpp"

namespace favae::cat {

struct CatSpec {
    int vocab = 128;     // codebook size
    int context = 64;    // L = h * w
    int layers = 4;
    int heads = 4;
    int width = 128;
    int ff = 512;
    int cond_vocab = 16;
    int cond_width = 128;

    void validate() const;
    std::string canonical() const;
    std::uint64_t digest() const;
    static CatSpec from_canonical(const std::string& text);
};

// Condition tokens c[B, T]; keep[B, T] marks real tokens (empty = all real).
struct Condition {
    int batch = 0;
    int length = 0;
    std::vector<std::int32_t> tokens;
    std::vector<std::uint8_t> keep;
};

struct SampleOptions {
    double temperature = 1.0;
    int top_k = 0;  // 0 = full distribution
    bool greedy = false;
    std::uint64_t seed = 0;
};

// Decoder-only transformer over codebook indices. Every block is pre-norm
// causal self-attention, cross-attention to the condition embeddings, then a
// GELU feed-forward, each with a residual. Position 0 reads a learned start token.
template <typename T>
class CatModel {
   public:
    CatModel(const CatSpec& spec, std::uint64_t seed);

    const CatSpec& spec() const { return spec_; }

    // Condition embeddings [B, T, cond_width] from the token table.
    Tensor<T> embed_condition(const Condition& c) const;
    // logits[B, n, vocab] for targets s[B, n], n <= context; logits[:, i]
    // depends only on s[:, <i] and the condition.
    Tensor<T> forward(std::span<const std::int32_t> s, int batch, const Tensor<T>& cond,
                      std::span<const std::uint8_t> keep = {}) const;
    Tensor<T> forward(std::span<const std::int32_t> s, int batch, const Condition& c) const;

    // Mean token cross-entropy with teacher forcing.
    static Tensor<T> nll(const Tensor<T>& logits, std::span<const std::int32_t> s);
    // log p(s | c) per sequence from one batched forward.
    std::vector<double> log_prob(std::span<const std::int32_t> s, int batch, const Condition& c) const;
    // The same quantity from one forward per position over growing prefixes.
    std::vector<double> sequential_log_prob(std::span<const std::int32_t> s, int batch, const Condition& c) const;

    // B sequences of length context, left to right.
    std::vector<std::int32_t> sample(const Condition& c, const SampleOptions& options) const;

    std::map<std::string, Tensor<T>>& parameters() { return params_; }
    const std::map<std::string, Tensor<T>>& parameters() const { return params_; }
    std::vector<Tensor<T>> trainable() const;
    std::vector<std::string> trainable_names() const;

   private:
    Tensor<T>& normal(const std::string& name, Shape shape, double std, std::uint64_t seed);
    Tensor<T>& constant(const std::string& name, Shape shape, T value);
    const Tensor<T>& p(const std::string& name) const;
    Tensor<T> attend(const std::string& name, const Tensor<T>& x, const Tensor<T>& memory,
                     std::span<const std::uint8_t> keep) const;

    CatSpec spec_;
    std::map<std::string, Tensor<T>> params_;
};

template <typename T>
class CatTrainer {
   public:
    CatTrainer(CatModel<T>& model, AdamOptions options);

    // One Adam step on the teacher-forced NLL; returns the loss before the step.
    double step(std::span<const std::int32_t> s, int batch, const Condition& c);

    Adam<T>& optimizer() { return adam_; }
    const Adam<T>& optimizer() const { return adam_; }

   private:
    CatModel<T>& model_;
    Adam<T> adam_;
};

// Jensen-Shannon divergence (natural log) between two histograms.
double js_divergence(std::span<const double> p, std::span<const double> q);

extern template class CatModel<float>;
extern template class CatModel<double>;
extern template class CatTrainer<float>;
extern template class CatTrainer<double>;

}  // namespace favae::cat
