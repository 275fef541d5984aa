#include "favae/cat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "favae/error.hpp"
#include "favae/model.hpp"
#include "favae/ops.hpp"

namespace favae::cat {

namespace {

void check_tokens(std::span<const std::int32_t> s, int limit, const char* what) {
    for (auto t : s) {
        if (t < 0 || t >= limit) throw ContractError(std::string(what) + " index " + std::to_string(t) + " out of vocab");
    }
}

// Log-softmax at the target of each row of logits[N, V], in double.
std::vector<double> target_log_probs(std::span<const double> logits, std::int64_t v, std::span<const std::int32_t> targets) {
    std::vector<double> out(targets.size());
    for (std::size_t r = 0; r < targets.size(); ++r) {
        const auto row = logits.subspan(r * v, v);
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0;
        for (auto x : row) z += std::exp(x - m);
        out[r] = row[targets[r]] - m - std::log(z);
    }
    return out;
}

}  // namespace

void CatSpec::validate() const {
    if (vocab < 1 || context < 1 || layers < 0 || heads < 1 || width < 1 || ff < 1 || cond_vocab < 1 || cond_width < 1) {
        throw ContractError("cat spec: sizes must be positive");
    }
    if (width % heads != 0) throw ContractError("cat spec: width must be divisible by heads");
}

std::string CatSpec::canonical() const {
    std::ostringstream o;
    o << "vocab=" << vocab << "\ncontext=" << context << "\nlayers=" << layers << "\nheads=" << heads
      << "\nwidth=" << width << "\nff=" << ff << "\ncond_vocab=" << cond_vocab << "\ncond_width=" << cond_width << "\n";
    return o.str();
}

std::uint64_t CatSpec::digest() const { return model::fnv1a(canonical()); }

CatSpec CatSpec::from_canonical(const std::string& text) {
    CatSpec s;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("cat spec text: malformed line '" + line + "'");
        const auto k = line.substr(0, eq);
        const int v = std::stoi(line.substr(eq + 1));
        if (k == "vocab") s.vocab = v;
        else if (k == "context") s.context = v;
        else if (k == "layers") s.layers = v;
        else if (k == "heads") s.heads = v;
        else if (k == "width") s.width = v;
        else if (k == "ff") s.ff = v;
        else if (k == "cond_vocab") s.cond_vocab = v;
        else if (k == "cond_width") s.cond_width = v;
        else throw IoError("cat spec text: unknown key '" + k + "'");
    }
    s.validate();
    return s;
}

template <typename T>
Tensor<T>& CatModel<T>::normal(const std::string& name, Shape shape, double std, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ model::fnv1a(name));
    std::normal_distribution<double> g(0.0, std);
    std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = static_cast<T>(g(rng));
    return params_[name] = Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T>& CatModel<T>::constant(const std::string& name, Shape shape, T value) {
    return params_[name] = Tensor<T>::full(std::move(shape), value, true);
}

template <typename T>
const Tensor<T>& CatModel<T>::p(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("cat: missing parameter " + name);
    return it->second;
}

template <typename T>
CatModel<T>::CatModel(const CatSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec.validate();
    const int w = spec.width;
    const double out_std = 0.02 / std::sqrt(2.0 * std::max(1, spec.layers));
    auto linear = [&](const std::string& name, int in, int out, double std) {
        normal(name + ".w", {in, out}, std, seed);
        constant(name + ".b", {out}, T(0));
    };
    auto norm = [&](const std::string& name) {
        constant(name + ".g", {w}, T(1));
        constant(name + ".b", {w}, T(0));
    };
    normal("tok", {spec.vocab + 1, w}, 0.02, seed);
    normal("pos", {spec.context, w}, 0.02, seed);
    normal("cond", {spec.cond_vocab, spec.cond_width}, 1.0, seed);
    for (int l = 0; l < spec.layers; ++l) {
        const std::string b = "block." + std::to_string(l);
        norm(b + ".ln1");
        norm(b + ".ln2");
        norm(b + ".ln3");
        for (const char* kind : {".self", ".cross"}) {
            const int mem = std::string(kind) == ".cross" ? spec.cond_width : w;
            linear(b + kind + ".q", w, w, 0.02);
            linear(b + kind + ".k", mem, w, 0.02);
            linear(b + kind + ".v", mem, w, 0.02);
            linear(b + kind + ".o", w, w, out_std);
        }
        linear(b + ".mlp.fc", w, spec.ff, 0.02);
        linear(b + ".mlp.proj", spec.ff, w, out_std);
    }
    norm("ln_f");
    linear("head", w, spec.vocab, 0.02);
}

template <typename T>
Tensor<T> CatModel<T>::attend(const std::string& name, const Tensor<T>& x, const Tensor<T>& memory,
                              std::span<const std::uint8_t> keep) const {
    const auto b = x.dim(0), n = x.dim(1), m = memory.dim(1);
    const std::int64_t h = spec_.heads, dh = spec_.width / spec_.heads;
    auto split = [&](const Tensor<T>& t, std::int64_t len) {
        return ops::reshape(ops::permute(ops::reshape(t, {b, len, h, dh}), {0, 2, 1, 3}), {b * h, len, dh});
    };
    auto q = split(ops::linear(x, p(name + ".q.w"), p(name + ".q.b")), n);
    auto k = split(ops::linear(memory, p(name + ".k.w"), p(name + ".k.b")), m);
    auto v = split(ops::linear(memory, p(name + ".v.w"), p(name + ".v.b")), m);
    auto scores = ops::scale(ops::bmm(q, k, true), T(1.0 / std::sqrt(static_cast<double>(dh))));
    auto mixed = ops::bmm(ops::softmax(scores, keep), v);
    auto merged = ops::reshape(ops::permute(ops::reshape(mixed, {b, h, n, dh}), {0, 2, 1, 3}), {b, n, spec_.width});
    return ops::linear(merged, p(name + ".o.w"), p(name + ".o.b"));
}

template <typename T>
Tensor<T> CatModel<T>::embed_condition(const Condition& c) const {
    if (c.batch < 1 || c.length < 1 || static_cast<int>(c.tokens.size()) != c.batch * c.length) {
        throw DimensionError("cat: condition tokens do not match [batch, length]");
    }
    check_tokens(c.tokens, spec_.cond_vocab, "condition");
    return ops::embedding(p("cond"), c.tokens, {c.batch, c.length});
}

template <typename T>
Tensor<T> CatModel<T>::forward(std::span<const std::int32_t> s, int batch, const Condition& c) const {
    if (c.batch != batch) throw DimensionError("cat: condition batch differs from sequence batch");
    return forward(s, batch, embed_condition(c), c.keep);
}

template <typename T>
Tensor<T> CatModel<T>::forward(std::span<const std::int32_t> s, int batch, const Tensor<T>& cond,
                               std::span<const std::uint8_t> keep) const {
    if (batch < 1 || s.empty() || s.size() % batch != 0) throw DimensionError("cat: sequence count must divide by batch");
    const auto n = static_cast<std::int64_t>(s.size()) / batch;
    if (n > spec_.context) throw DimensionError("cat: sequence longer than the context");
    if (cond.rank() != 3 || cond.dim(0) != batch || cond.dim(2) != spec_.cond_width) {
        throw DimensionError("cat: condition embeddings must be [B, T, " + std::to_string(spec_.cond_width) + "]");
    }
    const auto m = cond.dim(1);
    if (!keep.empty() && static_cast<std::int64_t>(keep.size()) != batch * m) throw DimensionError("cat: pad mask must be [B, T]");
    check_tokens(s, spec_.vocab, "sequence");

    // Shift right: position i reads s[i-1], position 0 the start token.
    std::vector<std::int32_t> inputs(s.size());
    for (int b = 0; b < batch; ++b) {
        inputs[b * n] = spec_.vocab;
        for (std::int64_t i = 1; i < n; ++i) inputs[b * n + i] = s[b * n + i - 1];
    }
    std::vector<std::int32_t> positions(s.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % n);
    auto x = ops::add(ops::embedding(p("tok"), inputs, {batch, n}), ops::embedding(p("pos"), positions, {batch, n}));

    const std::int64_t h = spec_.heads;
    std::vector<std::uint8_t> causal(std::size_t(batch * h) * n * n);
    for (std::int64_t g = 0; g < batch * h; ++g)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j) causal[(g * n + i) * n + j] = j <= i;
    std::vector<std::uint8_t> cross;
    if (!keep.empty()) {
        cross.resize(std::size_t(batch * h) * n * m);
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t g = 0; g < h; ++g)
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < m; ++j) cross[(((b * h + g) * n) + i) * m + j] = keep[b * m + j];
    }

    for (int l = 0; l < spec_.layers; ++l) {
        const std::string b = "block." + std::to_string(l);
        auto ln = [&](const char* which, const Tensor<T>& t) {
            return ops::layer_norm(t, p(b + which + ".g"), p(b + which + ".b"));
        };
        auto y = ln(".ln1", x);
        x = ops::add(x, attend(b + ".self", y, y, causal));
        x = ops::add(x, attend(b + ".cross", ln(".ln2", x), cond, cross));
        auto f = ops::gelu(ops::linear(ln(".ln3", x), p(b + ".mlp.fc.w"), p(b + ".mlp.fc.b")));
        x = ops::add(x, ops::linear(f, p(b + ".mlp.proj.w"), p(b + ".mlp.proj.b")));
    }
    x = ops::layer_norm(x, p("ln_f.g"), p("ln_f.b"));
    return ops::linear(x, p("head.w"), p("head.b"));
}

template <typename T>
Tensor<T> CatModel<T>::nll(const Tensor<T>& logits, std::span<const std::int32_t> s) {
    if (logits.rank() != 3 || logits.dim(0) * logits.dim(1) != static_cast<std::int64_t>(s.size())) {
        throw DimensionError("cat nll: logits must be [B, n, V] with B*n targets");
    }
    return ops::cross_entropy(ops::reshape(logits, {logits.dim(0) * logits.dim(1), logits.dim(2)}), s);
}

template <typename T>
std::vector<double> CatModel<T>::log_prob(std::span<const std::int32_t> s, int batch, const Condition& c) const {
    NoGradGuard guard;
    auto logits = forward(s, batch, c);
    std::vector<double> values(logits.data().begin(), logits.data().end());
    auto lp = target_log_probs(values, spec_.vocab, s);
    const std::size_t n = s.size() / batch;
    std::vector<double> out(batch, 0.0);
    for (std::size_t i = 0; i < lp.size(); ++i) out[i / n] += lp[i];
    return out;
}

template <typename T>
std::vector<double> CatModel<T>::sequential_log_prob(std::span<const std::int32_t> s, int batch, const Condition& c) const {
    NoGradGuard guard;
    if (batch < 1 || s.size() % batch != 0) throw DimensionError("cat: sequence count must divide by batch");
    const std::size_t n = s.size() / batch;
    std::vector<double> out(batch, 0.0);
    const auto cond = embed_condition(c);
    std::vector<std::int32_t> prefix;
    for (std::size_t i = 0; i < n; ++i) {
        prefix.clear();
        for (int b = 0; b < batch; ++b) prefix.insert(prefix.end(), s.begin() + b * n, s.begin() + b * n + i + 1);
        auto logits = forward(prefix, batch, cond, c.keep);
        for (int b = 0; b < batch; ++b) {
            const auto row = logits.data().subspan((b * (i + 1) + i) * spec_.vocab, spec_.vocab);
            std::vector<double> values(row.begin(), row.end());
            const std::int32_t target = s[b * n + i];
            out[b] += target_log_probs(values, spec_.vocab, std::span(&target, 1))[0];
        }
    }
    return out;
}

template <typename T>
std::vector<std::int32_t> CatModel<T>::sample(const Condition& c, const SampleOptions& options) const {
    if (!options.greedy && !(options.temperature > 0)) throw ContractError("cat sample: temperature must be positive");
    if (options.top_k < 0) throw ContractError("cat sample: top_k must be non-negative");
    NoGradGuard guard;
    const int batch = c.batch;
    const int n = spec_.context, v = spec_.vocab;
    const auto cond = embed_condition(c);
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<std::int32_t>> seqs(batch);
    std::vector<std::int32_t> prefix;
    for (int i = 0; i < n; ++i) {
        prefix.clear();
        // The token at position i is a placeholder; logits[:, i] never read it.
        for (int b = 0; b < batch; ++b) {
            prefix.insert(prefix.end(), seqs[b].begin(), seqs[b].end());
            prefix.push_back(0);
        }
        auto logits = forward(prefix, batch, cond, c.keep);
        for (int b = 0; b < batch; ++b) {
            const auto row = logits.data().subspan((std::size_t(b) * (i + 1) + i) * v, v);
            std::vector<int> order(v);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int q) { return row[a] > row[q]; });
            if (options.greedy || options.top_k == 1) {
                seqs[b].push_back(order[0]);
                continue;
            }
            const int k = options.top_k > 0 ? std::min(options.top_k, v) : v;
            std::vector<double> w(k);
            const double top = row[order[0]];
            double z = 0;
            for (int j = 0; j < k; ++j) z += w[j] = std::exp((double(row[order[j]]) - top) / options.temperature);
            double r = u(rng) * z;
            int pick = k - 1;
            for (int j = 0; j < k; ++j) {
                if ((r -= w[j]) < 0) {
                    pick = j;
                    break;
                }
            }
            seqs[b].push_back(order[pick]);
        }
    }
    std::vector<std::int32_t> out;
    for (auto& s : seqs) out.insert(out.end(), s.begin(), s.end());
    return out;
}

template <typename T>
std::vector<std::string> CatModel<T>::trainable_names() const {
    std::vector<std::string> names;
    for (auto& [name, t] : params_) names.push_back(name);
    return names;
}

template <typename T>
std::vector<Tensor<T>> CatModel<T>::trainable() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : params_) out.push_back(t);
    return out;
}

template <typename T>
CatTrainer<T>::CatTrainer(CatModel<T>& model, AdamOptions options) : model_(model), adam_(model.trainable(), options) {}

template <typename T>
double CatTrainer<T>::step(std::span<const std::int32_t> s, int batch, const Condition& c) {
    auto loss = CatModel<T>::nll(model_.forward(s, batch, c), s);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("cat: non-finite loss at step " + std::to_string(adam_.step_count()));
    adam_.zero_grad();
    loss.backward();
    adam_.step();
    return value;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty()) throw DimensionError("js_divergence: histograms differ in size");
    const double sp = std::accumulate(p.begin(), p.end(), 0.0), sq = std::accumulate(q.begin(), q.end(), 0.0);
    if (!(sp > 0) || !(sq > 0)) throw ContractError("js_divergence: empty histogram");
    double js = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double a = p[i] / sp, b = q[i] / sq, m = 0.5 * (a + b);
        if (a > 0) js += 0.5 * a * std::log(a / m);
        if (b > 0) js += 0.5 * b * std::log(b / m);
    }
    return js;
}

template class CatModel<float>;
template class CatModel<double>;
template class CatTrainer<float>;
template class CatTrainer<double>;

}  // namespace favae::cat
