#include "favae/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "favae/fault.hpp"

namespace favae::ops {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

using Index = std::int64_t;
template <typename T>
std::size_t usize(T v) {
    return static_cast<std::size_t>(v);
}

template <typename T>
void require_finite(const std::vector<T>& v, const char* op) {
    for (const T x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value produced");
    }
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor argument");
}

// out_p = factor * L * X_p * R for every plane, as two large products: the planes are
// stacked row-wise for R, then column-wise for L.
template <typename T, typename LeftMat, typename RightMat>
void apply_planes(const T* x, T* out, Index planes, const LeftMat& l, const RightMat& r, T factor) {
    const Index m2 = l.rows(), m = l.cols(), n = r.rows(), n2 = r.cols();
    MatR<T> y = CMapR<T>(x, planes * m, n) * r;
    MatR<T> cols(m, planes * n2);
    for (Index p = 0; p < planes; ++p) cols.middleCols(p * n2, n2) = y.middleRows(p * m, m);
    MatR<T> z = factor * (l * cols);
    for (Index p = 0; p < planes; ++p) MapR<T>(out + p * m2 * n2, m2, n2) = z.middleCols(p * n2, n2);
}

template <typename T>
Shape broadcast_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require_defined(a, op);
    require_defined(b, op);
    if (a.shape() == b.shape()) return a.shape();
    if (b.numel() == 1) return a.shape();
    if (a.numel() == 1) return b.shape();
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are neither equal nor scalar");
}

// f(x, y) -> value; ga(x, y, out) and gb(x, y, out) -> partials.
template <typename T, typename F, typename GA, typename GB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f, GA ga, GB gb, bool check = false) {
    Shape shape = broadcast_shape(a, b, op);
    const std::size_t n = usize(numel_of(shape));
    const bool sa = a.numel() == 1 && n != 1;
    const bool sb = b.numel() == 1 && n != 1;
    auto ad = a.data();
    auto bd = b.data();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[sa ? 0 : i], bd[sb ? 0 : i]);
    if (check) require_finite(out, op);
    return Tensor<T>::make(std::move(shape), std::move(out), {&a, &b}, op, [=](typename Tensor<T>::NodeT& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        const auto& g = o.grad;
        if (pa.requires_grad) {
            auto da = pa.grad_acc();
            for (std::size_t i = 0; i < n; ++i) {
                const T x = pa.data[sa ? 0 : i], y = pb.data[sb ? 0 : i];
                da[sa ? 0 : i] += g[i] * ga(x, y, o.data[i]);
            }
        }
        if (pb.requires_grad) {
            auto db = pb.grad_acc();
            for (std::size_t i = 0; i < n; ++i) {
                const T x = pa.data[sa ? 0 : i], y = pb.data[sb ? 0 : i];
                db[sb ? 0 : i] += g[i] * gb(x, y, o.data[i]);
            }
        }
    });
}

// f(x) -> value; df(x, y) -> derivative.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, const char* op, F f, DF df, bool check = false, T grad_factor = T(1)) {
    require_defined(a, op);
    auto ad = a.data();
    std::vector<T> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
    if (check) require_finite(out, op);
    return Tensor<T>::make(a.shape(), std::move(out), {&a}, op, [=](typename Tensor<T>::NodeT& o) {
        auto& p = *o.parents[0];
        auto dp = p.grad_acc();
        for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += grad_factor * o.grad[i] * df(p.data[i], o.data[i]);
    });
}

template <typename T>
T sigmoid_of(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T, T y, T z) { return -z / y; }, true);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
    return unary(
        a, "add_scalar", [=](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    return unary(
        a, "scale", [=](T x) { return x * factor; }, [=](T, T) { return factor; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary(
        a, "relu", [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary(
        a, "sigmoid", [](T x) { return sigmoid_of(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> swish(const Tensor<T>& a) {
    return unary(
        a, "swish", [](T x) { return x * sigmoid_of(x); },
        [](T x, T) {
            const T s = sigmoid_of(x);
            return s + x * s * (T(1) - s);
        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k = T(0.044715);
    return unary(
        a, "gelu", [=](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
        [=](T x, T) {
            const T t = std::tanh(c * (x + k * x * x * x));
            return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
        });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    return unary(
        a, "softplus",
        [](T x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](T x, T) { return sigmoid_of(x); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary(
        a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; }, true);
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return unary(
        a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; }, true);
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    return unary(
        a, "sqrt", [](T x) { return std::sqrt(x); }, [](T, T y) { return y > 0 ? T(0.5) / y : T(0); }, true);
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
    return unary(
        a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    return unary(
        a, "abs", [](T x) { return std::abs(x); },
        [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> pow(const Tensor<T>& a, T exponent) {
    return unary(
        a, "pow", [=](T x) { return std::pow(x, exponent); },
        [=](T x, T) { return x == T(0) && exponent >= T(1) ? (exponent == T(1) ? T(1) : T(0)) : exponent * std::pow(x, exponent - T(1)); },
        true, fault::factor<T>(fault::Site::pow));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    require_defined(a, "sum");
    auto d = a.data();
    T s = std::accumulate(d.begin(), d.end(), T(0));
    return Tensor<T>::make({}, {s}, {&a}, "sum", [](typename Tensor<T>::NodeT& o) {
        auto dp = o.parents[0]->grad_acc();
        for (auto& g : dp) g += o.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    require_defined(a, "mean");
    if (a.numel() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    require_defined(a, "reshape");
    if (numel_of(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    return Tensor<T>::make(std::move(shape), std::move(out), {&a}, "reshape", [](typename Tensor<T>::NodeT& o) {
        auto dp = o.parents[0]->grad_acc();
        for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += o.grad[i];
    });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm) {
    require_defined(a, "permute");
    const std::size_t r = a.rank();
    if (perm.size() != r) throw DimensionError("permute: permutation rank mismatch");
    std::vector<bool> used(r, false);
    for (int p : perm) {
        if (p < 0 || usize(p) >= r || used[usize(p)]) throw DimensionError("permute: invalid permutation");
        used[usize(p)] = true;
    }
    const Shape& in = a.shape();
    std::vector<Index> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
    Shape out_shape(r);
    std::vector<Index> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in[usize(perm[i])];
        src_stride[i] = in_stride[usize(perm[i])];
    }
    const std::size_t n = usize(a.numel());
    // map[i] = source offset of output element i
    auto map = std::make_shared<std::vector<Index>>(n);
    std::vector<Index> idx(r, 0);
    Index off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (*map)[i] = off;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out_shape[d]) {
                off += src_stride[d];
                break;
            }
            off -= src_stride[d] * (out_shape[d] - 1);
            idx[d] = 0;
        }
    }
    auto ad = a.data();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = ad[usize((*map)[i])];
    return Tensor<T>::make(std::move(out_shape), std::move(out), {&a}, "permute",
                           [map](typename Tensor<T>::NodeT& o) {
                               auto dp = o.parents[0]->grad_acc();
                               for (std::size_t i = 0; i < o.grad.size(); ++i) dp[usize((*map)[i])] += o.grad[i];
                           });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(usize(m * n));
    MapR<T>(out.data(), m, n).noalias() = CMapR<T>(a.data().data(), m, k) * CMapR<T>(b.data().data(), k, n);
    return Tensor<T>::make({m, n}, std::move(out), {&a, &b}, "matmul", [=](typename Tensor<T>::NodeT& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        CMapR<T> g(o.grad.data(), m, n);
        if (pa.requires_grad) {
            MapR<T>(pa.grad_acc().data(), m, k).noalias() += g * CMapR<T>(pb.data.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
            MapR<T>(pb.grad_acc().data(), k, n).noalias() += CMapR<T>(pa.data.data(), m, k).transpose() * g;
        }
    });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
    require_defined(a, "bmm");
    require_defined(b, "bmm");
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(transpose_b ? 2 : 1)) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const Index n = transpose_b ? b.dim(1) : b.dim(2);
    std::vector<T> out(usize(batch * m * n));
    for (Index i = 0; i < batch; ++i) {
        CMapR<T> am(a.data().data() + i * m * k, m, k);
        MapR<T> om(out.data() + i * m * n, m, n);
        if (transpose_b) {
            om.noalias() = am * CMapR<T>(b.data().data() + i * n * k, n, k).transpose();
        } else {
            om.noalias() = am * CMapR<T>(b.data().data() + i * k * n, k, n);
        }
    }
    return Tensor<T>::make({batch, m, n}, std::move(out), {&a, &b}, "bmm", [=](typename Tensor<T>::NodeT& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        for (Index i = 0; i < batch; ++i) {
            CMapR<T> g(o.grad.data() + i * m * n, m, n);
            CMapR<T> am(pa.data.data() + i * m * k, m, k);
            if (transpose_b) {
                CMapR<T> bm(pb.data.data() + i * n * k, n, k);
                if (pa.requires_grad) MapR<T>(pa.grad_acc().data() + i * m * k, m, k).noalias() += g * bm;
                if (pb.requires_grad) MapR<T>(pb.grad_acc().data() + i * n * k, n, k).noalias() += g.transpose() * am;
            } else {
                CMapR<T> bm(pb.data.data() + i * k * n, k, n);
                if (pa.requires_grad) MapR<T>(pa.grad_acc().data() + i * m * k, m, k).noalias() += g * bm.transpose();
                if (pb.requires_grad) MapR<T>(pb.grad_acc().data() + i * k * n, k, n).noalias() += am.transpose() * g;
            }
        }
    });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    require_defined(x, "linear");
    require_defined(w, "linear");
    if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(w.shape()));
    }
    const bool has_bias = bias.defined();
    const Index in = w.dim(0), outd = w.dim(1), rows = x.numel() / in;
    if (has_bias && (bias.numel() != outd)) throw DimensionError("linear: bias size mismatch");
    std::vector<T> out(usize(rows * outd));
    MapR<T> om(out.data(), rows, outd);
    om.noalias() = CMapR<T>(x.data().data(), rows, in) * CMapR<T>(w.data().data(), in, outd);
    if (has_bias) {
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data().data(), outd);
        om.rowwise() += bv;
    }
    Shape shape = x.shape();
    shape.back() = outd;
    std::vector<const Tensor<T>*> inputs{&x, &w};
    if (has_bias) inputs.push_back(&bias);
    return Tensor<T>::make(std::move(shape), std::move(out), inputs, "linear", [=](typename Tensor<T>::NodeT& o) {
        auto& px = *o.parents[0];
        auto& pw = *o.parents[1];
        CMapR<T> g(o.grad.data(), rows, outd);
        if (px.requires_grad) {
            MapR<T>(px.grad_acc().data(), rows, in).noalias() += g * CMapR<T>(pw.data.data(), in, outd).transpose();
        }
        if (pw.requires_grad) {
            MapR<T>(pw.grad_acc().data(), in, outd).noalias() += CMapR<T>(px.data.data(), rows, in).transpose() * g;
        }
        if (has_bias && o.parents[2]->requires_grad) {
            // Plain loops: Eigen's vectorized reductions peel by pointer alignment,
            // which would make results depend on where the heap placed a buffer.
            auto db = o.parents[2]->grad_acc();
            for (Index r = 0; r < rows; ++r)
                for (Index c = 0; c < outd; ++c) db[c] += g(r, c);
        }
    });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride, int padding) {
    require_defined(x, "conv2d");
    require_defined(w, "conv2d");
    if (x.rank() != 4 || w.rank() != 4) throw DimensionError("conv2d: expected 4-d input and weight");
    if (stride < 1 || padding < 0) throw ContractError("conv2d: stride must be positive, padding non-negative");
    const Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const Index oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != ch) {
        throw DimensionError("conv2d: input has " + std::to_string(ch) + " channels, weight expects " +
                             std::to_string(w.dim(1)));
    }
    if (kh > h + 2 * padding || kw > wd + 2 * padding) throw DimensionError("conv2d: kernel larger than padded input");
    const bool has_bias = bias.defined();
    if (has_bias && bias.numel() != oc) throw DimensionError("conv2d: bias size mismatch");
    const Index oh = (h + 2 * padding - kh) / stride + 1;
    const Index ow = (wd + 2 * padding - kw) / stride + 1;
    const Index ckk = ch * kh * kw, hw = oh * ow;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

    // Column buffers are kept for the backward pass (weight gradient).
    auto cols = std::make_shared<std::vector<T>>(pointwise ? 0 : usize(batch * ckk * hw));
    auto xd = x.data();
    if (!pointwise) {
        for (Index b = 0; b < batch; ++b) {
            T* col = cols->data() + b * ckk * hw;
            const T* img = xd.data() + b * ch * h * wd;
            for (Index c = 0; c < ch; ++c) {
                for (Index i = 0; i < kh; ++i) {
                    for (Index j = 0; j < kw; ++j) {
                        T* row = col + ((c * kh + i) * kw + j) * hw;
                        for (Index y = 0; y < oh; ++y) {
                            const Index sy = y * stride - padding + i;
                            T* dst = row + y * ow;
                            if (sy < 0 || sy >= h) {
                                std::fill(dst, dst + ow, T(0));
                                continue;
                            }
                            const T* src = img + (c * h + sy) * wd;
                            for (Index xo = 0; xo < ow; ++xo) {
                                const Index sx = xo * stride - padding + j;
                                dst[xo] = (sx >= 0 && sx < wd) ? src[sx] : T(0);
                            }
                        }
                    }
                }
            }
        }
    }
    std::vector<T> out(usize(batch * oc * hw));
    CMapR<T> wm(w.data().data(), oc, ckk);
    for (Index b = 0; b < batch; ++b) {
        const T* col = pointwise ? xd.data() + b * ch * hw : cols->data() + b * ckk * hw;
        MapR<T> om(out.data() + b * oc * hw, oc, hw);
        om.noalias() = wm * CMapR<T>(col, ckk, hw);
        if (has_bias) {
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.data().data(), oc);
            om.colwise() += bv;
        }
    }
    std::vector<const Tensor<T>*> inputs{&x, &w};
    if (has_bias) inputs.push_back(&bias);
    const T gf = fault::factor<T>(fault::Site::conv2d);
    return Tensor<T>::make({batch, oc, oh, ow}, std::move(out), inputs, "conv2d",
                           [=](typename Tensor<T>::NodeT& o) {
        auto& px = *o.parents[0];
        auto& pw = *o.parents[1];
        CMapR<T> wmat(pw.data.data(), oc, ckk);
        std::vector<T> dcol(px.requires_grad ? usize(ckk * hw) : 0);
        for (Index b = 0; b < batch; ++b) {
            CMapR<T> g(o.grad.data() + b * oc * hw, oc, hw);
            const T* col = pointwise ? px.data.data() + b * ch * hw : cols->data() + b * ckk * hw;
            if (pw.requires_grad) {
                MapR<T>(pw.grad_acc().data(), oc, ckk).noalias() += gf * (g * CMapR<T>(col, ckk, hw).transpose());
            }
            if (has_bias && o.parents[2]->requires_grad) {
                auto db = o.parents[2]->grad_acc();
                for (Index r = 0; r < oc; ++r) {
                    T acc = 0;
                    for (Index c = 0; c < hw; ++c) acc += g(r, c);
                    db[r] += acc;
                }
            }
            if (!px.requires_grad) continue;
            T* dimg = px.grad_acc().data() + b * ch * h * wd;
            if (pointwise) {
                MapR<T>(dimg, ch, hw).noalias() += wmat.transpose() * g;
                continue;
            }
            MapR<T>(dcol.data(), ckk, hw).noalias() = wmat.transpose() * g;
            for (Index c = 0; c < ch; ++c) {
                for (Index i = 0; i < kh; ++i) {
                    for (Index j = 0; j < kw; ++j) {
                        const T* row = dcol.data() + ((c * kh + i) * kw + j) * hw;
                        for (Index y = 0; y < oh; ++y) {
                            const Index sy = y * stride - padding + i;
                            if (sy < 0 || sy >= h) continue;
                            T* dst = dimg + (c * h + sy) * wd;
                            for (Index xo = 0; xo < ow; ++xo) {
                                const Index sx = xo * stride - padding + j;
                                if (sx >= 0 && sx < wd) dst[sx] += row[y * ow + xo];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& k) {
    require_defined(x, "depthwise_conv2d");
    require_defined(k, "depthwise_conv2d");
    if (x.rank() < 2 || k.rank() != 2) throw DimensionError("depthwise_conv2d: expected x[..., H, W] and k[kh, kw]");
    const Index h = x.dim(-2), wd = x.dim(-1), kh = k.dim(0), kw = k.dim(1);
    if (kh > h || kw > wd) throw DimensionError("depthwise_conv2d: kernel larger than input");
    const Index oh = h - kh + 1, ow = wd - kw + 1;
    const Index planes = x.numel() / (h * wd);
    auto xd = x.data();
    auto kd = k.data();
    std::vector<T> out(usize(planes * oh * ow), T(0));
    for (Index p = 0; p < planes; ++p) {
        const T* src = xd.data() + p * h * wd;
        T* dst = out.data() + p * oh * ow;
        for (Index a = 0; a < kh; ++a) {
            for (Index b = 0; b < kw; ++b) {
                const T kv = kd[usize(a * kw + b)];
                for (Index i = 0; i < oh; ++i) {
                    const T* s = src + (i + a) * wd + b;
                    T* d = dst + i * ow;
                    for (Index j = 0; j < ow; ++j) d[j] += kv * s[j];
                }
            }
        }
    }
    Shape shape = x.shape();
    shape[shape.size() - 2] = oh;
    shape.back() = ow;
    const T gf = fault::factor<T>(fault::Site::depthwise_conv2d);
    return Tensor<T>::make(std::move(shape), std::move(out), {&x, &k}, "depthwise_conv2d",
                           [=](typename Tensor<T>::NodeT& o) {
        auto& px = *o.parents[0];
        auto& pk = *o.parents[1];
        for (Index p = 0; p < planes; ++p) {
            const T* g = o.grad.data() + p * oh * ow;
            const T* src = px.data.data() + p * h * wd;
            for (Index a = 0; a < kh; ++a) {
                for (Index b = 0; b < kw; ++b) {
                    const T kv = pk.data[usize(a * kw + b)];
                    T dk = 0;
                    for (Index i = 0; i < oh; ++i) {
                        const T* s = src + (i + a) * wd + b;
                        const T* gr = g + i * ow;
                        for (Index j = 0; j < ow; ++j) dk += gr[j] * s[j];
                    }
                    if (pk.requires_grad) pk.grad_acc()[usize(a * kw + b)] += gf * dk;
                    if (px.requires_grad) {
                        T* dx = px.grad_acc().data() + p * h * wd;
                        for (Index i = 0; i < oh; ++i) {
                            T* d = dx + (i + a) * wd + b;
                            const T* gr = g + i * ow;
                            for (Index j = 0; j < ow; ++j) d[j] += kv * gr[j];
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
Tensor<T> pad_reflect(const Tensor<T>& x, int pad) {
    require_defined(x, "pad_reflect");
    if (x.rank() < 2) throw DimensionError("pad_reflect: expected x[..., H, W]");
    const Index h = x.dim(-2), wd = x.dim(-1);
    if (pad < 0 || pad >= h || pad >= wd) {
        throw DimensionError("pad_reflect: padding " + std::to_string(pad) + " needs spatial size > padding, got " +
                             shape_str(x.shape()));
    }
    const Index oh = h + 2 * pad, ow = wd + 2 * pad, planes = x.numel() / (h * wd);
    auto reflect = [](Index t, Index n) { return t < 0 ? -t : (t >= n ? 2 * (n - 1) - t : t); };
    auto src_index = std::make_shared<std::vector<Index>>(usize(oh * ow));
    for (Index i = 0; i < oh; ++i) {
        for (Index j = 0; j < ow; ++j) (*src_index)[usize(i * ow + j)] = reflect(i - pad, h) * wd + reflect(j - pad, wd);
    }
    auto xd = x.data();
    std::vector<T> out(usize(planes * oh * ow));
    for (Index p = 0; p < planes; ++p) {
        for (Index i = 0; i < oh * ow; ++i) out[usize(p * oh * ow + i)] = xd[usize(p * h * wd + (*src_index)[usize(i)])];
    }
    Shape shape = x.shape();
    shape[shape.size() - 2] = oh;
    shape.back() = ow;
    return Tensor<T>::make(std::move(shape), std::move(out), {&x}, "pad_reflect", [=](typename Tensor<T>::NodeT& o) {
        auto dx = o.parents[0]->grad_acc();
        for (Index p = 0; p < planes; ++p) {
            for (Index i = 0; i < oh * ow; ++i) {
                dx[usize(p * h * wd + (*src_index)[usize(i)])] += o.grad[usize(p * oh * ow + i)];
            }
        }
    });
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    require_defined(x, "upsample_nearest2x");
    if (x.rank() < 2) throw DimensionError("upsample_nearest2x: expected x[..., H, W]");
    const Index h = x.dim(-2), wd = x.dim(-1), planes = x.numel() / (h * wd);
    const Index oh = 2 * h, ow = 2 * wd;
    auto xd = x.data();
    std::vector<T> out(usize(planes * oh * ow));
    for (Index p = 0; p < planes; ++p) {
        for (Index i = 0; i < oh; ++i) {
            const T* src = xd.data() + p * h * wd + (i / 2) * wd;
            T* dst = out.data() + p * oh * ow + i * ow;
            for (Index j = 0; j < ow; ++j) dst[j] = src[j / 2];
        }
    }
    Shape shape = x.shape();
    shape[shape.size() - 2] = oh;
    shape.back() = ow;
    return Tensor<T>::make(std::move(shape), std::move(out), {&x}, "upsample_nearest2x",
                           [=](typename Tensor<T>::NodeT& o) {
        auto dx = o.parents[0]->grad_acc();
        for (Index p = 0; p < planes; ++p) {
            for (Index i = 0; i < oh; ++i) {
                T* dst = dx.data() + p * h * wd + (i / 2) * wd;
                const T* g = o.grad.data() + p * oh * ow + i * ow;
                for (Index j = 0; j < ow; ++j) dst[j / 2] += g[j];
            }
        }
    });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    require_defined(x, "group_norm");
    if (x.rank() != 4) throw DimensionError("group_norm: expected [B,C,H,W]");
    const Index batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3), n = ch * hw;
    if (gamma.numel() != ch || beta.numel() != ch) throw DimensionError("group_norm: affine size mismatch");
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    auto xhat = std::make_shared<std::vector<T>>(usize(batch * n));
    auto inv_std = std::make_shared<std::vector<T>>(usize(batch));
    std::vector<T> out(usize(batch * n));
    for (Index b = 0; b < batch; ++b) {
        const T* src = xd.data() + b * n;
        T m = 0;
        for (Index i = 0; i < n; ++i) m += src[i];
        m /= static_cast<T>(n);
        T v = 0;
        for (Index i = 0; i < n; ++i) v += (src[i] - m) * (src[i] - m);
        v /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(v + eps);
        (*inv_std)[usize(b)] = is;
        for (Index c = 0; c < ch; ++c) {
            for (Index i = 0; i < hw; ++i) {
                const Index k = c * hw + i;
                const T xh = (src[k] - m) * is;
                (*xhat)[usize(b * n + k)] = xh;
                out[usize(b * n + k)] = gd[usize(c)] * xh + bd[usize(c)];
            }
        }
    }
    return Tensor<T>::make(x.shape(), std::move(out), {&x, &gamma, &beta}, "group_norm",
                           [=](typename Tensor<T>::NodeT& o) {
        auto& px = *o.parents[0];
        auto& pg = *o.parents[1];
        auto& pb = *o.parents[2];
        std::vector<T> dxh(usize(n));
        for (Index b = 0; b < batch; ++b) {
            const T* g = o.grad.data() + b * n;
            const T* xh = xhat->data() + b * n;
            T sum_d = 0, sum_dx = 0;
            for (Index c = 0; c < ch; ++c) {
                T dg = 0, db = 0;
                const T gc = pg.data[usize(c)];
                for (Index i = 0; i < hw; ++i) {
                    const Index k = c * hw + i;
                    dg += g[k] * xh[k];
                    db += g[k];
                    dxh[usize(k)] = g[k] * gc;
                    sum_d += dxh[usize(k)];
                    sum_dx += dxh[usize(k)] * xh[k];
                }
                if (pg.requires_grad) pg.grad_acc()[usize(c)] += dg;
                if (pb.requires_grad) pb.grad_acc()[usize(c)] += db;
            }
            if (!px.requires_grad) continue;
            auto dx = px.grad_acc();
            const T is = (*inv_std)[usize(b)];
            const T inv_n = T(1) / static_cast<T>(n);
            for (Index k = 0; k < n; ++k) {
                dx[usize(b * n + k)] += is * (dxh[usize(k)] - inv_n * sum_d - xh[k] * inv_n * sum_dx);
            }
        }
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    require_defined(x, "layer_norm");
    const Index d = x.dim(-1), rows = x.numel() / d;
    if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: affine size mismatch");
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    auto xhat = std::make_shared<std::vector<T>>(usize(rows * d));
    auto inv_std = std::make_shared<std::vector<T>>(usize(rows));
    std::vector<T> out(usize(rows * d));
    for (Index r = 0; r < rows; ++r) {
        const T* src = xd.data() + r * d;
        T m = 0;
        for (Index i = 0; i < d; ++i) m += src[i];
        m /= static_cast<T>(d);
        T v = 0;
        for (Index i = 0; i < d; ++i) v += (src[i] - m) * (src[i] - m);
        v /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(v + eps);
        (*inv_std)[usize(r)] = is;
        for (Index i = 0; i < d; ++i) {
            const T xh = (src[i] - m) * is;
            (*xhat)[usize(r * d + i)] = xh;
            out[usize(r * d + i)] = gd[usize(i)] * xh + bd[usize(i)];
        }
    }
    return Tensor<T>::make(x.shape(), std::move(out), {&x, &gamma, &beta}, "layer_norm",
                           [=](typename Tensor<T>::NodeT& o) {
        auto& px = *o.parents[0];
        auto& pg = *o.parents[1];
        auto& pb = *o.parents[2];
        std::vector<T> dxh(usize(d));
        for (Index r = 0; r < rows; ++r) {
            const T* g = o.grad.data() + r * d;
            const T* xh = xhat->data() + r * d;
            T sum_d = 0, sum_dx = 0;
            for (Index i = 0; i < d; ++i) {
                if (pg.requires_grad) pg.grad_acc()[usize(i)] += g[i] * xh[i];
                if (pb.requires_grad) pb.grad_acc()[usize(i)] += g[i];
                dxh[usize(i)] = g[i] * pg.data[usize(i)];
                sum_d += dxh[usize(i)];
                sum_dx += dxh[usize(i)] * xh[i];
            }
            if (!px.requires_grad) continue;
            auto dx = px.grad_acc();
            const T is = (*inv_std)[usize(r)];
            const T inv_d = T(1) / static_cast<T>(d);
            for (Index i = 0; i < d; ++i) {
                dx[usize(r * d + i)] += is * (dxh[usize(i)] - inv_d * sum_d - xh[i] * inv_d * sum_dx);
            }
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::span<const std::uint8_t> keep) {
    require_defined(x, "softmax");
    const Index d = x.dim(-1), rows = x.numel() / d;
    if (!keep.empty() && static_cast<Index>(keep.size()) != x.numel()) {
        throw DimensionError("softmax: mask size does not match input");
    }
    auto xd = x.data();
    std::vector<T> out(usize(rows * d), T(0));
    for (Index r = 0; r < rows; ++r) {
        const T* src = xd.data() + r * d;
        const std::uint8_t* km = keep.empty() ? nullptr : keep.data() + r * d;
        T mx = -std::numeric_limits<T>::infinity();
        for (Index i = 0; i < d; ++i) {
            if (!km || km[i]) mx = std::max(mx, src[i]);
        }
        if (!std::isfinite(mx)) continue;
        T s = 0;
        T* dst = out.data() + r * d;
        for (Index i = 0; i < d; ++i) {
            if (!km || km[i]) {
                dst[i] = std::exp(src[i] - mx);
                s += dst[i];
            }
        }
        for (Index i = 0; i < d; ++i) dst[i] /= s;
    }
    const T gf = fault::factor<T>(fault::Site::softmax);
    return Tensor<T>::make(x.shape(), std::move(out), {&x}, "softmax", [=](typename Tensor<T>::NodeT& o) {
        auto dx = o.parents[0]->grad_acc();
        for (Index r = 0; r < rows; ++r) {
            const T* y = o.data.data() + r * d;
            const T* g = o.grad.data() + r * d;
            T dot = 0;
            for (Index i = 0; i < d; ++i) dot += g[i] * y[i];
            for (Index i = 0; i < d; ++i) dx[usize(r * d + i)] += gf * y[i] * (g[i] - dot);
        }
    });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
    require_defined(logits, "cross_entropy");
    if (logits.rank() != 2) throw DimensionError("cross_entropy: expected logits[N, V]");
    const Index rows = logits.dim(0), v = logits.dim(1);
    if (static_cast<Index>(targets.size()) != rows) throw DimensionError("cross_entropy: target count mismatch");
    auto ld = logits.data();
    auto probs = std::make_shared<std::vector<T>>(usize(rows * v));
    auto tg = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
    T total = 0;
    for (Index r = 0; r < rows; ++r) {
        const auto t = (*tg)[usize(r)];
        if (t < 0 || t >= v) throw ContractError("cross_entropy: target " + std::to_string(t) + " out of range");
        const T* src = ld.data() + r * v;
        const T mx = *std::max_element(src, src + v);
        T s = 0;
        for (Index i = 0; i < v; ++i) s += std::exp(src[i] - mx);
        const T lse = mx + std::log(s);
        total += lse - src[t];
        for (Index i = 0; i < v; ++i) (*probs)[usize(r * v + i)] = std::exp(src[i] - lse);
    }
    const T gf = fault::factor<T>(fault::Site::cross_entropy);
    return Tensor<T>::make({}, {total / static_cast<T>(rows)}, {&logits}, "cross_entropy",
                           [=](typename Tensor<T>::NodeT& o) {
        auto dl = o.parents[0]->grad_acc();
        const T g = gf * o.grad[0] / static_cast<T>(rows);
        for (Index r = 0; r < rows; ++r) {
            for (Index i = 0; i < v; ++i) dl[usize(r * v + i)] += g * (*probs)[usize(r * v + i)];
            dl[usize(r * v + (*tg)[usize(r)])] -= g;
        }
    });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> indices, Shape prefix) {
    require_defined(table, "embedding");
    if (table.rank() != 2) throw DimensionError("embedding: expected table[V, D]");
    if (numel_of(prefix) != static_cast<Index>(indices.size())) {
        throw DimensionError("embedding: prefix shape does not match index count");
    }
    const Index v = table.dim(0), d = table.dim(1);
    auto idx = std::make_shared<std::vector<std::int32_t>>(indices.begin(), indices.end());
    auto td = table.data();
    std::vector<T> out(idx->size() * usize(d));
    for (std::size_t i = 0; i < idx->size(); ++i) {
        const auto k = (*idx)[i];
        if (k < 0 || k >= v) throw ContractError("embedding: index " + std::to_string(k) + " out of vocab");
        std::copy_n(td.data() + k * d, d, out.data() + static_cast<Index>(i) * d);
    }
    prefix.push_back(d);
    return Tensor<T>::make(std::move(prefix), std::move(out), {&table}, "embedding",
                           [=](typename Tensor<T>::NodeT& o) {
        auto dt = o.parents[0]->grad_acc();
        for (std::size_t i = 0; i < idx->size(); ++i) {
            const Index k = (*idx)[i];
            for (Index j = 0; j < d; ++j) dt[usize(k * d + j)] += o.grad[i * usize(d) + usize(j)];
        }
    });
}

template <typename T>
Tensor<T> plane_transform(const Tensor<T>& x, std::span<const T> left, std::int64_t left_rows,
                          std::span<const T> right, std::int64_t right_cols) {
    require_defined(x, "plane_transform");
    if (x.rank() < 2) throw DimensionError("plane_transform: expected x[..., M, N]");
    const Index m = x.dim(-2), n = x.dim(-1), planes = x.numel() / (m * n);
    const Index m2 = left_rows, n2 = right_cols;
    if (static_cast<Index>(left.size()) != m2 * m || static_cast<Index>(right.size()) != n * n2) {
        throw DimensionError("plane_transform: transform matrices do not match plane size");
    }
    auto lm = std::make_shared<std::vector<T>>(left.begin(), left.end());
    auto rm = std::make_shared<std::vector<T>>(right.begin(), right.end());
    auto xd = x.data();
    std::vector<T> out(usize(planes * m2 * n2));
    CMapR<T> l(lm->data(), m2, m);
    CMapR<T> r(rm->data(), n, n2);
    apply_planes<T>(xd.data(), out.data(), planes, l, r, T(1));
    Shape shape = x.shape();
    shape[shape.size() - 2] = m2;
    shape.back() = n2;
    const T gf = fault::factor<T>(fault::Site::plane_transform);
    return Tensor<T>::make(std::move(shape), std::move(out), {&x}, "plane_transform",
                           [=](typename Tensor<T>::NodeT& o) {
        auto dx = o.parents[0]->grad_acc();
        CMapR<T> lt(lm->data(), m2, m);
        CMapR<T> rt(rm->data(), n, n2);
        std::vector<T> acc(dx.size());
        apply_planes<T>(o.grad.data(), acc.data(), planes, MatR<T>(lt.transpose()), MatR<T>(rt.transpose()), gf);
        for (std::size_t i = 0; i < acc.size(); ++i) dx[i] += acc[i];
    });
}

template <typename T>
Tensor<T> l2_normalize_lastdim(const Tensor<T>& x, T eps) {
    require_defined(x, "l2_normalize_lastdim");
    const Index d = x.dim(-1), rows = x.numel() / d;
    auto xd = x.data();
    auto norms = std::make_shared<std::vector<T>>(usize(rows));
    std::vector<T> out(usize(rows * d));
    for (Index r = 0; r < rows; ++r) {
        T s = 0;
        for (Index i = 0; i < d; ++i) s += xd[usize(r * d + i)] * xd[usize(r * d + i)];
        const T nrm = std::max(std::sqrt(s), eps);
        (*norms)[usize(r)] = nrm;
        for (Index i = 0; i < d; ++i) out[usize(r * d + i)] = xd[usize(r * d + i)] / nrm;
    }
    return Tensor<T>::make(x.shape(), std::move(out), {&x}, "l2_normalize", [=](typename Tensor<T>::NodeT& o) {
        auto dx = o.parents[0]->grad_acc();
        for (Index r = 0; r < rows; ++r) {
            const T* y = o.data.data() + r * d;
            const T* g = o.grad.data() + r * d;
            const T nrm = (*norms)[usize(r)];
            T dot = 0;
            if (nrm > eps) {
                for (Index i = 0; i < d; ++i) dot += y[i] * g[i];
            }
            for (Index i = 0; i < d; ++i) dx[usize(r * d + i)] += (g[i] - y[i] * dot) / nrm;
        }
    });
}

template <typename T>
Tensor<T> straight_through(const Tensor<T>& x, const Tensor<T>& value) {
    require_defined(x, "straight_through");
    require_defined(value, "straight_through");
    if (x.shape() != value.shape()) throw DimensionError("straight_through: shape mismatch");
    std::vector<T> out(value.data().begin(), value.data().end());
    return Tensor<T>::make(x.shape(), std::move(out), {&x}, "straight_through", [](typename Tensor<T>::NodeT& o) {
        auto dx = o.parents[0]->grad_acc();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += o.grad[i];
    });
}

#define FAVAE_INSTANTIATE_OPS(T)                                                                           \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                    \
    template Tensor<T> scale(const Tensor<T>&, T);                                                         \
    template Tensor<T> neg(const Tensor<T>&);                                                              \
    template Tensor<T> relu(const Tensor<T>&);                                                             \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                          \
    template Tensor<T> swish(const Tensor<T>&);                                                            \
    template Tensor<T> gelu(const Tensor<T>&);                                                             \
    template Tensor<T> softplus(const Tensor<T>&);                                                         \
    template Tensor<T> exp(const Tensor<T>&);                                                              \
    template Tensor<T> log(const Tensor<T>&);                                                              \
    template Tensor<T> sqrt(const Tensor<T>&);                                                             \
    template Tensor<T> square(const Tensor<T>&);                                                           \
    template Tensor<T> abs(const Tensor<T>&);                                                              \
    template Tensor<T> pow(const Tensor<T>&, T);                                                           \
    template Tensor<T> sum(const Tensor<T>&);                                                              \
    template Tensor<T> mean(const Tensor<T>&);                                                             \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                   \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                                 \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                                      \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);             \
    template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> pad_reflect(const Tensor<T>&, int);                                                 \
    template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                               \
    template Tensor<T> group_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
    template Tensor<T> softmax(const Tensor<T>&, std::span<const std::uint8_t>);                           \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);                     \
    template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>, Shape);                  \
    template Tensor<T> plane_transform(const Tensor<T>&, std::span<const T>, std::int64_t, std::span<const T>, \
                                       std::int64_t);                                                      \
    template Tensor<T> l2_normalize_lastdim(const Tensor<T>&, T);                                          \
    template Tensor<T> straight_through(const Tensor<T>&, const Tensor<T>&);

FAVAE_INSTANTIATE_OPS(float)
FAVAE_INSTANTIATE_OPS(double)

}  // namespace favae::ops
