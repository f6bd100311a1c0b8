#include "mate/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mate/simd/kernels.hpp"
#include "mate/simd/reference.hpp"

namespace mate {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

template <typename T>
struct Blas;

template <>
struct Blas<float> {
    static void nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
                   std::size_t ldb, float* c, std::size_t ldc) {
        simd::active_kernels().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
    }
    static void nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
                   std::size_t ldb, float* c, std::size_t ldc) {
        simd::active_kernels().gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
    }
    static void tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
                   std::size_t ldb, float* c, std::size_t ldc) {
        simd::active_kernels().gemm_tn(m, n, k, a, lda, b, ldb, c, ldc);
    }
};

template <>
struct Blas<double> {
    static void nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                   std::size_t ldb, double* c, std::size_t ldc) {
        simd::ref::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
    }
    static void nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                   std::size_t ldb, double* c, std::size_t ldc) {
        simd::ref::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
    }
    static void tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                   std::size_t ldb, double* c, std::size_t ldc) {
        simd::ref::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc);
    }
};

template <typename T>
Tensor<T> finish(Shape shape, std::vector<T> data, const char* op) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            std::ostringstream os;
            os << op << ": non-finite value " << data[i] << " at flat index " << i;
            throw NumericsError(os.str());
        }
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
GradTape<T>& tape_for(const char* op) {
    GradTape<T>* tape = GradTape<T>::current();
    if (tape == nullptr) throw ContractError(std::string(op) + ": input requires grad but no GradTape is active");
    return *tape;
}

// Marks y as differentiable and records fn(dy) when any input needs grads.
template <typename T, typename F>
void link(Tensor<T>& y, const char* op, bool any_input_requires_grad, F&& fn) {
    if (!any_input_requires_grad) return;
    GradTape<T>& tape = tape_for<T>(op);
    y.set_requires_grad(true);
    tape.record([yn = y.node_ptr(), fn = std::forward<F>(fn)]() {
        if (yn->grad.empty()) return;
        fn(static_cast<const std::vector<T>&>(yn->grad));
    });
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
    if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(a.shape()));
}

template <typename T>
void require_row_vector(const Tensor<T>& a, const Tensor<T>& v, const char* op) {
    require_matrix(a, op);
    if (v.numel() != a.cols())
        throw DimensionError(std::string(op) + ": row vector of " + std::to_string(v.numel()) +
                             " elements against " + std::to_string(a.cols()) + " columns");
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    auto x = a.data(), z = b.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + z[i];
    auto y = finish(a.shape(), std::move(out), "add");
    link(y, "add", a.requires_grad() || b.requires_grad(), [an = a.node_ptr(), bn = b.node_ptr()](const auto& g) {
        for (auto* n : {an.get(), bn.get()}) {
            if (!n->requires_grad) continue;
            auto& gn = n->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gn[i] += g[i];
        }
    });
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    auto x = a.data(), z = b.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - z[i];
    auto y = finish(a.shape(), std::move(out), "sub");
    link(y, "sub", a.requires_grad() || b.requires_grad(), [an = a.node_ptr(), bn = b.node_ptr()](const auto& g) {
        if (an->requires_grad) {
            auto& ga = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    auto x = a.data(), z = b.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * z[i];
    auto y = finish(a.shape(), std::move(out), "mul");
    link(y, "mul", a.requires_grad() || b.requires_grad(), [an = a.node_ptr(), bn = b.node_ptr()](const auto& g) {
        if (an->requires_grad) {
            auto& ga = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
        }
    });
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    auto x = a.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
    auto y = finish(a.shape(), std::move(out), "scale");
    link(y, "scale", a.requires_grad(), [an = a.node_ptr(), s](const auto& g) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
    return y;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    auto x = a.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
    auto y = finish(a.shape(), std::move(out), "add_scalar");
    link(y, "add_scalar", a.requires_grad(), [an = a.node_ptr()](const auto& g) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return y;
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& v) {
    require_row_vector(a, v, "add_row");
    const std::size_t n = a.rows(), m = a.cols();
    auto x = a.data(), r = v.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i * m + j] + r[j];
    auto y = finish(a.shape(), std::move(out), "add_row");
    link(y, "add_row", a.requires_grad() || v.requires_grad(),
         [an = a.node_ptr(), vn = v.node_ptr(), n, m](const auto& g) {
             if (an->requires_grad) {
                 auto& ga = an->ensure_grad();
                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
             }
             if (vn->requires_grad) {
                 auto& gv = vn->ensure_grad();
                 for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j) gv[j] += g[i * m + j];
             }
         });
    return y;
}

template <typename T>
Tensor<T> mul_row(const Tensor<T>& a, const Tensor<T>& v) {
    require_row_vector(a, v, "mul_row");
    const std::size_t n = a.rows(), m = a.cols();
    auto x = a.data(), r = v.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i * m + j] * r[j];
    auto y = finish(a.shape(), std::move(out), "mul_row");
    link(y, "mul_row", a.requires_grad() || v.requires_grad(),
         [an = a.node_ptr(), vn = v.node_ptr(), n, m](const auto& g) {
             if (an->requires_grad) {
                 auto& ga = an->ensure_grad();
                 for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i * m + j] * vn->data[j];
             }
             if (vn->requires_grad) {
                 auto& gv = vn->ensure_grad();
                 for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j) gv[j] += g[i * m + j] * an->data[i * m + j];
             }
         });
    return y;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
    if (b.rows() != q)
        throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    std::vector<T> out(p * r, T(0));
    Blas<T>::nn(p, r, q, a.data().data(), q, b.data().data(), r, out.data(), r);
    auto y = finish({p, r}, std::move(out), "matmul");
    link(y, "matmul", a.requires_grad() || b.requires_grad(),
         [an = a.node_ptr(), bn = b.node_ptr(), p, q, r](const auto& g) {
             if (an->requires_grad) Blas<T>::nt(p, q, r, g.data(), r, bn->data.data(), r, an->ensure_grad().data(), q);
             if (bn->requires_grad) Blas<T>::tn(q, r, p, an->data.data(), q, g.data(), r, bn->ensure_grad().data(), r);
         });
    return y;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_matrix(a, "transpose");
    const std::size_t n = a.rows(), m = a.cols();
    auto x = a.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x[i * m + j];
    auto y = finish({m, n}, std::move(out), "transpose");
    link(y, "transpose", a.requires_grad(), [an = a.node_ptr(), n, m](const auto& g) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j * n + i];
    });
    return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape: " + shape_string(a.shape()) + " cannot become " + shape_string(shape));
    auto x = a.data();
    auto y = Tensor<T>(std::move(shape), std::vector<T>(x.begin(), x.end()));
    link(y, "reshape", a.requires_grad(), [an = a.node_ptr()](const auto& g) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return y;
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t m = parts.front().cols();
    std::size_t n = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        require_matrix(p, "concat_rows");
        if (p.cols() != m)
            throw DimensionError("concat_rows: column mismatch " + std::to_string(p.cols()) + " vs " + std::to_string(m));
        n += p.rows();
        needs_grad = needs_grad || p.requires_grad();
    }
    std::vector<T> out;
    out.reserve(n * m);
    std::vector<typename Tensor<T>::NodePtr> nodes;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        nodes.push_back(p.node_ptr());
    }
    auto y = Tensor<T>({n, m}, std::move(out));
    link(y, "concat_rows", needs_grad, [nodes = std::move(nodes)](const auto& g) {
        std::size_t off = 0;
        for (const auto& node : nodes) {
            const std::size_t len = node->data.size();
            if (node->requires_grad) {
                auto& gn = node->ensure_grad();
                for (std::size_t i = 0; i < len; ++i) gn[i] += g[off + i];
            }
            off += len;
        }
    });
    return y;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t count) {
    require_matrix(a, "slice_rows");
    if (count == 0 || begin + count > a.rows())
        throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") outside " + shape_string(a.shape()));
    const std::size_t m = a.cols();
    auto x = a.data().subspan(begin * m, count * m);
    auto y = Tensor<T>({count, m}, std::vector<T>(x.begin(), x.end()));
    link(y, "slice_rows", a.requires_grad(), [an = a.node_ptr(), off = begin * m](const auto& g) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
    });
    return y;
}

template <typename T>
std::vector<Tensor<T>> split_rows(const Tensor<T>& a, std::span<const std::size_t> counts) {
    require_matrix(a, "split_rows");
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    if (total != a.rows())
        throw DimensionError("split_rows: counts sum to " + std::to_string(total) + " but tensor has " +
                             std::to_string(a.rows()) + " rows");
    std::vector<Tensor<T>> out;
    std::size_t off = 0;
    for (std::size_t c : counts) {
        out.push_back(slice_rows(a, off, c));
        off += c;
    }
    return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> indices) {
    require_matrix(a, "gather_rows");
    if (indices.empty()) throw DimensionError("gather_rows: empty index list");
    const std::size_t m = a.cols();
    std::vector<T> out;
    out.reserve(indices.size() * m);
    for (std::size_t idx : indices) {
        if (idx >= a.rows())
            throw DimensionError("gather_rows: index " + std::to_string(idx) + " outside " + shape_string(a.shape()));
        auto row = a.data().subspan(idx * m, m);
        out.insert(out.end(), row.begin(), row.end());
    }
    auto y = Tensor<T>({indices.size(), m}, std::move(out));
    link(y, "gather_rows", a.requires_grad(),
         [an = a.node_ptr(), idx = std::vector<std::size_t>(indices.begin(), indices.end()), m](const auto& g) {
             auto& ga = an->ensure_grad();
             for (std::size_t r = 0; r < idx.size(); ++r)
                 for (std::size_t j = 0; j < m; ++j) ga[idx[r] * m + j] += g[r * m + j];
         });
    return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>* gain, const Tensor<T>* bias, T eps) {
    require_matrix(x, "layer_norm");
    if (gain) require_row_vector(x, *gain, "layer_norm(gain)");
    if (bias) require_row_vector(x, *bias, "layer_norm(bias)");
    const std::size_t n = x.rows(), m = x.cols();
    auto in = x.data();
    std::vector<T> xhat(in.size()), inv(n), out(in.size());
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = in.data() + i * m;
        T mu = T(0);
        for (std::size_t j = 0; j < m; ++j) mu += row[j];
        mu /= T(m);
        T var = T(0);
        for (std::size_t j = 0; j < m; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= T(m);
        inv[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < m; ++j) {
            const T h = (row[j] - mu) * inv[i];
            xhat[i * m + j] = h;
            out[i * m + j] = h * (gain ? gain->data()[j] : T(1)) + (bias ? bias->data()[j] : T(0));
        }
    }
    auto y = finish(x.shape(), std::move(out), "layer_norm");
    const bool needs = x.requires_grad() || (gain && gain->requires_grad()) || (bias && bias->requires_grad());
    link(y, "layer_norm", needs,
         [xn = x.node_ptr(), gn = gain ? gain->node_ptr() : nullptr, bn = bias ? bias->node_ptr() : nullptr,
          xhat = std::move(xhat), inv = std::move(inv), n, m](const auto& g) {
             if (gn && gn->requires_grad) {
                 auto& gg = gn->ensure_grad();
                 for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j) gg[j] += g[i * m + j] * xhat[i * m + j];
             }
             if (bn && bn->requires_grad) {
                 auto& gb = bn->ensure_grad();
                 for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
             }
             if (!xn->requires_grad) return;
             auto& gx = xn->ensure_grad();
             std::vector<T> dh(m);
             for (std::size_t i = 0; i < n; ++i) {
                 T sum_dh = T(0), sum_dh_h = T(0);
                 for (std::size_t j = 0; j < m; ++j) {
                     dh[j] = g[i * m + j] * (gn ? gn->data[j] : T(1));
                     sum_dh += dh[j];
                     sum_dh_h += dh[j] * xhat[i * m + j];
                 }
                 const T k = inv[i] / T(m);
                 for (std::size_t j = 0; j < m; ++j)
                     gx[i * m + j] += k * (T(m) * dh[j] - sum_dh - xhat[i * m + j] * sum_dh_h);
             }
         });
    return y;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T a = T(0.044715);
    auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const T v = in[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
    }
    auto y = finish(x.shape(), std::move(out), "gelu");
    link(y, "gelu", x.requires_grad(), [xn = x.node_ptr()](const auto& g) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = xn->data[i];
            const T th = std::tanh(c * (v + a * v * v * v));
            const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * a * v * v);
            gx[i] += g[i] * d;
        }
    });
    return y;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] / (T(1) + std::exp(-in[i]));
    auto y = finish(x.shape(), std::move(out), "silu");
    link(y, "silu", x.requires_grad(), [xn = x.node_ptr()](const auto& g) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = xn->data[i];
            const T s = T(1) / (T(1) + std::exp(-v));
            gx[i] += g[i] * s * (T(1) + v * (T(1) - s));
        }
    });
    return y;
}

namespace {

template <typename T>
void softmax_row_inplace(T* row, std::size_t m, std::size_t row_index) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, row[j]);
    if (!(mx > -std::numeric_limits<T>::infinity()))
        throw NumericsError("softmax: row " + std::to_string(row_index) + " has no finite entry");
    T total = T(0);
    for (std::size_t j = 0; j < m; ++j) {
        row[j] = std::exp(row[j] - mx);
        total += row[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < m; ++j) row[j] *= inv;
}

}  // namespace

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    require_matrix(x, "softmax_rows");
    const std::size_t n = x.rows(), m = x.cols();
    std::vector<T> out(x.data().begin(), x.data().end());
    for (T v : out)
        if (std::isnan(v) || v == std::numeric_limits<T>::infinity())
            throw NumericsError("softmax_rows: NaN or +inf input");
    for (std::size_t i = 0; i < n; ++i) softmax_row_inplace(out.data() + i * m, m, i);
    auto y = finish(x.shape(), std::move(out), "softmax_rows");
    link(y, "softmax_rows", x.requires_grad(), [xn = x.node_ptr(), yn = y.node_ptr().get(), n, m](const auto& g) {
        auto& gx = xn->ensure_grad();
        const auto& p = yn->data;
        for (std::size_t i = 0; i < n; ++i) {
            T dotp = T(0);
            for (std::size_t j = 0; j < m; ++j) dotp += g[i * m + j] * p[i * m + j];
            for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += p[i * m + j] * (g[i * m + j] - dotp);
        }
    });
    return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.data()) acc += v;
    auto y = finish<T>(Shape{1}, std::vector<T>{acc}, "sum");
    link(y, "sum", a.requires_grad(), [an = a.node_ptr()](const auto& g) {
        auto& ga = an->ensure_grad();
        for (auto& v : ga) v += g[0];
    });
    return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / T(a.numel()));
}

template <typename T>
RopeTable<T>::RopeTable(std::span<const GridPos> positions, std::size_t head_dim, double base)
    : tokens_(positions.size()), head_dim_(head_dim), pairs_(head_dim / 2) {
    if (head_dim == 0 || head_dim % 4 != 0)
        throw DimensionError("rope: head_dim " + std::to_string(head_dim) + " is not divisible by 4");
    const std::size_t per_axis = head_dim / 4;
    std::vector<double> freq(per_axis);
    for (std::size_t i = 0; i < per_axis; ++i)
        freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim / 2));
    cos_.resize(tokens_ * pairs_);
    sin_.resize(tokens_ * pairs_);
    for (std::size_t t = 0; t < tokens_; ++t) {
        if (positions[t].row < 0 || positions[t].col < 0)
            throw RangeError("rope: negative grid position at token " + std::to_string(t));
        for (std::size_t p = 0; p < pairs_; ++p) {
            const bool row_axis = p < per_axis;
            const double coord = row_axis ? positions[t].row : positions[t].col;
            const double angle = coord * freq[row_axis ? p : p - per_axis];
            cos_[t * pairs_ + p] = static_cast<T>(std::cos(angle));
            sin_[t * pairs_ + p] = static_cast<T>(std::sin(angle));
        }
    }
}

template <typename T>
Tensor<T> rope_rotate(const Tensor<T>& x, const RopeTable<T>& table, std::size_t heads) {
    require_matrix(x, "rope_rotate");
    const std::size_t n = x.rows(), d = x.cols(), hd = table.head_dim();
    if (heads == 0 || d != heads * hd)
        throw DimensionError("rope_rotate: " + std::to_string(d) + " columns is not " + std::to_string(heads) +
                             " heads of " + std::to_string(hd));
    if (n != table.tokens())
        throw DimensionError("rope_rotate: " + std::to_string(n) + " tokens but table has " +
                             std::to_string(table.tokens()));
    auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t p = 0; p < hd / 2; ++p) {
                const std::size_t i0 = t * d + h * hd + 2 * p;
                const T c = table.cos_at(t, p), s = table.sin_at(t, p);
                out[i0] = in[i0] * c - in[i0 + 1] * s;
                out[i0 + 1] = in[i0] * s + in[i0 + 1] * c;
            }
    auto y = finish(x.shape(), std::move(out), "rope_rotate");
    link(y, "rope_rotate", x.requires_grad(), [xn = x.node_ptr(), table, n, d, hd, heads](const auto& g) {
        auto& gx = xn->ensure_grad();
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t p = 0; p < hd / 2; ++p) {
                    const std::size_t i0 = t * d + h * hd + 2 * p;
                    const T c = table.cos_at(t, p), s = table.sin_at(t, p);
                    gx[i0] += g[i0] * c + g[i0 + 1] * s;
                    gx[i0 + 1] += -g[i0] * s + g[i0 + 1] * c;
                }
    });
    return y;
}

namespace {

template <typename T>
void validate_attention(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads, const AttentionBias<T>& bias) {
    require_matrix(q, "attention");
    require_same_shape(q, k, "attention(q,k)");
    if (heads == 0 || q.cols() % heads != 0)
        throw DimensionError("attention: " + std::to_string(q.cols()) + " columns not divisible into " +
                             std::to_string(heads) + " heads");
    const std::size_t n = q.rows();
    if (bias.dense && (bias.dense->rank() != 2 || bias.dense->rows() != n || bias.dense->cols() != n))
        throw DimensionError("attention: bias shape " + shape_string(bias.dense->shape()) + " does not match " +
                             std::to_string(n) + " tokens");
    if (!bias.stream.empty() && bias.stream.size() != n)
        throw DimensionError("attention: stream labels for " + std::to_string(bias.stream.size()) +
                             " tokens, sequence has " + std::to_string(n));
}

template <typename T>
std::vector<T> compute_probs(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads, const AttentionBias<T>& bias) {
    const std::size_t n = q.rows(), d = q.cols(), hd = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(T(hd));
    std::vector<T> probs(heads * n * n, T(0));
    const T* dense = bias.dense ? bias.dense->data().data() : nullptr;
    const bool structured = !bias.stream.empty() && bias.log_gamma != T(0);
    std::vector<std::uint8_t> modulated;
    if (structured) {
        modulated.resize(n);
        for (std::size_t i = 0; i < n; ++i) modulated[i] = bias.stream[i] == bias.modulated_stream;
    }
    for (std::size_t h = 0; h < heads; ++h) {
        T* ph = probs.data() + h * n * n;
        Blas<T>::nt(n, n, hd, q.data().data() + h * hd, d, k.data().data() + h * hd, d, ph, n);
        for (std::size_t i = 0; i < n; ++i) {
            T* row = ph + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                T s = row[j] * inv_sqrt;
                if (dense) s += dense[i * n + j];
                if (structured && modulated[i] != modulated[j]) s += bias.log_gamma;
                row[j] = s;
            }
            softmax_row_inplace(row, n, i);
        }
    }
    return probs;
}

}  // namespace

template <typename T>
std::vector<T> attention_probs(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads,
                               const AttentionBias<T>& bias) {
    validate_attention(q, k, heads, bias);
    return compute_probs(q, k, heads, bias);
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    const AttentionBias<T>& bias) {
    validate_attention(q, k, heads, bias);
    require_same_shape(q, v, "attention(q,v)");
    const std::size_t n = q.rows(), d = q.cols(), hd = d / heads;
    auto probs = std::make_shared<std::vector<T>>(compute_probs(q, k, heads, bias));
    std::vector<T> out(n * d, T(0));
    for (std::size_t h = 0; h < heads; ++h)
        Blas<T>::nn(n, hd, n, probs->data() + h * n * n, n, v.data().data() + h * hd, d, out.data() + h * hd, d);
    auto y = finish(q.shape(), std::move(out), "attention");
    const bool needs = q.requires_grad() || k.requires_grad() || v.requires_grad();
    link(y, "attention", needs,
         [qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr(), probs, n, d, hd, heads](const auto& g) {
             const T inv_sqrt = T(1) / std::sqrt(T(hd));
             std::vector<T> dp(n * n);
             for (std::size_t h = 0; h < heads; ++h) {
                 const T* ph = probs->data() + h * n * n;
                 const T* gh = g.data() + h * hd;
                 if (vn->requires_grad) Blas<T>::tn(n, hd, n, ph, n, gh, d, vn->ensure_grad().data() + h * hd, d);
                 if (!qn->requires_grad && !kn->requires_grad) continue;
                 std::fill(dp.begin(), dp.end(), T(0));
                 Blas<T>::nt(n, n, hd, gh, d, vn->data.data() + h * hd, d, dp.data(), n);
                 for (std::size_t i = 0; i < n; ++i) {
                     T* row = dp.data() + i * n;
                     const T* prow = ph + i * n;
                     T dotp = T(0);
                     for (std::size_t j = 0; j < n; ++j) dotp += row[j] * prow[j];
                     for (std::size_t j = 0; j < n; ++j) row[j] = prow[j] * (row[j] - dotp) * inv_sqrt;
                 }
                 if (qn->requires_grad)
                     Blas<T>::nn(n, hd, n, dp.data(), n, kn->data.data() + h * hd, d, qn->ensure_grad().data() + h * hd, d);
                 if (kn->requires_grad)
                     Blas<T>::tn(n, hd, n, dp.data(), n, qn->data.data() + h * hd, d, kn->ensure_grad().data() + h * hd, d);
             }
         });
    return y;
}

#define MATE_INSTANTIATE_OPS(T)                                                                                 \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> scale(const Tensor<T>&, T);                                                             \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                        \
    template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> mul_row(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> transpose(const Tensor<T>&);                                                            \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                       \
    template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                                \
    template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                                 \
    template std::vector<Tensor<T>> split_rows(const Tensor<T>&, std::span<const std::size_t>);                \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                            \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>*, const Tensor<T>*, T);                    \
    template Tensor<T> gelu(const Tensor<T>&);                                                                 \
    template Tensor<T> silu(const Tensor<T>&);                                                                 \
    template Tensor<T> softmax_rows(const Tensor<T>&);                                                         \
    template Tensor<T> sum(const Tensor<T>&);                                                                  \
    template Tensor<T> mean(const Tensor<T>&);                                                                 \
    template class RopeTable<T>;                                                                               \
    template Tensor<T> rope_rotate(const Tensor<T>&, const RopeTable<T>&, std::size_t);                        \
    template std::vector<T> attention_probs(const Tensor<T>&, const Tensor<T>&, std::size_t,                   \
                                            const AttentionBias<T>&);                                          \
    template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,            \
                                 const AttentionBias<T>&);

MATE_INSTANTIATE_OPS(float)
MATE_INSTANTIATE_OPS(double)

}  // namespace mate
