#pragma once

// Differentiable tensor primitives. Every op validates shapes, rejects
// non-finite results with NumericsError, and records a backward closure on
// the thread's current GradTape when any input requires gradients.
//
// Instantiated for float (training/inference) and double (gradient checks).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mate/tensor.hpp"

namespace mate {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s);

// a[n×m] + v broadcast over rows; v has m elements (shape {m} or {1,m}).
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& v);
// a[n×m] ⊙ v broadcast over rows.
template <typename T>
Tensor<T> mul_row(const Tensor<T>& a, const Tensor<T>& v);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> concat_rows(std::initializer_list<Tensor<T>> parts) {
    std::vector<Tensor<T>> v(parts);
    return concat_rows<T>(std::span<const Tensor<T>>(v));
}
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t count);
template <typename T>
std::vector<Tensor<T>> split_rows(const Tensor<T>& a, std::span<const std::size_t> counts);
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> indices);

// Per-row normalization; gain/bias are optional m-element tensors.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>* gain, const Tensor<T>* bias, T eps = T(1e-6));

// tanh approximation
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);

// Row-wise softmax with max subtraction. -inf entries are treated as masked;
// a row with no finite entry raises NumericsError.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

struct GridPos {
    std::int32_t row = 0;
    std::int32_t col = 0;
    friend bool operator==(const GridPos&, const GridPos&) = default;
};

/// Cached cos/sin factors of axial 2-D RoPE for one head width. The first
/// half of a head is rotated by the row coordinate, the second half by the
/// column coordinate; within a half, adjacent pairs (2i, 2i+1) rotate at
/// frequency base^(-2i / (head_dim/2)).
template <typename T>
class RopeTable {
public:
    RopeTable(std::span<const GridPos> positions, std::size_t head_dim, double base = 10000.0);

    std::size_t tokens() const noexcept { return tokens_; }
    std::size_t head_dim() const noexcept { return head_dim_; }
    // Angle factors for token t, pair p (p < head_dim/2).
    T cos_at(std::size_t t, std::size_t p) const { return cos_[t * pairs_ + p]; }
    T sin_at(std::size_t t, std::size_t p) const { return sin_[t * pairs_ + p]; }

private:
    std::size_t tokens_;
    std::size_t head_dim_;
    std::size_t pairs_;
    std::vector<T> cos_;
    std::vector<T> sin_;
};

// x[T×(heads·head_dim)] rotated head by head.
template <typename T>
Tensor<T> rope_rotate(const Tensor<T>& x, const RopeTable<T>& table, std::size_t heads);

/// Additive attention-logit bias. Two independent parts, both optional:
///  - dense: a T×T constant matrix (-inf allowed as a mask sentinel);
///  - stream-structured: log_gamma is added to every logit (i, j) where
///    exactly one of token i, token j belongs to `modulated_stream`.
/// The structured part is the block matrix of cross-bias modulation without
/// materializing it.
template <typename T>
struct AttentionBias {
    std::optional<Tensor<T>> dense;
    std::vector<std::uint8_t> stream;  // per-token stream id; empty = no structured bias
    std::uint8_t modulated_stream = 0;
    T log_gamma = T(0);

    bool empty() const { return !dense && stream.empty(); }
};

/// Multi-head scaled dot-product attention over already-projected q, k, v
/// [T×(heads·head_dim)]: per head softmax(q kᵀ/√head_dim + bias)·v, heads
/// concatenated along columns.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    const AttentionBias<T>& bias);

// Attention probabilities per head, row-major [heads][T][T]. No tape.
template <typename T>
std::vector<T> attention_probs(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads,
                               const AttentionBias<T>& bias);

}  // namespace mate
