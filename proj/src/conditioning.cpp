#include "mate/conditioning.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace mate::conditioning {

std::vector<std::uint8_t> SequenceLayout::stream_labels() const {
    std::vector<std::uint8_t> labels;
    labels.reserve(total());
    labels.insert(labels.end(), material, static_cast<std::uint8_t>(Stream::material));
    labels.insert(labels.end(), image, static_cast<std::uint8_t>(Stream::image));
    labels.insert(labels.end(), depth, static_cast<std::uint8_t>(Stream::depth));
    return labels;
}

std::vector<GridPos> stream_positions(const SequenceLayout& layout, std::size_t grid_width) {
    if (grid_width == 0) throw DimensionError("stream_positions: grid width must be positive");
    std::vector<GridPos> pos;
    pos.reserve(layout.total());
    auto grid = [&](std::size_t count, std::size_t col_offset) {
        for (std::size_t i = 0; i < count; ++i)
            pos.push_back(GridPos{static_cast<std::int32_t>(i / grid_width),
                                  static_cast<std::int32_t>(i % grid_width + col_offset)});
    };
    grid(layout.material, grid_width);
    grid(layout.image, 0);
    grid(layout.depth, 0);
    return pos;
}

template <typename T>
TokenSequence<T> assemble_sequence(const Tensor<T>& c_m, const Tensor<T>& x_img, const Tensor<T>& c_d,
                                   std::size_t grid_width) {
    if (x_img.rank() != 2) throw DimensionError("assemble_sequence: image tokens must be a matrix");
    const std::size_t d = x_img.cols();
    SequenceLayout layout;
    layout.image = x_img.rows();
    std::vector<Tensor<T>> parts;
    if (c_m.defined()) {
        if (c_m.rank() != 2 || c_m.cols() != d)
            throw DimensionError("assemble_sequence: material tokens " + shape_string(c_m.shape()) +
                                 " do not share embed dim " + std::to_string(d));
        layout.material = c_m.rows();
        parts.push_back(c_m);
    }
    parts.push_back(x_img);
    if (c_d.defined()) {
        if (c_d.rank() != 2 || c_d.cols() != d || c_d.rows() != x_img.rows())
            throw DimensionError("assemble_sequence: depth tokens " + shape_string(c_d.shape()) + " vs image " +
                                 shape_string(x_img.shape()));
        layout.depth = c_d.rows();
        parts.push_back(c_d);
    }
    TokenSequence<T> seq;
    seq.tokens = parts.size() == 1 ? x_img : concat_rows<T>(std::span<const Tensor<T>>(parts));
    seq.layout = layout;
    seq.positions = stream_positions(layout, grid_width);
    return seq;
}

template <typename T>
std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> split_sequence(const TokenSequence<T>& seq) {
    const auto& l = seq.layout;
    if (seq.tokens.rows() != l.total()) throw DimensionError("split_sequence: token count does not match layout");
    Tensor<T> m, d;
    if (l.material) m = slice_rows(seq.tokens, 0, l.material);
    Tensor<T> x = (l.material == 0 && l.depth == 0) ? seq.tokens : slice_rows(seq.tokens, l.image_begin(), l.image);
    if (l.depth) d = slice_rows(seq.tokens, l.depth_begin(), l.depth);
    return {m, x, d};
}

void check_gamma(double gamma) {
    if (!(gamma >= kGammaMin) || !std::isfinite(gamma))
        throw RangeError("gamma must be finite and >= " + std::to_string(kGammaMin) + ", got " + std::to_string(gamma));
}

template <typename T>
Tensor<T> cross_bias(double gamma, const SequenceLayout& layout) {
    check_gamma(gamma);
    const std::size_t n = layout.total();
    if (n == 0) throw DimensionError("cross_bias: empty layout");
    const T lg = static_cast<T>(std::log(gamma));
    const auto labels = layout.stream_labels();
    const auto mat = static_cast<std::uint8_t>(Stream::material);
    std::vector<T> b(n * n, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if ((labels[i] == mat) != (labels[j] == mat)) b[i * n + j] = lg;
    return Tensor<T>({n, n}, std::move(b));
}

template <typename T>
AttentionBias<T> cross_bias_structured(double gamma, const SequenceLayout& layout) {
    check_gamma(gamma);
    AttentionBias<T> bias;
    bias.stream = layout.stream_labels();
    bias.modulated_stream = static_cast<std::uint8_t>(Stream::material);
    bias.log_gamma = static_cast<T>(std::log(gamma));
    return bias;
}

template <typename T>
void LoraAdapter<T>::validate(const Tensor<T>& w) const {
    if (!a.defined() || !b.defined()) throw ContractError("lora: adapter matrices are undefined");
    if (w.rank() != 2 || a.rank() != 2 || b.rank() != 2) throw DimensionError("lora: matrices must be 2-D");
    const std::size_t r = a.rows();
    if (b.cols() != r || b.rows() != w.rows() || a.cols() != w.cols())
        throw DimensionError("lora: B" + shape_string(b.shape()) + "·A" + shape_string(a.shape()) +
                             " does not match W" + shape_string(w.shape()));
    if (r > std::min(w.rows(), w.cols()))
        throw DimensionError("lora: rank " + std::to_string(r) + " exceeds min(n, m) of W" + shape_string(w.shape()));
}

template <typename T>
Tensor<T> apply_lora(const Tensor<T>& w, const LoraAdapter<T>& adapter, double weight) {
    adapter.validate(w);
    if (weight == 0.0) return w;
    return add(w, scale(matmul(adapter.b, adapter.a), static_cast<T>(weight)));
}

#define MATE_INSTANTIATE_COND(T)                                                                               \
    template TokenSequence<T> assemble_sequence(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t); \
    template std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> split_sequence(const TokenSequence<T>&);              \
    template Tensor<T> cross_bias(double, const SequenceLayout&);                                             \
    template AttentionBias<T> cross_bias_structured(double, const SequenceLayout&);                           \
    template struct LoraAdapter<T>;                                                                           \
    template Tensor<T> apply_lora(const Tensor<T>&, const LoraAdapter<T>&, double);

MATE_INSTANTIATE_COND(float)
MATE_INSTANTIATE_COND(double)

}  // namespace mate::conditioning
