#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "gross/btd.hpp"
#include "gross/tensor.hpp"

namespace gross {

// Geometry of a convolution targeted for decomposition, plus the bottleneck
// widths of its three-layer replacement. Widths default to the input channel
// count; non-uniform structures may override both.
struct ConvMeta {
    int in_channels = 1;
    int out_channels = 1;
    int kh = 3;
    int kw = 3;
    int stride = 1;
    int padding = 0;
    bool has_bias = true;
    int bottleneck_in_width = 0;   // 0 -> in_channels
    int bottleneck_out_width = 0;  // 0 -> same as in width

    int in_width() const { return bottleneck_in_width > 0 ? bottleneck_in_width : in_channels; }
    int out_width() const { return bottleneck_out_width > 0 ? bottleneck_out_width : in_width(); }
};

inline void validate_conv_meta(const ConvMeta& m) {
    if (m.in_channels < 1 || m.out_channels < 1 || m.kh < 1 || m.kw < 1) {
        throw std::invalid_argument("ConvMeta: channel and kernel extents must be positive");
    }
    if (m.stride < 1) throw std::invalid_argument("ConvMeta: stride must be >= 1");
    if (m.padding < 0) throw std::invalid_argument("ConvMeta: padding must be >= 0");
}

// A group size s is admissible when it divides the input width and the
// induced group count divides the output width.
inline bool group_size_admissible(const ConvMeta& m, int s) {
    if (s < 1 || m.in_width() % s != 0) return false;
    const int groups = m.in_width() / s;
    return m.out_width() % groups == 0;
}

inline void validate_group_size_set(const ConvMeta& m, const std::vector<int>& sizes) {
    if (sizes.empty()) throw std::invalid_argument("group sizes: set must be nonempty");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (!group_size_admissible(m, sizes[i])) {
            throw std::invalid_argument(
                "group sizes: s=" + std::to_string(sizes[i]) + " is not admissible for widths " +
                std::to_string(m.in_width()) + "->" + std::to_string(m.out_width()) +
                " (s must divide the input width and the group count must divide the output width)");
        }
        if (i > 0) {
            if (sizes[i] <= sizes[i - 1]) {
                throw std::invalid_argument("group sizes: set must be strictly increasing, got " +
                                            std::to_string(sizes[i - 1]) + " before " +
                                            std::to_string(sizes[i]));
            }
            if (sizes[i] % sizes[i - 1] != 0) {
                throw std::invalid_argument("group sizes: " + std::to_string(sizes[i - 1]) +
                                            " does not divide " + std::to_string(sizes[i]) +
                                            "; expansion requires a divisibility chain");
            }
        }
    }
}

// All powers of two admissible for the layer, up to the bottleneck width.
inline std::vector<int> pow2_group_sizes(const ConvMeta& m) {
    std::vector<int> sizes;
    for (int s = 1; s <= m.in_width(); s *= 2) {
        if (group_size_admissible(m, s)) sizes.push_back(s);
    }
    return sizes;
}

// The three-layer bottleneck replacing one convolution:
//   pointwise P (in -> width), grouped Rg (width -> out width, kernel kh x kw,
//   stride/padding of the source conv), pointwise Q (out width -> out, bias).
// All tensors are in decomposition layout: mode 0 is the input side.
// Rg's mode 0 is the per-group input channel count, i.e. the group size.
template <typename T>
struct BottleneckWeightsT {
    Tensor<T> p;          // in_channels x in_width x 1 x 1
    Tensor<T> rg;         // s x out_width x kh x kw
    Tensor<T> q;          // out_width x out_channels x 1 x 1
    std::vector<T> bias;  // out_channels, only when the source conv has bias
    int stride = 1;       // carried by the grouped layer; both pointwise layers
    int padding = 0;      // run with stride 1, padding 0

    int group_size() const { return rg.extent(0); }
    int groups() const { return p.extent(1) / rg.extent(0); }
};

using BottleneckWeights = BottleneckWeightsT<double>;

template <typename T>
void validate_bottleneck(const BottleneckWeightsT<T>& w) {
    if (w.p.rank() != 4 || w.rg.rank() != 4 || w.q.rank() != 4) {
        throw std::invalid_argument("bottleneck: all three weights must have 4 modes");
    }
    const int in_w = w.p.extent(1);
    const int out_w = w.q.extent(0);
    if (in_w % w.rg.extent(0) != 0) {
        throw std::invalid_argument("bottleneck: group size does not divide the input width");
    }
    if (w.rg.extent(1) != out_w) {
        throw std::invalid_argument("bottleneck: grouped output width " +
                                    std::to_string(w.rg.extent(1)) +
                                    " does not chain into the final pointwise input " +
                                    std::to_string(out_w));
    }
}

// Grouped-weight expansion (group size g -> h >= g) computing the identical
// function: each h-block holds its constituent g-blocks on the diagonal and
// zeros elsewhere. Pure index placement, no arithmetic.
template <typename T>
Tensor<T> psi_expand(const Tensor<T>& w, int g, int h, int in_width) {
    if (w.rank() != 4 || w.extent(0) != g) {
        throw std::invalid_argument("psi_expand: weight is not laid out for group size " +
                                    std::to_string(g));
    }
    if (g < 1 || h % g != 0 || in_width % h != 0) {
        throw std::invalid_argument("psi_expand: cannot expand group size " + std::to_string(g) +
                                    " to " + std::to_string(h) + " within width " +
                                    std::to_string(in_width));
    }
    if (g == h) return w;

    const int out_w = w.extent(1);
    const int kh = w.extent(2);
    const int kw = w.extent(3);
    const int upg = out_w / (in_width / g);
    const int uph = out_w / (in_width / h);
    Tensor<T> out({h, out_w, kh, kw});
    for (int n = 0; n < out_w; ++n) {
        const int offset = (n / upg) * g - (n / uph) * h;  // g-block position inside its h-block
        for (int ig = 0; ig < g; ++ig) {
            for (int y = 0; y < kh; ++y) {
                for (int x = 0; x < kw; ++x) out(offset + ig, n, y, x) = w(ig, n, y, x);
            }
        }
    }
    return out;
}

namespace detail {

// Accumulate the psi-expansion of w (laid out at group size g) into dst,
// which is laid out at group size h. Slots outside w's support are untouched.
template <typename T>
void psi_accumulate(Tensor<T>& dst, const Tensor<T>& w, int g, int in_width) {
    const int h = dst.extent(0);
    const int out_w = w.extent(1);
    const int upg = out_w / (in_width / g);
    const int uph = out_w / (in_width / h);
    for (int n = 0; n < out_w; ++n) {
        const int offset = (n / upg) * g - (n / uph) * h;
        for (int ig = 0; ig < g; ++ig) {
            for (int y = 0; y < w.extent(2); ++y) {
                for (int x = 0; x < w.extent(3); ++x) dst(offset + ig, n, y, x) += w(ig, n, y, x);
            }
        }
    }
}

// Smallest adjustment of the naive difference t - a such that a + p compares
// equal to t. Plain float differences do not telescope exactly; one or two
// refinement rounds almost always land, and the ulp walk settles the rest.
inline double exact_delta(double a, double t) {
    double p = t - a;
    for (int k = 0; k < 4; ++k) {
        const double c = a + p;
        if (c == t) return p;
        p += t - c;
    }
    double c = a + p;
    const double inf = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 64 && c != t; ++k) {
        const double p2 = std::nextafter(p, c < t ? inf : -inf);
        const double c2 = a + p2;
        if (c2 != t && (c2 < t) != (c < t)) break;  // crossed t without a representable hit
        p = p2;
        c = c2;
    }
    return p;
}

}  // namespace detail

// One decomposed layer of the series: the bottleneck at the smallest group
// size plus the per-rank increments, assembled dynamically at any size in the
// set. The source weight is kept for audit.
template <typename T>
struct GroSSLayerT {
    struct Delta {
        Tensor<T> p;   // same shape as base.p
        Tensor<T> rg;  // s_i x out_width x kh x kw
        Tensor<T> q;   // same shape as base.q
    };

    ConvMeta meta;
    std::vector<int> sizes;  // s_1 < s_2 < ... < s_N
    BottleneckWeightsT<T> base;
    std::vector<Delta> deltas;  // deltas[i-2] belongs to sizes[i-1], i = 2..N
    DTensor original;

    int size_index(int s) const {
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            if (sizes[i] == s) return static_cast<int>(i);
        }
        throw std::invalid_argument("GroSS layer: group size " + std::to_string(s) +
                                    " is not in the series");
    }
};

using GroSSLayer = GroSSLayerT<double>;

// Table-driven mapping from one BTD to the bottleneck weights: factor B_r
// fills P's column block r, core G_r fills the grouped weight's output block
// r, factor C_r fills Q's row block r. The source conv's bias rides on Q.
inline BottleneckWeights bottleneck_from_btd(const BlockTermDecomposition& d, const ConvMeta& meta,
                                             const std::vector<double>& bias = {}) {
    validate_conv_meta(meta);
    const int r_count = d.group_count();
    const int tp = d.rank.t_prime;
    const int up = d.rank.u_prime;
    const int t = meta.in_channels;
    const int u = meta.out_channels;
    if (d.source_shape != std::vector<int>{t, u, meta.kh, meta.kw}) {
        throw std::invalid_argument("bottleneck_from_btd: decomposition source shape does not match meta");
    }
    if (r_count * tp != meta.in_width() || r_count * up != meta.out_width()) {
        throw std::invalid_argument(
            "bottleneck_from_btd: width mismatch, decomposition spans " +
            std::to_string(r_count * tp) + "->" + std::to_string(r_count * up) +
            " but the bottleneck is " + std::to_string(meta.in_width()) + "->" +
            std::to_string(meta.out_width()));
    }
    if (meta.has_bias && !bias.empty() && static_cast<int>(bias.size()) != u) {
        throw std::invalid_argument("bottleneck_from_btd: bias length does not match out channels");
    }

    BottleneckWeights w;
    w.stride = meta.stride;
    w.padding = meta.padding;
    w.p = DTensor({t, meta.in_width(), 1, 1});
    w.rg = DTensor({tp, meta.out_width(), meta.kh, meta.kw});
    w.q = DTensor({meta.out_width(), u, 1, 1});
    for (int r = 0; r < r_count; ++r) {
        const BtdTerm& term = d.terms[static_cast<std::size_t>(r)];
        for (int a = 0; a < t; ++a) {
            for (int i = 0; i < tp; ++i) w.p(a, r * tp + i, 0, 0) = term.b(a, i);
        }
        for (int i = 0; i < tp; ++i) {
            for (int j = 0; j < up; ++j) {
                for (int y = 0; y < meta.kh; ++y) {
                    for (int x = 0; x < meta.kw; ++x) {
                        w.rg(i, r * up + j, y, x) = term.core(i, j, y, x);
                    }
                }
            }
        }
        for (int b = 0; b < u; ++b) {
            for (int j = 0; j < up; ++j) w.q(r * up + j, b, 0, 0) = term.c(b, j);
        }
    }
    if (meta.has_bias) {
        w.bias = bias.empty() ? std::vector<double>(static_cast<std::size_t>(u), 0.0) : bias;
    }
    return w;
}

// Assemble the bottleneck at group size s: pointwise weights are the plain
// running sums of base and deltas, the grouped weight is the expansion-sum.
// Pure function of (layer, s); element sums run in series order, matching the
// order the deltas were constructed in, so the result reproduces the
// independent decomposition at s exactly.
template <typename T>
BottleneckWeightsT<T> assemble(const GroSSLayerT<T>& layer, int s) {
    const int k = layer.size_index(s);
    BottleneckWeightsT<T> out;
    out.p = layer.base.p;
    out.q = layer.base.q;
    out.bias = layer.base.bias;
    out.stride = layer.meta.stride;
    out.padding = layer.meta.padding;
    out.rg = Tensor<T>({s, layer.meta.out_width(), layer.meta.kh, layer.meta.kw});
    detail::psi_accumulate(out.rg, layer.base.rg, layer.sizes[0], layer.meta.in_width());
    for (int i = 1; i <= k; ++i) {
        const auto& d = layer.deltas[static_cast<std::size_t>(i - 1)];
        for (std::size_t z = 0; z < out.p.size(); ++z) out.p[z] += d.p[z];
        for (std::size_t z = 0; z < out.q.size(); ++z) out.q[z] += d.q[z];
        detail::psi_accumulate(out.rg, d.rg, layer.sizes[static_cast<std::size_t>(i)],
                               layer.meta.in_width());
    }
    return out;
}

// Build the series: an independent BTD per group size, the smallest as the
// base, and each further rank stored as the increment over the assembled
// prefix. Increments are chosen so the running sums reproduce each rank's
// independent bottleneck exactly.
inline GroSSLayer build_series(const DTensor& x, const ConvMeta& meta,
                               const std::vector<int>& sizes, const DecomposeOptions& opts,
                               const std::vector<double>& bias = {}) {
    validate_conv_meta(meta);
    validate_group_size_set(meta, sizes);
    if (x.rank() != 4 || x.extent(0) != meta.in_channels || x.extent(1) != meta.out_channels ||
        x.extent(2) != meta.kh || x.extent(3) != meta.kw) {
        throw std::invalid_argument("build_series: weight shape does not match meta");
    }

    GroSSLayer layer;
    layer.meta = meta;
    layer.sizes = sizes;
    layer.original = x;

    std::vector<BottleneckWeights> ranks;
    ranks.reserve(sizes.size());
    for (int s : sizes) {
        const int groups = meta.in_width() / s;
        const RankPair rank{s, meta.out_width() / groups};
        try {
            auto [d, trace] = decompose(x, groups, rank, opts);
            (void)trace;
            ranks.push_back(bottleneck_from_btd(d, meta, bias));
        } catch (const std::exception& e) {
            throw std::runtime_error("build_series: decomposition at group size " +
                                     std::to_string(s) + " failed: " + e.what());
        }
    }

    layer.base = ranks.front();
    BottleneckWeights acc = layer.base;
    for (std::size_t i = 1; i < ranks.size(); ++i) {
        GroSSLayer::Delta d;
        d.p = DTensor(acc.p.shape());
        d.q = DTensor(acc.q.shape());
        for (std::size_t z = 0; z < acc.p.size(); ++z) {
            d.p[z] = detail::exact_delta(acc.p[z], ranks[i].p[z]);
            acc.p[z] += d.p[z];
        }
        for (std::size_t z = 0; z < acc.q.size(); ++z) {
            d.q[z] = detail::exact_delta(acc.q[z], ranks[i].q[z]);
            acc.q[z] += d.q[z];
        }
        const DTensor expanded =
            psi_expand(acc.rg, sizes[i - 1], sizes[i], meta.in_width());
        d.rg = DTensor(expanded.shape());
        for (std::size_t z = 0; z < expanded.size(); ++z) {
            d.rg[z] = detail::exact_delta(expanded[z], ranks[i].rg[z]);
        }
        acc.rg = DTensor(expanded.shape());
        for (std::size_t z = 0; z < expanded.size(); ++z) acc.rg[z] = expanded[z] + d.rg[z];
        layer.deltas.push_back(std::move(d));
    }
    return layer;
}

template <typename T>
GroSSLayerT<T> cast_series(const GroSSLayer& src) {
    GroSSLayerT<T> out;
    out.meta = src.meta;
    out.sizes = src.sizes;
    out.original = src.original;
    auto cast_tensor = [](const DTensor& t) {
        Tensor<T> r(t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) r[i] = static_cast<T>(t[i]);
        return r;
    };
    out.base.p = cast_tensor(src.base.p);
    out.base.rg = cast_tensor(src.base.rg);
    out.base.q = cast_tensor(src.base.q);
    out.base.bias.assign(src.base.bias.begin(), src.base.bias.end());
    out.base.stride = src.base.stride;
    out.base.padding = src.base.padding;
    for (const auto& d : src.deltas) {
        typename GroSSLayerT<T>::Delta c;
        c.p = cast_tensor(d.p);
        c.rg = cast_tensor(d.rg);
        c.q = cast_tensor(d.q);
        out.deltas.push_back(std::move(c));
    }
    return out;
}

}  // namespace gross
