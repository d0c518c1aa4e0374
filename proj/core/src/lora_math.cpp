// SPDX-License-Identifier: Apache-2.0
#include "lorasched/lora_math.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "lorasched/errors.hpp"

namespace lorasched::lora {

template <typename T>
Matrix<T> Matrix<T>::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
}

std::vector<TokenRange> make_token_ranges(std::span<const std::size_t> lengths) {
    std::vector<TokenRange> out;
    out.reserve(lengths.size());
    std::size_t cursor = 0;
    for (auto len : lengths) {
        out.push_back({cursor, cursor + len});
        cursor += len;
    }
    return out;
}

template <typename T>
void GroupedLayerSpec<T>::validate() const {
    require_input(W.rows() == d_in && W.cols() == d_out,
                  fmt::format("base weight is {}x{}, expected {}x{}", W.rows(), W.cols(), d_in, d_out));
    require_input(adapters.size() == token_ranges.size(),
                  fmt::format("{} adapters but {} token ranges", adapters.size(), token_ranges.size()));
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        const auto& a = adapters[i];
        const auto r = a.rank();
        require_input(a.A.rows() == d_in, fmt::format("adapter {}: A has {} rows, expected {}", i, a.A.rows(), d_in));
        require_input(a.B.rows() == r && a.B.cols() == d_out,
                      fmt::format("adapter {}: B is {}x{}, expected {}x{}", i, a.B.rows(), a.B.cols(), r, d_out));
        require_input(r >= 1 && r <= std::min(d_in, d_out),
                      fmt::format("adapter {}: rank {} outside [1, min(k, n) = {}]", i, r, std::min(d_in, d_out)));
        require_input(token_ranges[i].start == cursor && token_ranges[i].end >= token_ranges[i].start,
                      fmt::format("adapter {}: token range [{}, {}) is not contiguous with the previous one", i,
                                  token_ranges[i].start, token_ranges[i].end));
        cursor = token_ranges[i].end;
    }
}

TokenRange ScheduleTable::rows(const ScheduleEntry& e, std::span<const TokenRange> ranges) const {
    const auto& r = ranges[e.adapter];
    const auto first = r.start + e.block * block_size;
    return {first, std::min(first + block_size, r.end)};
}

ScheduleTable build_schedule(std::span<const TokenRange> ranges, std::size_t block_size) {
    require_input(block_size >= 1, "block size must be >= 1");
    ScheduleTable table;
    table.block_size = block_size;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        const auto blocks = (ranges[i].length() + block_size - 1) / block_size;
        for (std::size_t b = 0; b < blocks; ++b) table.entries.push_back({i, b});
    }
    return table;
}

template <typename T>
PaddedAdapters<T> pad_ranks(std::span<const Adapter<T>> adapters) {
    require_input(!adapters.empty(), "pad_ranks needs at least one adapter");
    PaddedAdapters<T> out;
    for (const auto& a : adapters) out.r_max = std::max(out.r_max, a.rank());
    for (const auto& a : adapters) {
        const auto k = a.A.rows();
        const auto n = a.B.cols();
        const auto r = a.rank();
        Matrix<T> A(k, out.r_max);
        Matrix<T> B(out.r_max, n);
        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t q = 0; q < r; ++q) A(p, q) = a.A(p, q);
        }
        for (std::size_t q = 0; q < r; ++q) {
            for (std::size_t j = 0; j < n; ++j) B(q, j) = a.B(q, j);
        }
        out.ranks.push_back(r);
        out.A.push_back(std::move(A));
        out.B.push_back(std::move(B));
        out.scales.push_back(a.scale);
    }
    return out;
}

namespace {

template <typename T>
void check_input(const GroupedLayerSpec<T>& spec, const Matrix<T>& X) {
    spec.validate();
    require_input(X.rows() == spec.total_tokens() && X.cols() == spec.d_in,
                  fmt::format("input is {}x{}, expected {}x{}", X.rows(), X.cols(), spec.total_tokens(), spec.d_in));
}

// Y = X W over the full concatenated batch.
template <typename T>
Matrix<T> base_gemm(const Matrix<T>& X, const Matrix<T>& W) {
    Matrix<T> Y(X.rows(), W.cols());
    for (std::size_t t = 0; t < X.rows(); ++t) {
        auto y = Y.row(t);
        for (std::size_t p = 0; p < X.cols(); ++p) {
            const T x = X(t, p);
            const auto w = W.row(p);
            for (std::size_t j = 0; j < y.size(); ++j) y[j] += x * w[j];
        }
    }
    return Y;
}

// Shared body of both forward variants; `A`/`B` are the per-adapter weights to
// read and `width[i]` the number of rank columns visited for adapter i.
template <typename T>
ForwardResult<T> forward_impl(const GroupedLayerSpec<T>& spec, const Matrix<T>& X, std::size_t block_size,
                              std::span<const Matrix<T>* const> As, std::span<const Matrix<T>* const> Bs,
                              std::span<const std::size_t> width, std::span<const T> scales, std::size_t r_max) {
    ForwardResult<T> out;
    out.Y = base_gemm(X, spec.W);
    out.cache.S = Matrix<T>(X.rows(), r_max);
    out.cache.X = X;
    out.cache.r_max = r_max;

    const auto table = build_schedule(spec.token_ranges, block_size);
    // Grouped GEMM #1: S_i = X_i A_i, one program per schedule entry.
    for (const auto& e : table.entries) {
        const auto rows = table.rows(e, spec.token_ranges);
        const auto& A = *As[e.adapter];
        for (std::size_t t = rows.start; t < rows.end; ++t) {
            for (std::size_t q = 0; q < width[e.adapter]; ++q) {
                T acc{};
                for (std::size_t p = 0; p < spec.d_in; ++p) acc += X(t, p) * A(p, q);
                out.cache.S(t, q) = acc;
            }
        }
    }
    // Grouped GEMM #2 with fused base add: Y = scale * S_i B_i + Y_base.
    for (const auto& e : table.entries) {
        const auto rows = table.rows(e, spec.token_ranges);
        const auto& B = *Bs[e.adapter];
        const T s = scales[e.adapter];
        for (std::size_t t = rows.start; t < rows.end; ++t) {
            for (std::size_t j = 0; j < spec.d_out; ++j) {
                T acc{};
                for (std::size_t q = 0; q < width[e.adapter]; ++q) acc += out.cache.S(t, q) * B(q, j);
                out.Y(t, j) = out.Y(t, j) + s * acc;
            }
        }
    }
    return out;
}

}  // namespace

template <typename T>
ForwardResult<T> grouped_forward(const GroupedLayerSpec<T>& spec, const Matrix<T>& X, std::size_t block_size) {
    check_input(spec, X);
    std::vector<const Matrix<T>*> As, Bs;
    std::vector<std::size_t> width;
    std::vector<T> scales;
    std::size_t r_max = 0;
    for (const auto& a : spec.adapters) {
        As.push_back(&a.A);
        Bs.push_back(&a.B);
        width.push_back(a.rank());
        scales.push_back(a.scale);
        r_max = std::max(r_max, a.rank());
    }
    return forward_impl<T>(spec, X, block_size, As, Bs, width, scales, r_max);
}

template <typename T>
ForwardResult<T> grouped_forward_padded(const GroupedLayerSpec<T>& spec, const PaddedAdapters<T>& padded,
                                        const Matrix<T>& X, std::size_t block_size) {
    check_input(spec, X);
    require_input(padded.A.size() == spec.adapters.size(), "padded adapter count does not match the spec");
    std::vector<const Matrix<T>*> As, Bs;
    for (std::size_t i = 0; i < padded.A.size(); ++i) {
        As.push_back(&padded.A[i]);
        Bs.push_back(&padded.B[i]);
    }
    // Every adapter walks all r_max columns; the zero padding contributes nothing.
    std::vector<std::size_t> width(padded.A.size(), padded.r_max);
    return forward_impl<T>(spec, X, block_size, As, Bs, width, padded.scales, padded.r_max);
}

template <typename T>
PaddedGradients<T> grouped_backward_padded(const GroupedLayerSpec<T>& spec, const PaddedAdapters<T>& padded,
                                           const ForwardCache<T>& cache, const Matrix<T>& dY,
                                           std::size_t block_size) {
    spec.validate();
    const auto L = spec.total_tokens();
    const auto k = spec.d_in;
    const auto n = spec.d_out;
    const auto r_max = padded.r_max;
    require_input(cache.X.rows() == L && cache.X.cols() == k && cache.S.rows() == L && cache.S.cols() == r_max &&
                      cache.r_max == r_max,
                  "forward cache does not match the layer spec");
    require_input(dY.rows() == L && dY.cols() == n,
                  fmt::format("output gradient is {}x{}, expected {}x{}", dY.rows(), dY.cols(), L, n));

    PaddedGradients<T> g;
    g.dX = Matrix<T>(L, k);
    Matrix<T> dS(L, r_max);

    // Input gradients, one program per schedule entry.
    const auto table = build_schedule(spec.token_ranges, block_size);
    for (const auto& e : table.entries) {
        const auto rows = table.rows(e, spec.token_ranges);
        const auto& A = padded.A[e.adapter];
        const auto& B = padded.B[e.adapter];
        const T s = padded.scales[e.adapter];
        for (std::size_t t = rows.start; t < rows.end; ++t) {
            for (std::size_t q = 0; q < r_max; ++q) {
                T acc{};
                for (std::size_t j = 0; j < n; ++j) acc += dY(t, j) * B(q, j);
                dS(t, q) = s * acc;
            }
            for (std::size_t p = 0; p < k; ++p) {
                T base{};
                for (std::size_t j = 0; j < n; ++j) base += dY(t, j) * spec.W(p, j);
                T lora{};
                for (std::size_t q = 0; q < r_max; ++q) lora += dS(t, q) * A(p, q);
                g.dX(t, p) = base + lora;
            }
        }
    }

    const auto Z = spec.adapters.size();
    // Batched pass #1: dA_i = X_i^T dS_i for every adapter.
    g.dA.assign(Z, Matrix<T>(k, r_max));
    for (std::size_t z = 0; z < Z; ++z) {
        auto& dA = g.dA[z];
        const auto& range = spec.token_ranges[z];
        for (std::size_t t = range.start; t < range.end; ++t) {
            for (std::size_t p = 0; p < k; ++p) {
                const T x = cache.X(t, p);
                for (std::size_t q = 0; q < r_max; ++q) dA(p, q) += x * dS(t, q);
            }
        }
    }
    // Batched pass #2: dB_i = scale_i * S_i^T dY_i for every adapter.
    g.dB.assign(Z, Matrix<T>(r_max, n));
    for (std::size_t z = 0; z < Z; ++z) {
        auto& dB = g.dB[z];
        const auto& range = spec.token_ranges[z];
        const T s = padded.scales[z];
        for (std::size_t t = range.start; t < range.end; ++t) {
            for (std::size_t q = 0; q < r_max; ++q) {
                const T sv = s * cache.S(t, q);
                for (std::size_t j = 0; j < n; ++j) dB(q, j) += sv * dY(t, j);
            }
        }
    }
    return g;
}

template <typename T>
Gradients<T> grouped_backward(const GroupedLayerSpec<T>& spec, const ForwardCache<T>& cache, const Matrix<T>& dY,
                              std::size_t block_size) {
    spec.validate();
    const auto padded = pad_ranks<T>(spec.adapters);
    auto pg = grouped_backward_padded(spec, padded, cache, dY, block_size);

    Gradients<T> g;
    g.dX = std::move(pg.dX);
    for (std::size_t z = 0; z < spec.adapters.size(); ++z) {
        const auto r = padded.ranks[z];
        Matrix<T> dA(spec.d_in, r);
        Matrix<T> dB(r, spec.d_out);
        for (std::size_t p = 0; p < spec.d_in; ++p) {
            for (std::size_t q = 0; q < r; ++q) dA(p, q) = pg.dA[z](p, q);
        }
        for (std::size_t q = 0; q < r; ++q) {
            for (std::size_t j = 0; j < spec.d_out; ++j) dB(q, j) = pg.dB[z](q, j);
        }
        g.dA.push_back(std::move(dA));
        g.dB.push_back(std::move(dB));
    }
    return g;
}

FlopReport flop_accounting(std::span<const std::size_t> token_counts, std::span<const std::size_t> ranks,
                           std::size_t d_in, std::size_t d_out) {
    require_input(token_counts.size() == ranks.size(), "token counts and ranks must have equal length");
    FlopReport f;
    std::uint64_t total_tokens = 0;
    std::uint64_t total_rank = 0;
    std::uint64_t diag = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        total_tokens += token_counts[i];
        total_rank += ranks[i];
        diag += static_cast<std::uint64_t>(token_counts[i]) * ranks[i];
    }
    const std::uint64_t kn = d_in + d_out;
    f.base_flops = 2 * total_tokens * d_in * d_out;
    f.useful_lora_flops = 2 * diag * kn;
    f.wide_lora_flops = 2 * total_tokens * total_rank * kn;
    f.waste_ratio = f.useful_lora_flops == 0
                        ? 1.0
                        : static_cast<double>(f.wide_lora_flops) / static_cast<double>(f.useful_lora_flops);
    return f;
}

template <typename T>
FlopReport flop_accounting(const GroupedLayerSpec<T>& spec) {
    std::vector<std::size_t> tokens, ranks;
    for (std::size_t i = 0; i < spec.adapters.size(); ++i) {
        tokens.push_back(spec.token_ranges[i].length());
        ranks.push_back(spec.adapters[i].rank());
    }
    return flop_accounting(tokens, ranks, spec.d_in, spec.d_out);
}

#define LORASCHED_INSTANTIATE(T)                                                                              \
    template class Matrix<T>;                                                                                 \
    template struct GroupedLayerSpec<T>;                                                                      \
    template PaddedAdapters<T> pad_ranks<T>(std::span<const Adapter<T>>);                                     \
    template ForwardResult<T> grouped_forward<T>(const GroupedLayerSpec<T>&, const Matrix<T>&, std::size_t);  \
    template ForwardResult<T> grouped_forward_padded<T>(const GroupedLayerSpec<T>&, const PaddedAdapters<T>&, \
                                                        const Matrix<T>&, std::size_t);                       \
    template PaddedGradients<T> grouped_backward_padded<T>(const GroupedLayerSpec<T>&,                        \
                                                           const PaddedAdapters<T>&, const ForwardCache<T>&,  \
                                                           const Matrix<T>&, std::size_t);                    \
    template Gradients<T> grouped_backward<T>(const GroupedLayerSpec<T>&, const ForwardCache<T>&,             \
                                              const Matrix<T>&, std::size_t);                                 \
    template FlopReport flop_accounting<T>(const GroupedLayerSpec<T>&);

LORASCHED_INSTANTIATE(float)
LORASCHED_INSTANTIATE(double)

#undef LORASCHED_INSTANTIATE

}  // namespace lorasched::lora
