// SPDX-License-Identifier: Apache-2.0
#include "lorasched/lora_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lorasched/errors.hpp"

namespace lorasched::lora {

template <typename T>
Matrix<T> random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
    Matrix<T> m(rows, cols);
    for (auto& v : m.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return m;
}

template <typename T>
GroupedLayerSpec<T> random_spec(std::span<const std::size_t> ranks, std::span<const std::size_t> tokens,
                                std::size_t d_in, std::size_t d_out, Rng& rng) {
    require_input(ranks.size() == tokens.size(), "ranks and tokens must have one entry per adapter");
    GroupedLayerSpec<T> spec;
    spec.d_in = d_in;
    spec.d_out = d_out;
    spec.W = random_matrix<T>(d_in, d_out, rng);
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        require_input(ranks[i] >= 1 && ranks[i] <= std::min(d_in, d_out), "adapter rank exceeds min(d_in, d_out)");
        Adapter<T> a;
        a.A = random_matrix<T>(d_in, ranks[i], rng);
        a.B = random_matrix<T>(ranks[i], d_out, rng);
        a.scale = T(2);  // alpha = 2r
        spec.adapters.push_back(std::move(a));
    }
    spec.token_ranges = make_token_ranges(tokens);
    spec.validate();
    return spec;
}

namespace {

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    Matrix<T> c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            T acc{};
            for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
            c(i, j) = acc;
        }
    }
    return c;
}

template <typename T>
Matrix<T> slice_rows(const Matrix<T>& m, const TokenRange& r) {
    Matrix<T> out(r.length(), m.cols());
    for (std::size_t t = 0; t < r.length(); ++t) {
        for (std::size_t c = 0; c < m.cols(); ++c) out(t, c) = m(r.start + t, c);
    }
    return out;
}

// (L(+h) - L(-h)) / 2h where only the listed outputs differ between the two
// evaluations. Written as sum (y+ - y-)(y+ + y-) / 4h to avoid cancellation.
template <typename T>
T central_difference(std::span<const T> plus, std::span<const T> minus, T h) {
    T acc{};
    for (std::size_t i = 0; i < plus.size(); ++i) acc += (plus[i] - minus[i]) * (plus[i] + minus[i]);
    return acc / (T(4) * h);
}

}  // namespace

template <typename T>
Matrix<T> naive_forward(const GroupedLayerSpec<T>& spec, const Matrix<T>& X) {
    spec.validate();
    Matrix<T> Y(spec.total_tokens(), spec.d_out);
    for (std::size_t i = 0; i < spec.adapters.size(); ++i) {
        const auto& a = spec.adapters[i];
        const auto& range = spec.token_ranges[i];
        const auto Xi = slice_rows(X, range);
        const auto base = matmul(Xi, spec.W);
        const auto lora = matmul(matmul(Xi, a.A), a.B);
        for (std::size_t t = 0; t < range.length(); ++t) {
            for (std::size_t j = 0; j < spec.d_out; ++j) Y(range.start + t, j) = base(t, j) + a.scale * lora(t, j);
        }
    }
    return Y;
}

template <typename T>
Gradients<T> finite_difference_gradients(const GroupedLayerSpec<T>& spec, const Matrix<T>& X, T h) {
    spec.validate();
    const auto k = spec.d_in;
    const auto n = spec.d_out;
    Gradients<T> g;
    g.dX = Matrix<T>(X.rows(), k);

    std::vector<T> plus, minus;
    for (std::size_t i = 0; i < spec.adapters.size(); ++i) {
        const auto& a = spec.adapters[i];
        const auto& range = spec.token_ranges[i];
        const auto r = a.rank();
        const auto L = range.length();
        const auto Xi = slice_rows(X, range);
        const auto base = matmul(Xi, spec.W);
        const auto S = matmul(Xi, a.A);
        auto Y = matmul(S, a.B);
        for (std::size_t t = 0; t < L; ++t) {
            for (std::size_t j = 0; j < n; ++j) Y(t, j) = base(t, j) + a.scale * Y(t, j);
        }

        // dA: perturbing A(p, q) changes column q of S, which feeds every output of the slice.
        Matrix<T> dA(k, r);
        plus.resize(L * n);
        minus.resize(L * n);
        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t q = 0; q < r; ++q) {
                for (int sign : {+1, -1}) {
                    auto A = a.A;
                    A(p, q) += static_cast<T>(sign) * h;
                    auto& out = sign > 0 ? plus : minus;
                    for (std::size_t t = 0; t < L; ++t) {
                        T sq{};
                        for (std::size_t pp = 0; pp < k; ++pp) sq += Xi(t, pp) * A(pp, q);
                        const T delta = sq - S(t, q);
                        for (std::size_t j = 0; j < n; ++j) out[t * n + j] = Y(t, j) + a.scale * delta * a.B(q, j);
                    }
                }
                dA(p, q) = central_difference<T>(plus, minus, h);
            }
        }

        // dB: perturbing B(q, j) changes output column j only.
        Matrix<T> dB(r, n);
        plus.resize(L);
        minus.resize(L);
        for (std::size_t q = 0; q < r; ++q) {
            for (std::size_t j = 0; j < n; ++j) {
                for (int sign : {+1, -1}) {
                    auto& out = sign > 0 ? plus : minus;
                    for (std::size_t t = 0; t < L; ++t) {
                        T acc{};
                        for (std::size_t qq = 0; qq < r; ++qq) {
                            const T b = qq == q ? a.B(qq, j) + static_cast<T>(sign) * h : a.B(qq, j);
                            acc += S(t, qq) * b;
                        }
                        out[t] = base(t, j) + a.scale * acc;
                    }
                }
                dB(q, j) = central_difference<T>(plus, minus, h);
            }
        }

        // dX: perturbing X(t, p) changes output row t only; recompute that row from scratch.
        plus.resize(n);
        minus.resize(n);
        std::vector<T> xrow(k), srow(r);
        for (std::size_t t = 0; t < L; ++t) {
            for (std::size_t p = 0; p < k; ++p) {
                for (int sign : {+1, -1}) {
                    auto& out = sign > 0 ? plus : minus;
                    for (std::size_t pp = 0; pp < k; ++pp) xrow[pp] = Xi(t, pp);
                    xrow[p] += static_cast<T>(sign) * h;
                    for (std::size_t q = 0; q < r; ++q) {
                        T acc{};
                        for (std::size_t pp = 0; pp < k; ++pp) acc += xrow[pp] * a.A(pp, q);
                        srow[q] = acc;
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        T b{}, l{};
                        for (std::size_t pp = 0; pp < k; ++pp) b += xrow[pp] * spec.W(pp, j);
                        for (std::size_t q = 0; q < r; ++q) l += srow[q] * a.B(q, j);
                        out[j] = b + a.scale * l;
                    }
                }
                g.dX(range.start + t, p) = central_difference<T>(plus, minus, h);
            }
        }
        g.dA.push_back(std::move(dA));
        g.dB.push_back(std::move(dB));
    }
    return g;
}

template <typename T>
double max_relative_deviation(const Matrix<T>& a, const Matrix<T>& ref) {
    require_input(a.rows() == ref.rows() && a.cols() == ref.cols(), "matrix shapes differ");
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(ref.data()[i])));
        scale = std::max(scale, std::abs(static_cast<double>(ref.data()[i])));
    }
    if (scale == 0.0) return diff;
    return diff / scale;
}

template <typename T>
double max_componentwise_deviation(const Matrix<T>& a, const Matrix<T>& ref, double floor) {
    require_input(a.rows() == ref.rows() && a.cols() == ref.cols(), "matrix shapes differ");
    double scale = 0.0;
    for (auto v : ref.data()) scale = std::max(scale, std::abs(static_cast<double>(v)));
    const double denom_floor = floor * scale;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double r = static_cast<double>(ref.data()[i]);
        const double d = std::abs(static_cast<double>(a.data()[i]) - r);
        const double denom = std::max(std::abs(r), denom_floor);
        if (denom == 0.0) {
            worst = std::max(worst, d);
        } else {
            worst = std::max(worst, d / denom);
        }
    }
    return worst;
}

double GemmCheckReport::grad_max_rel() const {
    return std::max({grad_dx_max_rel, grad_da_max_rel, grad_db_max_rel});
}

GemmCheckReport check_random_spec(std::span<const std::size_t> ranks, std::span<const std::size_t> tokens,
                                  std::size_t d_in, std::size_t d_out, std::size_t block_size, std::uint64_t seed,
                                  double fd_step) {
    Rng rng(seed);
    const auto spec = random_spec<double>(ranks, tokens, d_in, d_out, rng);
    const auto X = random_matrix<double>(spec.total_tokens(), d_in, rng);

    GemmCheckReport rep;
    const auto fwd = grouped_forward(spec, X, block_size);
    rep.forward_max_rel = max_relative_deviation(fwd.Y, naive_forward(spec, X));

    const auto padded = pad_ranks<double>(spec.adapters);
    const auto fwd_pad = grouped_forward_padded(spec, padded, X, block_size);
    rep.padded_bitwise_equal =
        fwd_pad.Y.size() == fwd.Y.size() &&
        std::memcmp(fwd_pad.Y.data().data(), fwd.Y.data().data(), fwd.Y.size() * sizeof(double)) == 0;

    // Loss 0.5 * ||Y||^2 has dL/dY = Y.
    const auto grads = grouped_backward(spec, fwd.cache, fwd.Y, block_size);
    const auto fd = finite_difference_gradients(spec, X, fd_step);
    rep.grad_dx_max_rel = max_componentwise_deviation(grads.dX, fd.dX);
    for (std::size_t i = 0; i < spec.adapters.size(); ++i) {
        rep.grad_da_max_rel = std::max(rep.grad_da_max_rel, max_componentwise_deviation(grads.dA[i], fd.dA[i]));
        rep.grad_db_max_rel = std::max(rep.grad_db_max_rel, max_componentwise_deviation(grads.dB[i], fd.dB[i]));
    }
    rep.flops = flop_accounting(spec);
    return rep;
}

#define LORASCHED_INSTANTIATE(T)                                                                                   \
    template Matrix<T> random_matrix<T>(std::size_t, std::size_t, Rng&, double, double);                           \
    template GroupedLayerSpec<T> random_spec<T>(std::span<const std::size_t>, std::span<const std::size_t>,        \
                                                std::size_t, std::size_t, Rng&);                                   \
    template Matrix<T> naive_forward<T>(const GroupedLayerSpec<T>&, const Matrix<T>&);                             \
    template Gradients<T> finite_difference_gradients<T>(const GroupedLayerSpec<T>&, const Matrix<T>&, T);         \
    template double max_relative_deviation<T>(const Matrix<T>&, const Matrix<T>&);                                 \
    template double max_componentwise_deviation<T>(const Matrix<T>&, const Matrix<T>&, double);

LORASCHED_INSTANTIATE(float)
LORASCHED_INSTANTIATE(double)

#undef LORASCHED_INSTANTIATE

}  // namespace lorasched::lora
