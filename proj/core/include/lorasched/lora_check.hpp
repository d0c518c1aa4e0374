// SPDX-License-Identifier: Apache-2.0
//
// Independent checks for the grouped LoRA math. Nothing here calls into the
// grouped forward/backward path: the forward oracle is a plain per-adapter loop
// and the gradient oracle is a central finite difference of 0.5 * ||Y||^2.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lorasched/lora_math.hpp"
#include "lorasched/rng.hpp"

namespace lorasched::lora {

template <typename T>
Matrix<T> random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0);

/// Random layer with adapter i of rank ranks[i] owning tokens[i] rows; scale = alpha / r = 2.
template <typename T>
GroupedLayerSpec<T> random_spec(std::span<const std::size_t> ranks, std::span<const std::size_t> tokens,
                                std::size_t d_in, std::size_t d_out, Rng& rng);

/// Y_i = X_i W + scale_i (X_i A_i) B_i, one adapter at a time.
template <typename T>
Matrix<T> naive_forward(const GroupedLayerSpec<T>& spec, const Matrix<T>& X);

/// Central differences of L = 0.5 * ||Y||^2 with respect to every entry of
/// every A_i, B_i, and X. Only the rows a perturbation can touch are re-evaluated.
template <typename T>
Gradients<T> finite_difference_gradients(const GroupedLayerSpec<T>& spec, const Matrix<T>& X, T h);

/// max |a - b| / max |ref| over the whole matrix.
template <typename T>
double max_relative_deviation(const Matrix<T>& a, const Matrix<T>& ref);

/// Largest per-component |a - ref| / max(|ref|, floor * max|ref|).
template <typename T>
double max_componentwise_deviation(const Matrix<T>& a, const Matrix<T>& ref, double floor = 1e-3);

struct GemmCheckReport {
    double forward_max_rel = 0.0;
    double grad_dx_max_rel = 0.0;
    double grad_da_max_rel = 0.0;
    double grad_db_max_rel = 0.0;
    bool padded_bitwise_equal = false;
    FlopReport flops;

    double grad_max_rel() const;
};

/// Full verification of one random spec in double precision.
GemmCheckReport check_random_spec(std::span<const std::size_t> ranks, std::span<const std::size_t> tokens,
                                  std::size_t d_in, std::size_t d_out, std::size_t block_size, std::uint64_t seed,
                                  double fd_step = 1e-5);

}  // namespace lorasched::lora
