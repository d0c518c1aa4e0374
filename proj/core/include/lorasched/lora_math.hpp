// SPDX-License-Identifier: Apache-2.0
//
// Host-side reference for a frozen linear layer shared by several LoRA adapters:
//
//   Y[rows of i] = X_i W + scale_i * (X_i A_i) B_i
//
// Tokens of all adapters live in one flattened activation buffer; adapter i owns
// the contiguous row range [start_i, end_i). Work is dispatched through a schedule
// table of (adapter, block) pairs exactly as a grouped kernel would, and mixed
// ranks are handled by padding only the weight matrices to r_max.
//
// Instantiated for float and double.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lorasched::lora {

/// Dense row-major matrix.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }

    static Matrix identity(std::size_t n);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

struct TokenRange {
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t length() const { return end - start; }
    friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

/// Contiguous ranges covering [0, sum(lengths)).
std::vector<TokenRange> make_token_ranges(std::span<const std::size_t> lengths);

template <typename T>
struct Adapter {
    Matrix<T> A;  // k x r
    Matrix<T> B;  // r x n
    T scale = T(2);
    std::size_t rank() const { return A.cols(); }
};

template <typename T>
struct GroupedLayerSpec {
    std::size_t d_in = 0;   // k
    std::size_t d_out = 0;  // n
    Matrix<T> W;            // k x n, frozen
    std::vector<Adapter<T>> adapters;
    std::vector<TokenRange> token_ranges;

    std::size_t total_tokens() const { return token_ranges.empty() ? 0 : token_ranges.back().end; }
    /// Throws InputError naming the offending adapter on any shape problem.
    void validate() const;
};

struct ScheduleEntry {
    std::size_t adapter = 0;
    std::size_t block = 0;
    friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

struct ScheduleTable {
    std::vector<ScheduleEntry> entries;
    std::size_t block_size = 64;

    /// Row range [first, last) covered by `e`; the last block of an adapter is
    /// clipped to the adapter's end (the token mask).
    TokenRange rows(const ScheduleEntry& e, std::span<const TokenRange> ranges) const;
};

inline constexpr std::size_t kDefaultBlockSize = 64;

ScheduleTable build_schedule(std::span<const TokenRange> ranges, std::size_t block_size = kDefaultBlockSize);

/// Adapters stacked along a leading Z axis with ranks padded to r_max.
template <typename T>
struct PaddedAdapters {
    std::size_t r_max = 0;
    std::vector<std::size_t> ranks;  // valid columns per adapter (the mask)
    std::vector<Matrix<T>> A;        // Z x [k x r_max]
    std::vector<Matrix<T>> B;        // Z x [r_max x n]
    std::vector<T> scales;
};

template <typename T>
PaddedAdapters<T> pad_ranks(std::span<const Adapter<T>> adapters);

template <typename T>
struct ForwardCache {
    /// S_i = X_i A_i, unscaled, in the padded layout [L_total x r_max]. Columns
    /// at or beyond an adapter's rank are exactly zero.
    Matrix<T> S;
    Matrix<T> X;
    std::size_t r_max = 0;
};

template <typename T>
struct ForwardResult {
    Matrix<T> Y;
    ForwardCache<T> cache;
};

/// Base GEMM over the whole batch, then the adapter path through the schedule
/// table, fused-added into the base output.
template <typename T>
ForwardResult<T> grouped_forward(const GroupedLayerSpec<T>& spec, const Matrix<T>& X,
                                 std::size_t block_size = kDefaultBlockSize);

/// Same computation on the rank-padded stacked layout.
template <typename T>
ForwardResult<T> grouped_forward_padded(const GroupedLayerSpec<T>& spec, const PaddedAdapters<T>& padded,
                                        const Matrix<T>& X, std::size_t block_size = kDefaultBlockSize);

template <typename T>
struct Gradients {
    Matrix<T> dX;
    std::vector<Matrix<T>> dA;  // k x r_i
    std::vector<Matrix<T>> dB;  // r_i x n
};

template <typename T>
struct PaddedGradients {
    Matrix<T> dX;
    std::vector<Matrix<T>> dA;  // k x r_max, padded columns zero
    std::vector<Matrix<T>> dB;  // r_max x n, padded rows zero
};

/// Backward on the padded layout: one schedule-driven pass for the input
/// gradients, then one batched pass each for dA and dB over all adapters.
template <typename T>
PaddedGradients<T> grouped_backward_padded(const GroupedLayerSpec<T>& spec, const PaddedAdapters<T>& padded,
                                           const ForwardCache<T>& cache, const Matrix<T>& dY,
                                           std::size_t block_size = kDefaultBlockSize);

/// dS_i = s dY_i B_i^T, dX_i = dY_i W^T + dS_i A_i^T, dA_i = X_i^T dS_i, dB_i = s S_i^T dY_i.
template <typename T>
Gradients<T> grouped_backward(const GroupedLayerSpec<T>& spec, const ForwardCache<T>& cache, const Matrix<T>& dY,
                              std::size_t block_size = kDefaultBlockSize);

struct FlopReport {
    std::uint64_t base_flops = 0;
    std::uint64_t useful_lora_flops = 0;
    std::uint64_t wide_lora_flops = 0;
    double waste_ratio = 1.0;
};

/// Forward FLOPs of the base GEMM, the per-adapter (diagonal) LoRA GEMMs, and a
/// single wide GEMM over the concatenated ranks.
FlopReport flop_accounting(std::span<const std::size_t> token_counts, std::span<const std::size_t> ranks,
                           std::size_t d_in, std::size_t d_out);

template <typename T>
FlopReport flop_accounting(const GroupedLayerSpec<T>& spec);

}  // namespace lorasched::lora
