#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "prm/errors.hpp"

namespace prm {

// Dense row-major tensor of doubles. The rank-4 conv layout [F,C,Kh,Kw]
// flattens filter-contiguously, so the GEMM-lowered [F, C*Kh*Kw] matrix is
// the same buffer reinterpreted; lowering never copies column data around.
struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> d);
    Tensor(std::vector<std::size_t> d, std::vector<double> values);

    static Tensor zeros(std::vector<std::size_t> d) { return Tensor(std::move(d)); }
    static Tensor full(std::vector<std::size_t> d, double v);

    std::size_t rank() const { return dims.size(); }
    std::size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    std::size_t flat_index(std::initializer_list<std::size_t> idx) const;
    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;

    bool same_dims(const Tensor& other) const { return dims == other.dims; }
    std::string dims_str() const;

    std::size_t count_nonzero() const;
    double sum_squares() const;
    bool all_finite() const;
    void fill(double v);
};

std::size_t checked_numel(const std::vector<std::size_t>& dims);

// Throws NumericError naming `what` if any entry is NaN/Inf.
void require_finite(const Tensor& t, const std::string& what);

// Lowered (GEMM) view of a weighted layer's tensor: rank-4 [F,C,Kh,Kw]
// becomes F x (C*Kh*Kw) with column order (channel, kh, kw); rank-2 [out,in]
// is already its own lowering.
std::size_t lowered_rows(const Tensor& w);
std::size_t lowered_cols(const Tensor& w);

// Pure reshape of a rank-4 weight tensor to its lowered matrix (copying
// constructor form of the view above). Round-trips losslessly.
Tensor im2col_lower(const Tensor& w);
Tensor im2col_raise(const Tensor& m, std::size_t channels, std::size_t kh, std::size_t kw);

// Seeded Gaussian init, scale = sqrt(2 / fan_in).
Tensor he_normal(std::vector<std::size_t> dims, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace prm
