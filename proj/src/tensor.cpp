#include "prm/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace prm {

std::size_t checked_numel(const std::vector<std::size_t>& dims) {
    if (dims.empty()) throw ShapeError("tensor must have at least one dimension");
    std::size_t n = 1;
    for (std::size_t d : dims) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<std::size_t> d) : dims(std::move(d)), data(checked_numel(dims), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> d, std::vector<double> values) : dims(std::move(d)), data(std::move(values)) {
    if (checked_numel(dims) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match dims " + dims_str());
}

Tensor Tensor::full(std::vector<std::size_t> d, double v) {
    Tensor t(std::move(d));
    t.fill(v);
    return t;
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != dims.size()) throw ShapeError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        if (i >= dims[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
        flat = flat * dims[axis] + i;
        ++axis;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data[flat_index(idx)]; }

double Tensor::at(std::initializer_list<std::size_t> idx) const { return data[flat_index(idx)]; }

std::string Tensor::dims_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << "]";
    return os.str();
}

std::size_t Tensor::count_nonzero() const {
    std::size_t n = 0;
    for (double v : data) n += (v != 0.0);
    return n;
}

double Tensor::sum_squares() const {
    double s = 0.0;
    for (double v : data) s += v * v;
    return s;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

void require_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

std::size_t lowered_rows(const Tensor& w) {
    if (w.rank() != 2 && w.rank() != 4) throw ShapeError("lowering requires a rank-2 or rank-4 tensor, got " + w.dims_str());
    return w.dims[0];
}

std::size_t lowered_cols(const Tensor& w) {
    if (w.rank() == 2) return w.dims[1];
    if (w.rank() == 4) return w.dims[1] * w.dims[2] * w.dims[3];
    throw ShapeError("lowering requires a rank-2 or rank-4 tensor, got " + w.dims_str());
}

Tensor im2col_lower(const Tensor& w) {
    if (w.rank() != 4) throw ShapeError("im2col_lower expects a rank-4 tensor, got " + w.dims_str());
    return Tensor({w.dims[0], w.dims[1] * w.dims[2] * w.dims[3]}, w.data);
}

Tensor im2col_raise(const Tensor& m, std::size_t channels, std::size_t kh, std::size_t kw) {
    if (m.rank() != 2) throw ShapeError("im2col_raise expects a rank-2 tensor, got " + m.dims_str());
    if (m.dims[1] != channels * kh * kw)
        throw ShapeError("im2col_raise: column count " + std::to_string(m.dims[1]) + " != C*Kh*Kw");
    return Tensor({m.dims[0], channels, kh, kw}, m.data);
}

Tensor he_normal(std::vector<std::size_t> dims, std::size_t fan_in, std::mt19937_64& rng) {
    Tensor t(std::move(dims));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : t.data) v = dist(rng);
    return t;
}

}  // namespace prm
