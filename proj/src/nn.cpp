#include "prm/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace prm {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void Batch::validate(std::size_t num_classes) const {
    if (images.rank() != 4) throw ShapeError("batch images must be rank-4 [n,c,h,w], got " + images.dims_str());
    if (images.dims[0] < 1) throw ShapeError("batch must contain at least one sample");
    if (labels.size() != images.dims[0])
        throw DataError("label count " + std::to_string(labels.size()) + " != batch size " + std::to_string(images.dims[0]));
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw DataError("label " + std::to_string(y) + " out of range [0," + std::to_string(num_classes) + ")");
}

namespace {

struct ConvDims {
    std::size_t n, c, h, w;       // input
    std::size_t f, kh, kw;        // filters
    std::size_t oh, ow, spatial;  // output
};

ConvDims conv_dims(const Tensor& input, const Tensor& weights) {
    if (input.rank() != 4) throw ShapeError("conv input must be rank-4 [n,c,h,w], got " + input.dims_str());
    if (weights.rank() != 4) throw ShapeError("conv weights must be rank-4 [f,c,kh,kw], got " + weights.dims_str());
    ConvDims d{};
    d.n = input.dims[0];
    d.c = input.dims[1];
    d.h = input.dims[2];
    d.w = input.dims[3];
    d.f = weights.dims[0];
    d.kh = weights.dims[2];
    d.kw = weights.dims[3];
    if (weights.dims[1] != d.c)
        throw ShapeError("conv channel mismatch: input has " + std::to_string(d.c) + " channels, weights expect " +
                         std::to_string(weights.dims[1]));
    if (d.kh > d.h || d.kw > d.w)
        throw ShapeError("conv kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) + " larger than input " +
                         std::to_string(d.h) + "x" + std::to_string(d.w));
    d.oh = d.h - d.kh + 1;
    d.ow = d.w - d.kw + 1;
    d.spatial = d.oh * d.ow;
    return d;
}

// Patch matrix P[K, n*S] with K = C*Kh*Kw in (channel, kh, kw) order, the
// same column convention as the lowered weights. Column i*S+s holds the
// receptive field of output position s in sample i.
void im2col_patches(const Tensor& input, const ConvDims& d, std::vector<double>& patches) {
    const std::size_t cols = d.n * d.spatial;
    patches.assign(d.c * d.kh * d.kw * cols, 0.0);
    const double* in = input.data.data();
    for (std::size_t i = 0; i < d.n; ++i) {
        const double* img = in + i * d.c * d.h * d.w;
        for (std::size_t c = 0; c < d.c; ++c) {
            const double* plane = img + c * d.h * d.w;
            for (std::size_t kh = 0; kh < d.kh; ++kh) {
                for (std::size_t kw = 0; kw < d.kw; ++kw) {
                    double* row = patches.data() + ((c * d.kh + kh) * d.kw + kw) * cols + i * d.spatial;
                    for (std::size_t y = 0; y < d.oh; ++y) {
                        const double* src = plane + (y + kh) * d.w + kw;
                        double* dst = row + y * d.ow;
                        for (std::size_t x = 0; x < d.ow; ++x) dst[x] = src[x];
                    }
                }
            }
        }
    }
}

// Scatter-add of the patch-gradient matrix back to input layout.
void col2im_add(const std::vector<double>& patches, const ConvDims& d, Tensor& grad_input) {
    const std::size_t cols = d.n * d.spatial;
    double* out = grad_input.data.data();
    for (std::size_t i = 0; i < d.n; ++i) {
        double* img = out + i * d.c * d.h * d.w;
        for (std::size_t c = 0; c < d.c; ++c) {
            double* plane = img + c * d.h * d.w;
            for (std::size_t kh = 0; kh < d.kh; ++kh) {
                for (std::size_t kw = 0; kw < d.kw; ++kw) {
                    const double* row = patches.data() + ((c * d.kh + kh) * d.kw + kw) * cols + i * d.spatial;
                    for (std::size_t y = 0; y < d.oh; ++y) {
                        double* dst = plane + (y + kh) * d.w + kw;
                        const double* src = row + y * d.ow;
                        for (std::size_t x = 0; x < d.ow; ++x) dst[x] += src[x];
                    }
                }
            }
        }
    }
}

// Output is [n,F,S]; the GEMM produces [F, n*S], so shuffle sample blocks.
void scatter_output(const std::vector<double>& gemm_out, const ConvDims& d, Tensor& out) {
    const std::size_t cols = d.n * d.spatial;
    for (std::size_t f = 0; f < d.f; ++f) {
        const double* row = gemm_out.data() + f * cols;
        for (std::size_t i = 0; i < d.n; ++i) {
            double* dst = out.data.data() + (i * d.f + f) * d.spatial;
            const double* src = row + i * d.spatial;
            for (std::size_t s = 0; s < d.spatial; ++s) dst[s] = src[s];
        }
    }
}

void gather_grad(const Tensor& grad_out, const ConvDims& d, std::vector<double>& gathered) {
    const std::size_t cols = d.n * d.spatial;
    gathered.assign(d.f * cols, 0.0);
    for (std::size_t f = 0; f < d.f; ++f) {
        double* row = gathered.data() + f * cols;
        for (std::size_t i = 0; i < d.n; ++i) {
            const double* src = grad_out.data.data() + (i * d.f + f) * d.spatial;
            double* dst = row + i * d.spatial;
            for (std::size_t s = 0; s < d.spatial; ++s) dst[s] = src[s];
        }
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    ConvDims d = conv_dims(input, weights);
    if (bias.rank() != 1 || bias.dims[0] != d.f) throw ShapeError("conv bias must be [F], got " + bias.dims_str());

    std::vector<double> patches;
    im2col_patches(input, d, patches);
    const std::size_t k = d.c * d.kh * d.kw;
    const std::size_t cols = d.n * d.spatial;

    std::vector<double> y(d.f * cols);
    ConstMatMap w(weights.data.data(), d.f, k);
    ConstMatMap p(patches.data(), k, cols);
    MatMap(y.data(), d.f, cols).noalias() = w * p;
    for (std::size_t f = 0; f < d.f; ++f) {
        double b = bias.data[f];
        double* row = y.data() + f * cols;
        for (std::size_t j = 0; j < cols; ++j) row[j] += b;
    }

    Tensor out({d.n, d.f, d.oh, d.ow});
    scatter_output(y, d, out);
    return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                     Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias) {
    ConvDims d = conv_dims(input, weights);
    if (grad_out.dims != std::vector<std::size_t>{d.n, d.f, d.oh, d.ow})
        throw ShapeError("conv grad_out dims " + grad_out.dims_str() + " do not match forward output");

    const std::size_t k = d.c * d.kh * d.kw;
    const std::size_t cols = d.n * d.spatial;

    std::vector<double> patches;
    im2col_patches(input, d, patches);
    std::vector<double> dy;
    gather_grad(grad_out, d, dy);

    grad_weights = Tensor::zeros(weights.dims);
    grad_bias = Tensor::zeros({d.f});
    ConstMatMap dym(dy.data(), d.f, cols);
    ConstMatMap p(patches.data(), k, cols);
    MatMap(grad_weights.data.data(), d.f, k).noalias() = dym * p.transpose();
    for (std::size_t f = 0; f < d.f; ++f) {
        double s = 0.0;
        const double* row = dy.data() + f * cols;
        for (std::size_t j = 0; j < cols; ++j) s += row[j];
        grad_bias.data[f] = s;
    }

    if (grad_input) {
        std::vector<double> dp(k * cols);
        ConstMatMap w(weights.data.data(), d.f, k);
        MatMap(dp.data(), k, cols).noalias() = w.transpose() * dym;
        *grad_input = Tensor::zeros(input.dims);
        col2im_add(dp, d, *grad_input);
    }
}

Tensor maxpool2_forward(const Tensor& input, std::vector<std::int32_t>& argmax) {
    if (input.rank() != 4) throw ShapeError("maxpool input must be rank-4, got " + input.dims_str());
    const std::size_t n = input.dims[0], c = input.dims[1], h = input.dims[2], w = input.dims[3];
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("maxpool 2x2 requires even spatial dims, got " + input.dims_str());
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor out({n, c, oh, ow});
    argmax.assign(n * c * oh * ow, 0);
    const double* in = input.data.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        const double* plane = in + p * h * w;
        double* dst = out.data.data() + p * oh * ow;
        std::int32_t* am = argmax.data() + p * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                std::size_t base = (2 * y) * w + 2 * x;
                std::size_t idx[4] = {base, base + 1, base + w, base + w + 1};
                std::size_t best = idx[0];
                for (int t = 1; t < 4; ++t)
                    if (plane[idx[t]] > plane[best]) best = idx[t];
                dst[y * ow + x] = plane[best];
                am[y * ow + x] = static_cast<std::int32_t>(best);
            }
        }
    }
    return out;
}

Tensor maxpool2_backward(const Tensor& grad_out, const std::vector<std::int32_t>& argmax,
                         const std::vector<std::size_t>& input_dims) {
    Tensor grad_in = Tensor::zeros(input_dims);
    const std::size_t n = input_dims[0], c = input_dims[1], h = input_dims[2], w = input_dims[3];
    const std::size_t oh = h / 2, ow = w / 2;
    for (std::size_t p = 0; p < n * c; ++p) {
        double* plane = grad_in.data.data() + p * h * w;
        const double* src = grad_out.data.data() + p * oh * ow;
        const std::int32_t* am = argmax.data() + p * oh * ow;
        for (std::size_t s = 0; s < oh * ow; ++s) plane[am[s]] += src[s];
    }
    return grad_in;
}

Tensor relu_forward(const Tensor& input) {
    Tensor out = input;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& output) {
    Tensor grad_in = grad_out;
    for (std::size_t i = 0; i < grad_in.data.size(); ++i)
        if (output.data[i] <= 0.0) grad_in.data[i] = 0.0;
    return grad_in;
}

Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (input.rank() != 2) throw ShapeError("linear input must be rank-2 [n,in], got " + input.dims_str());
    if (weights.rank() != 2) throw ShapeError("linear weights must be rank-2 [out,in], got " + weights.dims_str());
    const std::size_t n = input.dims[0], in = input.dims[1], out_f = weights.dims[0];
    if (weights.dims[1] != in)
        throw ShapeError("linear dims mismatch: input width " + std::to_string(in) + " vs weights " + weights.dims_str());
    if (bias.rank() != 1 || bias.dims[0] != out_f) throw ShapeError("linear bias must be [out], got " + bias.dims_str());
    Tensor y({n, out_f});
    ConstMatMap x(input.data.data(), n, in);
    ConstMatMap w(weights.data.data(), out_f, in);
    MatMap(y.data.data(), n, out_f).noalias() = x * w.transpose();
    for (std::size_t i = 0; i < n; ++i) {
        double* row = y.data.data() + i * out_f;
        for (std::size_t f = 0; f < out_f; ++f) row[f] += bias.data[f];
    }
    return y;
}

void linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                     Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias) {
    const std::size_t n = input.dims[0], in = input.dims[1], out_f = weights.dims[0];
    if (grad_out.dims != std::vector<std::size_t>{n, out_f})
        throw ShapeError("linear grad_out dims " + grad_out.dims_str() + " do not match forward output");
    grad_weights = Tensor::zeros(weights.dims);
    grad_bias = Tensor::zeros({out_f});
    ConstMatMap x(input.data.data(), n, in);
    ConstMatMap dy(grad_out.data.data(), n, out_f);
    MatMap(grad_weights.data.data(), out_f, in).noalias() = dy.transpose() * x;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = grad_out.data.data() + i * out_f;
        for (std::size_t f = 0; f < out_f; ++f) grad_bias.data[f] += row[f];
    }
    if (grad_input) {
        *grad_input = Tensor::zeros(input.dims);
        ConstMatMap w(weights.data.data(), out_f, in);
        MatMap(grad_input->data.data(), n, in).noalias() = dy * w;
    }
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad_logits) {
    if (logits.rank() != 2) throw ShapeError("logits must be rank-2 [n,classes], got " + logits.dims_str());
    const std::size_t n = logits.dims[0], k = logits.dims[1];
    if (labels.size() != n) throw ShapeError("label count does not match logits batch");
    if (grad_logits) *grad_logits = Tensor::zeros(logits.dims);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const int y = labels[i];
        total += std::log(z) - (row[y] - mx);
        if (grad_logits) {
            double* g = grad_logits->data.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) g[j] = std::exp(row[j] - mx) / z / static_cast<double>(n);
            g[y] -= 1.0 / static_cast<double>(n);
        }
    }
    return total / static_cast<double>(n);
}

void per_sample_cross_entropy(const Tensor& logits, const std::vector<int>& labels, std::vector<double>& out) {
    const std::size_t n = logits.dims[0], k = logits.dims[1];
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        out[i] = std::log(z) - (row[labels[i]] - mx);
    }
}

void optimizer_step(Tensor& weights, const Tensor& grad, OptimizerState& state, const OptimizerHyper& hyper) {
    if (!grad.same_dims(weights))
        throw ShapeError("gradient dims " + grad.dims_str() + " do not match weights " + weights.dims_str());
    if (!grad.all_finite()) throw NumericError("non-finite gradient; optimizer step aborted");

    if (hyper.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < weights.data.size(); ++i) weights.data[i] -= hyper.lr * grad.data[i];
        ++state.step;
        return;
    }

    if (state.m.empty()) {
        state.m = Tensor::zeros(weights.dims);
        state.v = Tensor::zeros(weights.dims);
    } else if (!state.m.same_dims(weights)) {
        throw ShapeError("optimizer state dims do not match weights");
    }
    ++state.step;
    const double b1 = hyper.beta1, b2 = hyper.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < weights.data.size(); ++i) {
        double g = grad.data[i];
        double m = state.m.data[i] = b1 * state.m.data[i] + (1.0 - b1) * g;
        double v = state.v.data[i] = b2 * state.v.data[i] + (1.0 - b2) * g * g;
        weights.data[i] -= hyper.lr * (m / bc1) / (std::sqrt(v / bc2) + hyper.eps);
    }
}

}  // namespace prm
