#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prm/tensor.hpp"

namespace prm {

// Training-data carrier. images is [n,C,h,w]; labels are class indices.
struct Batch {
    Tensor images;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    void validate(std::size_t num_classes) const;
};

// Scalar loss plus per-layer gradients keyed by layer name. Weight gradients
// match the layer's weight dims; bias gradients are kept alongside.
struct LossValue {
    double value = 0.0;
    std::map<std::string, Tensor> gradients;
    std::map<std::string, Tensor> bias_gradients;
};

// ---- layer kernels (stride 1, no padding; pool is 2x2 stride 2) ----

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
void conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                     Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias);

Tensor maxpool2_forward(const Tensor& input, std::vector<std::int32_t>& argmax);
Tensor maxpool2_backward(const Tensor& grad_out, const std::vector<std::int32_t>& argmax,
                         const std::vector<std::size_t>& input_dims);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& grad_out, const Tensor& output);

Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
void linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                     Tensor* grad_input, Tensor& grad_weights, Tensor& grad_bias);

// Mean softmax cross-entropy over the batch. grad_logits gets (p - onehot)/n.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad_logits);

// Per-sample losses in dataset order, for batch-size-independent evaluation.
void per_sample_cross_entropy(const Tensor& logits, const std::vector<int>& labels, std::vector<double>& out);

// ---- optimizer ----

enum class OptimizerKind { Adam, Sgd };

struct OptimizerHyper {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam moment buffers plus the bias-correction step counter. For SGD the
// buffers stay empty.
struct OptimizerState {
    Tensor m;
    Tensor v;
    std::int64_t step = 0;
};

void optimizer_step(Tensor& weights, const Tensor& grad, OptimizerState& state, const OptimizerHyper& hyper);

}  // namespace prm
