#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace neuroflux {

// Hand-rolled training kernels on NCHW float tensors. All of them are
// deterministic: identical inputs produce bit-identical outputs, which the
// caching and reproducibility guarantees elsewhere lean on. GEMMs go through
// a single-threaded BLAS for the same reason.

struct ConvGrads {
  Tensor grad_input;  // empty when need_grad_input was false
  Tensor grad_weight;
  Tensor grad_bias;
};

// Elements of the im2col workspace one conv call needs. Training steps
// allocate one scratch tensor of the largest such size up front and keep it
// alive for the whole step, so the constant part of the step's footprint is
// the same at every instant and the peak stays exactly affine in the batch.
inline int64_t conv_scratch_elems(int in_c, int kh, int kw, int out_h,
                                  int out_w) {
  return static_cast<int64_t>(in_c) * kh * kw * out_h * out_w;
}

// input [N,C,H,W], weight [K,C,kh,kw], bias [K] -> [N,K,H',W'] where
// H' = (H + 2*padding - kh) / stride + 1. scratch, when given, must hold at
// least conv_scratch_elems for this call; nullptr allocates locally.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, int stride, int padding,
                      Tensor* scratch = nullptr);

// Accumulates parameter gradients into grad_weight/grad_bias (callers zero
// them) and returns the input gradient, empty unless requested.
Tensor conv2d_backward_acc(const Tensor& input, const Tensor& weight,
                           const Tensor& grad_output, int stride, int padding,
                           bool need_grad_input, Tensor& grad_weight,
                           Tensor& grad_bias, Tensor* scratch = nullptr);

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight,
                          const Tensor& grad_output, int stride, int padding,
                          bool need_grad_input = true);

enum class PoolKind { max, avg };

struct PoolCtx {
  PoolKind kind = PoolKind::max;
  int n = 0, c = 0, h = 0, w = 0;
  int oh = 0, ow = 0;
  int kh = 0, kw = 0, stride = 0;
  IntBuffer argmax;  // flat h*W+w per output element; max pooling only
};

struct PoolResult {
  Tensor output;
  PoolCtx ctx;
};

// Floor semantics, no padding: OH = (H - kh) / stride + 1.
PoolResult pool_forward(const Tensor& input, PoolKind kind, int kh, int kw,
                        int stride);
Tensor pool_backward(const PoolCtx& ctx, const Tensor& grad_output);

// Output cell (i,j) averages input rows [floor(i*H/oh), ceil((i+1)*H/oh)),
// columns likewise; covers every input element exactly once when oh | H.
Tensor adaptive_avg_pool_forward(const Tensor& input, int oh, int ow);
Tensor adaptive_avg_pool_backward(const std::vector<int>& input_shape,
                                  const Tensor& grad_output);

Tensor relu_forward(const Tensor& input);
// input is the pre-activation tensor the forward pass saw.
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

Tensor add_forward(const Tensor& a, const Tensor& b);

// input [N,D], weight [K,D], bias [K] -> [N,K]
Tensor linear_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias);

struct LinearGrads {
  Tensor grad_input;
  Tensor grad_weight;
  Tensor grad_bias;
};

// Accumulating variant, mirroring conv2d_backward_acc.
Tensor linear_backward_acc(const Tensor& input, const Tensor& weight,
                           const Tensor& grad_output, bool need_grad_input,
                           Tensor& grad_weight, Tensor& grad_bias);

LinearGrads linear_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& grad_output,
                            bool need_grad_input = true);

struct SoftmaxLoss {
  float loss = 0.0f;            // mean cross-entropy over the batch
  Tensor grad;                  // (softmax - onehot) / N
};

// logits [N,C]; labels must lie in [0, C).
SoftmaxLoss softmax_cross_entropy(const Tensor& logits,
                                  const std::vector<int32_t>& labels);

// v <- momentum * v + grad; param <- param - lr * v
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, float lr,
              float momentum);

// Reinterprets the tensor with a new shape of equal element count. The
// meter charge travels with the storage; nothing is copied.
Tensor reshape(Tensor&& t, std::vector<int> shape);

std::vector<int32_t> argmax_rows(const Tensor& logits);

}  // namespace neuroflux
