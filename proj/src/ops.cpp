#include "ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "errors.hpp"

extern "C" void openblas_set_num_threads(int) __attribute__((weak));

namespace neuroflux {

namespace {

// Threaded GEMM partitions can reorder reductions; pin to one thread so the
// bit-identity guarantees hold no matter how the host library was built.
struct BlasInit {
  BlasInit() {
    if (openblas_set_num_threads) openblas_set_num_threads(1);
  }
};
const BlasInit blas_init;

void require(bool cond, const char* msg) {
  if (!cond) throw input_error(msg);
}

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Scatters one sample's input patch matrix; cols is [C*kh*kw, OH*OW].
void im2col(const float* in, int c, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, float* cols) {
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = in + static_cast<size_t>(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* row = cols + (static_cast<size_t>(ch) * kh * kw + ki * kw + kj) *
                                (static_cast<size_t>(oh) * ow);
        for (int i = 0; i < oh; ++i) {
          int ih = i * stride - pad + ki;
          float* dst = row + static_cast<size_t>(i) * ow;
          if (ih < 0 || ih >= h) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(ow));
            continue;
          }
          const float* src = plane + static_cast<size_t>(ih) * w;
          for (int j = 0; j < ow; ++j) {
            int iw = j * stride - pad + kj;
            dst[j] = (iw >= 0 && iw < w) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int c, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, float* in) {
  for (int ch = 0; ch < c; ++ch) {
    float* plane = in + static_cast<size_t>(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* row = cols + (static_cast<size_t>(ch) * kh * kw + ki * kw + kj) *
                                      (static_cast<size_t>(oh) * ow);
        for (int i = 0; i < oh; ++i) {
          int ih = i * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          float* dst = plane + static_cast<size_t>(ih) * w;
          const float* src = row + static_cast<size_t>(i) * ow;
          for (int j = 0; j < ow; ++j) {
            int iw = j * stride - pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[j];
          }
        }
      }
    }
  }
}

}  // namespace

namespace {

// Workspace for one conv call: the caller's scratch when it is big enough,
// otherwise a local tensor that lives for the duration of the call.
float* col_buffer(Tensor* scratch, int patch, int cells, Tensor* local) {
  const int64_t need = static_cast<int64_t>(patch) * cells;
  if (scratch != nullptr) {
    require(scratch->numel() >= need, "conv2d: scratch workspace too small");
    return scratch->data();
  }
  *local = Tensor({patch, cells});
  return local->data();
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, int stride, int padding,
                      Tensor* scratch) {
  require(input.rank() == 4, "conv2d: input must be [N,C,H,W]");
  require(weight.rank() == 4, "conv2d: weight must be [K,C,kh,kw]");
  require(weight.dim(1) == input.dim(1), "conv2d: channel mismatch");
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0),
          "conv2d: bias must be [K]");
  require(stride >= 1 && padding >= 0, "conv2d: bad stride or padding");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int k = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const int oh = conv_out_dim(h, kh, stride, padding);
  const int ow = conv_out_dim(w, kw, stride, padding);
  require(oh > 0 && ow > 0, "conv2d: output dims must be positive");

  Tensor out({n, k, oh, ow});
  const int patch = c * kh * kw;
  const int cells = oh * ow;
  Tensor local;
  float* cols = col_buffer(scratch, patch, cells, &local);
  for (int s = 0; s < n; ++s) {
    const float* x = input.data() + static_cast<size_t>(s) * c * h * w;
    float* y = out.data() + static_cast<size_t>(s) * k * cells;
    im2col(x, c, h, w, kh, kw, stride, padding, oh, ow, cols);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, k, cells, patch,
                1.0f, weight.data(), patch, cols, cells, 0.0f, y, cells);
    for (int ch = 0; ch < k; ++ch) {
      float b = bias[ch];
      float* plane = y + static_cast<size_t>(ch) * cells;
      for (int i = 0; i < cells; ++i) plane[i] += b;
    }
  }
  return out;
}

Tensor conv2d_backward_acc(const Tensor& input, const Tensor& weight,
                           const Tensor& grad_output, int stride, int padding,
                           bool need_grad_input, Tensor& grad_weight,
                           Tensor& grad_bias, Tensor* scratch) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int k = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const int oh = grad_output.dim(2), ow = grad_output.dim(3);
  require(grad_output.dim(0) == n && grad_output.dim(1) == k,
          "conv2d_backward: grad_output shape mismatch");
  require(oh == conv_out_dim(h, kh, stride, padding) &&
              ow == conv_out_dim(w, kw, stride, padding),
          "conv2d_backward: grad_output spatial mismatch");
  require(grad_weight.shape() == weight.shape(),
          "conv2d_backward: grad_weight shape mismatch");
  require(grad_bias.rank() == 1 && grad_bias.dim(0) == k,
          "conv2d_backward: grad_bias shape mismatch");

  Tensor grad_input;
  if (need_grad_input) grad_input = Tensor({n, c, h, w});

  const int patch = c * kh * kw;
  const int cells = oh * ow;
  Tensor local;
  float* cols = col_buffer(scratch, patch, cells, &local);
  for (int s = 0; s < n; ++s) {
    const float* x = input.data() + static_cast<size_t>(s) * c * h * w;
    const float* gy = grad_output.data() + static_cast<size_t>(s) * k * cells;

    im2col(x, c, h, w, kh, kw, stride, padding, oh, ow, cols);
    // gw [k, patch] += gy [k, cells] * cols^T [cells, patch]
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, k, patch, cells, 1.0f,
                gy, cells, cols, cells, 1.0f, grad_weight.data(), patch);
    for (int ch = 0; ch < k; ++ch) {
      const float* plane = gy + static_cast<size_t>(ch) * cells;
      float acc = grad_bias[ch];
      for (int i = 0; i < cells; ++i) acc += plane[i];
      grad_bias[ch] = acc;
    }
    if (need_grad_input) {
      // cols [patch, cells] = weight^T [patch, k] * gy [k, cells]
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, patch, cells, k,
                  1.0f, weight.data(), patch, gy, cells, 0.0f, cols, cells);
      col2im(cols, c, h, w, kh, kw, stride, padding, oh, ow,
             grad_input.data() + static_cast<size_t>(s) * c * h * w);
    }
  }
  return grad_input;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight,
                          const Tensor& grad_output, int stride, int padding,
                          bool need_grad_input) {
  ConvGrads g;
  g.grad_weight = Tensor(weight.shape());
  g.grad_bias = Tensor({weight.dim(0)});
  g.grad_input =
      conv2d_backward_acc(input, weight, grad_output, stride, padding,
                          need_grad_input, g.grad_weight, g.grad_bias);
  return g;
}

PoolResult pool_forward(const Tensor& input, PoolKind kind, int kh, int kw,
                        int stride) {
  require(input.rank() == 4, "pool: input must be [N,C,H,W]");
  require(kh >= 1 && kw >= 1 && stride >= 1, "pool: bad window");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h >= kh && w >= kw, "pool: window larger than input");
  const int oh = (h - kh) / stride + 1;
  const int ow = (w - kw) / stride + 1;

  PoolResult r;
  r.output = Tensor({n, c, oh, ow});
  r.ctx.kind = kind;
  r.ctx.n = n; r.ctx.c = c; r.ctx.h = h; r.ctx.w = w;
  r.ctx.oh = oh; r.ctx.ow = ow;
  r.ctx.kh = kh; r.ctx.kw = kw; r.ctx.stride = stride;
  if (kind == PoolKind::max)
    r.ctx.argmax = IntBuffer(static_cast<size_t>(n) * c * oh * ow);

  const float inv = 1.0f / static_cast<float>(kh * kw);
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const float* plane =
          input.data() + (static_cast<size_t>(s) * c + ch) * h * w;
      float* out =
          r.output.data() + (static_cast<size_t>(s) * c + ch) * oh * ow;
      int32_t* idx =
          kind == PoolKind::max
              ? r.ctx.argmax.data() + (static_cast<size_t>(s) * c + ch) * oh * ow
              : nullptr;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          int ih0 = i * stride, iw0 = j * stride;
          if (kind == PoolKind::max) {
            float best = plane[ih0 * w + iw0];
            int best_at = ih0 * w + iw0;
            for (int a = 0; a < kh; ++a)
              for (int b = 0; b < kw; ++b) {
                int at = (ih0 + a) * w + (iw0 + b);
                if (plane[at] > best) {
                  best = plane[at];
                  best_at = at;
                }
              }
            out[i * ow + j] = best;
            idx[i * ow + j] = best_at;
          } else {
            float acc = 0.0f;
            for (int a = 0; a < kh; ++a)
              for (int b = 0; b < kw; ++b)
                acc += plane[(ih0 + a) * w + (iw0 + b)];
            out[i * ow + j] = acc * inv;
          }
        }
      }
    }
  }
  return r;
}

Tensor pool_backward(const PoolCtx& ctx, const Tensor& grad_output) {
  require(grad_output.rank() == 4 && grad_output.dim(0) == ctx.n &&
              grad_output.dim(1) == ctx.c && grad_output.dim(2) == ctx.oh &&
              grad_output.dim(3) == ctx.ow,
          "pool_backward: grad shape mismatch");
  Tensor gx({ctx.n, ctx.c, ctx.h, ctx.w});
  const float inv = 1.0f / static_cast<float>(ctx.kh * ctx.kw);
  for (int s = 0; s < ctx.n; ++s) {
    for (int ch = 0; ch < ctx.c; ++ch) {
      size_t po = (static_cast<size_t>(s) * ctx.c + ch);
      float* plane = gx.data() + po * ctx.h * ctx.w;
      const float* gy = grad_output.data() + po * ctx.oh * ctx.ow;
      if (ctx.kind == PoolKind::max) {
        const int32_t* idx = ctx.argmax.data() + po * ctx.oh * ctx.ow;
        for (int i = 0; i < ctx.oh * ctx.ow; ++i) plane[idx[i]] += gy[i];
      } else {
        for (int i = 0; i < ctx.oh; ++i)
          for (int j = 0; j < ctx.ow; ++j) {
            float v = gy[i * ctx.ow + j] * inv;
            for (int a = 0; a < ctx.kh; ++a)
              for (int b = 0; b < ctx.kw; ++b)
                plane[(i * ctx.stride + a) * ctx.w + (j * ctx.stride + b)] += v;
          }
      }
    }
  }
  return gx;
}

Tensor adaptive_avg_pool_forward(const Tensor& input, int oh, int ow) {
  require(input.rank() == 4, "adaptive_avg_pool: input must be [N,C,H,W]");
  require(oh >= 1 && ow >= 1, "adaptive_avg_pool: bad target");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out({n, c, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const float* plane = input.data() + (static_cast<size_t>(s) * c + ch) * h * w;
      float* dst = out.data() + (static_cast<size_t>(s) * c + ch) * oh * ow;
      for (int i = 0; i < oh; ++i) {
        int r0 = (i * h) / oh, r1 = ((i + 1) * h + oh - 1) / oh;
        for (int j = 0; j < ow; ++j) {
          int c0 = (j * w) / ow, c1 = ((j + 1) * w + ow - 1) / ow;
          float acc = 0.0f;
          for (int a = r0; a < r1; ++a)
            for (int b = c0; b < c1; ++b) acc += plane[a * w + b];
          dst[i * ow + j] = acc / static_cast<float>((r1 - r0) * (c1 - c0));
        }
      }
    }
  return out;
}

Tensor adaptive_avg_pool_backward(const std::vector<int>& input_shape,
                                  const Tensor& grad_output) {
  const int n = input_shape[0], c = input_shape[1], h = input_shape[2],
            w = input_shape[3];
  const int oh = grad_output.dim(2), ow = grad_output.dim(3);
  Tensor gx({n, c, h, w});
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      float* plane = gx.data() + (static_cast<size_t>(s) * c + ch) * h * w;
      const float* gy =
          grad_output.data() + (static_cast<size_t>(s) * c + ch) * oh * ow;
      for (int i = 0; i < oh; ++i) {
        int r0 = (i * h) / oh, r1 = ((i + 1) * h + oh - 1) / oh;
        for (int j = 0; j < ow; ++j) {
          int c0 = (j * w) / ow, c1 = ((j + 1) * w + ow - 1) / ow;
          float v = gy[i * ow + j] / static_cast<float>((r1 - r0) * (c1 - c0));
          for (int a = r0; a < r1; ++a)
            for (int b = c0; b < c1; ++b) plane[a * w + b] += v;
        }
      }
    }
  return gx;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  const float* x = input.data();
  float* y = out.data();
  for (int64_t i = 0; i < input.numel(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  require(input.numel() == grad_output.numel(), "relu_backward: shape mismatch");
  Tensor gx(input.shape());
  const float* x = input.data();
  const float* gy = grad_output.data();
  float* g = gx.data();
  for (int64_t i = 0; i < input.numel(); ++i) g[i] = x[i] > 0.0f ? gy[i] : 0.0f;
  return gx;
}

Tensor add_forward(const Tensor& a, const Tensor& b) {
  require(a.numel() == b.numel(), "add: shape mismatch");
  Tensor out(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* y = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) y[i] = pa[i] + pb[i];
  return out;
}

Tensor linear_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias) {
  require(input.rank() == 2 && weight.rank() == 2, "linear: rank mismatch");
  require(input.dim(1) == weight.dim(1), "linear: inner dim mismatch");
  const int n = input.dim(0), d = input.dim(1), k = weight.dim(0);
  Tensor out({n, k});
  // out [n,k] = input [n,d] * weight^T [d,k]
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, n, k, d, 1.0f,
              input.data(), d, weight.data(), d, 0.0f, out.data(), k);
  for (int s = 0; s < n; ++s) {
    float* row = out.data() + static_cast<size_t>(s) * k;
    for (int j = 0; j < k; ++j) row[j] += bias[j];
  }
  return out;
}

Tensor linear_backward_acc(const Tensor& input, const Tensor& weight,
                           const Tensor& grad_output, bool need_grad_input,
                           Tensor& grad_weight, Tensor& grad_bias) {
  const int n = input.dim(0), d = input.dim(1), k = weight.dim(0);
  require(grad_output.dim(0) == n && grad_output.dim(1) == k,
          "linear_backward: grad shape mismatch");
  require(grad_weight.shape() == weight.shape() && grad_bias.dim(0) == k,
          "linear_backward: grad buffer shape mismatch");
  // gw [k,d] += gy^T [k,n] * input [n,d]
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, d, n, 1.0f,
              grad_output.data(), k, input.data(), d, 1.0f, grad_weight.data(),
              d);
  for (int s = 0; s < n; ++s) {
    const float* row = grad_output.data() + static_cast<size_t>(s) * k;
    for (int j = 0; j < k; ++j) grad_bias[j] += row[j];
  }
  Tensor grad_input;
  if (need_grad_input) {
    grad_input = Tensor({n, d});
    // gx [n,d] = gy [n,k] * weight [k,d]
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, d, k, 1.0f,
                grad_output.data(), k, weight.data(), d, 0.0f,
                grad_input.data(), d);
  }
  return grad_input;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& grad_output, bool need_grad_input) {
  LinearGrads g;
  g.grad_weight = Tensor(weight.shape());
  g.grad_bias = Tensor({weight.dim(0)});
  g.grad_input = linear_backward_acc(input, weight, grad_output,
                                     need_grad_input, g.grad_weight,
                                     g.grad_bias);
  return g;
}

SoftmaxLoss softmax_cross_entropy(const Tensor& logits,
                                  const std::vector<int32_t>& labels) {
  require(logits.rank() == 2, "softmax: logits must be [N,C]");
  const int n = logits.dim(0), c = logits.dim(1);
  require(static_cast<int>(labels.size()) == n, "softmax: label count mismatch");
  SoftmaxLoss r;
  r.grad = Tensor({n, c});
  double loss_acc = 0.0;
  const float inv_n = 1.0f / static_cast<float>(n);
  for (int s = 0; s < n; ++s) {
    if (labels[s] < 0 || labels[s] >= c)
      throw input_error("softmax: label out of range");
    const float* row = logits.data() + static_cast<size_t>(s) * c;
    float* grow = r.grad.data() + static_cast<size_t>(s) * c;
    float m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - m));
    double log_z = std::log(z);
    loss_acc += log_z - static_cast<double>(row[labels[s]] - m);
    for (int j = 0; j < c; ++j) {
      double p = std::exp(static_cast<double>(row[j] - m)) / z;
      grow[j] = static_cast<float>(p) * inv_n;
    }
    grow[labels[s]] -= inv_n;
  }
  r.loss = static_cast<float>(loss_acc / n);
  return r;
}

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, float lr,
              float momentum) {
  require(param.numel() == grad.numel() && param.numel() == velocity.numel(),
          "sgd_step: size mismatch");
  float* p = param.data();
  const float* g = grad.data();
  float* v = velocity.data();
  for (int64_t i = 0; i < param.numel(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

Tensor reshape(Tensor&& t, std::vector<int> shape) {
  return std::move(t).reshaped(std::move(shape));
}

std::vector<int32_t> argmax_rows(const Tensor& logits) {
  const int n = logits.dim(0), c = logits.dim(1);
  std::vector<int32_t> out(static_cast<size_t>(n));
  for (int s = 0; s < n; ++s) {
    const float* row = logits.data() + static_cast<size_t>(s) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<size_t>(s)] = best;
  }
  return out;
}

}  // namespace neuroflux
