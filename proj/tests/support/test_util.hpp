#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace nftest {

using neuroflux::rng;
using neuroflux::Tensor;

inline Tensor random_tensor(std::vector<int> shape, rng& r, float lo = -1.0f,
                            float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = r.uniform(lo, hi);
  return t;
}

// Reference convolution: direct seven-loop translation of the defining sum,
// y[n,k,i,j] = b[k] + sum_{c,a,b} x[n,c,i*s-p+a,j*s-p+b] * w[k,c,a,b].
// Accumulates in double; deliberately shares nothing with the production
// kernel.
inline Tensor conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor& b,
                            int stride, int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  Tensor y({n, k, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int f = 0; f < k; ++f)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = b[f];
          for (int ch = 0; ch < c; ++ch)
            for (int a = 0; a < kh; ++a)
              for (int bb = 0; bb < kw; ++bb) {
                int ih = i * stride - pad + a;
                int iw = j * stride - pad + bb;
                if (ih < 0 || ih >= h || iw < 0 || iw >= ww) continue;
                acc += static_cast<double>(
                           x[((static_cast<int64_t>(s) * c + ch) * h + ih) * ww + iw]) *
                       static_cast<double>(
                           w[((static_cast<int64_t>(f) * c + ch) * kh + a) * kw + bb]);
              }
          y[((static_cast<int64_t>(s) * k + f) * oh + i) * ow + j] =
              static_cast<float>(acc);
        }
  return y;
}

struct GradCheck {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

// Central finite differences against an analytic gradient. loss_fn must
// recompute the scalar objective from current tensor contents each call.
inline GradCheck fd_check(Tensor& param, const Tensor& analytic,
                          const std::function<double()>& loss_fn,
                          double h = 1e-3, int max_coords = 0,
                          rng* pick = nullptr) {
  GradCheck res;
  int64_t n = param.numel();
  std::vector<int64_t> coords;
  if (max_coords > 0 && n > max_coords && pick) {
    for (int i = 0; i < max_coords; ++i)
      coords.push_back(pick->next_index(static_cast<uint32_t>(n)));
  } else {
    for (int64_t i = 0; i < n; ++i) coords.push_back(i);
  }
  for (int64_t i : coords) {
    float keep = param[i];
    param[i] = keep + static_cast<float>(h);
    double lp = loss_fn();
    param[i] = keep - static_cast<float>(h);
    double lm = loss_fn();
    param[i] = keep;
    double fd = (lp - lm) / (2.0 * h);
    double an = analytic[i];
    double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
    if (rel > res.max_rel_err) res.max_rel_err = rel;
    ++res.checked;
  }
  return res;
}

// Projection objective: dot(kernel output, fixed random direction), summed
// in double so FD noise stays below the tolerance being asserted.
inline double project(const Tensor& y, const Tensor& dir) {
  double acc = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i)
    acc += static_cast<double>(y[i]) * static_cast<double>(dir[i]);
  return acc;
}

inline std::filesystem::path fresh_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() /
           ("nf_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace nftest
