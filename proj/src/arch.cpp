#include "arch.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "rng.hpp"

namespace neuroflux {

namespace {

void fill_kaiming(Tensor& w, int fan_in, rng& r) {
  float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = r.uniform(-bound, bound);
}

int64_t conv_param_count(int in, int out, int k) {
  return static_cast<int64_t>(in) * out * k * k + out;
}

int64_t unit_param_count(const LayerSpec& s) {
  if (s.kind == LayerKind::conv_stage)
    return conv_param_count(s.in_channels, s.out_channels, 3);
  int64_t n = conv_param_count(s.in_channels, s.out_channels, 3) +
              conv_param_count(s.out_channels, s.out_channels, 3);
  if (s.in_channels != s.out_channels || s.downsample)
    n += conv_param_count(s.in_channels, s.out_channels, 1);
  return n;
}

int64_t aux_param_count(const AuxiliarySpec& a, int in_channels) {
  int64_t n = 0;
  if (a.filters > 0) n += conv_param_count(in_channels, a.filters, 3);
  n += static_cast<int64_t>(a.classifier_inputs) * a.num_classes + a.num_classes;
  return n;
}

}  // namespace

void validate(const NetworkSpec& net) {
  if (net.layers.empty()) throw input_error("network has no layers");
  if (net.num_classes < 2) throw input_error("network needs at least 2 classes");
  if (net.input.c <= 0 || net.input.h <= 0 || net.input.w <= 0)
    throw input_error("network input shape must be positive");
  int c = net.input.c;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (l.in_channels != c)
      throw input_error("layer " + std::to_string(i) +
                        " in_channels breaks the chain");
    if (l.out_channels <= 0)
      throw input_error("layer " + std::to_string(i) +
                        " out_channels must be positive");
    c = l.out_channels;
  }
  Shape3 out = activation_shape(net, static_cast<int>(net.layers.size()) - 1);
  if (out.h < 1 || out.w < 1)
    throw input_error("network downsampling exhausts the spatial dims");
}

Shape3 layer_output_shape(const LayerSpec& spec, Shape3 in, int index) {
  Shape3 s = in;
  s.c = spec.out_channels;
  if (spec.downsample) {
    if (spec.kind == LayerKind::conv_stage) {
      if (s.h < 2 || s.w < 2)
        throw input_error("layer " + std::to_string(index) +
                          " pools an exhausted spatial extent");
      s.h = (s.h - 2) / 2 + 1;
      s.w = (s.w - 2) / 2 + 1;
    } else {
      s.h = (s.h + 1) / 2;
      s.w = (s.w + 1) / 2;
    }
  }
  return s;
}

Shape3 activation_shape(const NetworkSpec& net, int index) {
  Shape3 s = net.input;
  for (int i = 0; i <= index; ++i) {
    s = layer_output_shape(net.layers[static_cast<size_t>(i)], s, i);
  }
  return s;
}

int adaptive_filter_count(const NetworkSpec& net, int layer_index) {
  const int n = static_cast<int>(net.layers.size());
  if (layer_index < 0 || layer_index >= n - 1)
    throw input_error("no auxiliary at layer " + std::to_string(layer_index));
  int min_w = net.layers[0].out_channels, max_w = min_w;
  for (const LayerSpec& l : net.layers) {
    min_w = std::min(min_w, l.out_channels);
    max_w = std::max(max_w, l.out_channels);
  }
  int first_ds = n;
  for (int i = 0; i < n; ++i)
    if (net.layers[static_cast<size_t>(i)].downsample) {
      first_ds = i;
      break;
    }
  // A downsampling layer sees its own reduced activation, so it already
  // belongs with the later group.
  return layer_index < first_ds ? min_w / 2 : max_w / 2;
}

AuxiliarySpec build_auxiliary(const NetworkSpec& net, int layer_index,
                              AuxMode mode) {
  const int n = static_cast<int>(net.layers.size());
  if (layer_index < 0 || layer_index >= n - 1)
    throw input_error("no auxiliary at layer " + std::to_string(layer_index));
  AuxiliarySpec a;
  a.filters = mode == AuxMode::classic ? classic_aux_filters
                                       : adaptive_filter_count(net, layer_index);
  a.pool_h = 2;
  a.pool_w = 2;
  a.classifier_inputs = a.filters * a.pool_h * a.pool_w;
  a.num_classes = net.num_classes;
  return a;
}

AuxiliarySpec terminal_head_spec(const NetworkSpec& net) {
  AuxiliarySpec a;
  a.filters = 0;
  a.pool_h = 2;
  a.pool_w = 2;
  a.classifier_inputs = net.layers.back().out_channels * a.pool_h * a.pool_w;
  a.num_classes = net.num_classes;
  return a;
}

int64_t parameter_count(const NetworkSpec& net, std::optional<int> up_to,
                        std::optional<int> include_aux_at, AuxMode mode) {
  const int n = static_cast<int>(net.layers.size());
  int last = up_to.value_or(n - 1);
  if (last < 0 || last >= n) throw input_error("parameter_count: bad up_to");
  int64_t total = 0;
  for (int i = 0; i <= last; ++i)
    total += unit_param_count(net.layers[static_cast<size_t>(i)]);
  if (include_aux_at) {
    int at = *include_aux_at;
    if (at < 0 || at > last) throw input_error("parameter_count: bad aux index");
    AuxiliarySpec a = at == n - 1 ? terminal_head_spec(net)
                                  : build_auxiliary(net, at, mode);
    total += aux_param_count(a, net.layers[static_cast<size_t>(at)].out_channels);
  }
  return total;
}

std::vector<Tensor*> UnitParams::tensors() {
  std::vector<Tensor*> t = {&conv1.w, &conv1.b};
  if (has_conv2()) {
    t.push_back(&conv2.w);
    t.push_back(&conv2.b);
  }
  if (has_proj()) {
    t.push_back(&proj.w);
    t.push_back(&proj.b);
  }
  return t;
}

std::vector<const Tensor*> UnitParams::tensors() const {
  auto mut = const_cast<UnitParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<Tensor*> AuxParams::tensors() {
  std::vector<Tensor*> t;
  if (spec.filters > 0) {
    t.push_back(&conv.w);
    t.push_back(&conv.b);
  }
  t.push_back(&fc.w);
  t.push_back(&fc.b);
  return t;
}

std::vector<const Tensor*> AuxParams::tensors() const {
  auto mut = const_cast<AuxParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<Tensor> zeros_matching(const std::vector<Tensor*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Tensor* p : params) out.emplace_back(p->shape());
  return out;
}

std::vector<Tensor> zeros_matching(const std::vector<const Tensor*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Tensor* p : params) out.emplace_back(p->shape());
  return out;
}

namespace {

int64_t layer_scratch_elems(const LayerSpec& spec, Shape3 in) {
  const Shape3 out = layer_output_shape(spec, in);
  if (spec.kind == LayerKind::conv_stage) {
    // 3x3 stride-1 pad-1 keeps the input extent; pooling happens after.
    return conv_scratch_elems(in.c, 3, 3, in.h, in.w);
  }
  int64_t m = conv_scratch_elems(in.c, 3, 3, out.h, out.w);
  m = std::max(m, conv_scratch_elems(spec.out_channels, 3, 3, out.h, out.w));
  const bool proj = spec.in_channels != spec.out_channels || spec.downsample;
  if (proj) m = std::max(m, conv_scratch_elems(in.c, 1, 1, out.h, out.w));
  return m;
}

}  // namespace

int64_t step_scratch_elems(const LayerSpec& spec, const AuxiliarySpec& cls,
                           Shape3 in) {
  int64_t m = layer_scratch_elems(spec, in);
  if (cls.filters > 0) {
    const Shape3 out = layer_output_shape(spec, in);
    m = std::max(m, conv_scratch_elems(out.c, 3, 3, out.h, out.w));
  }
  return m;
}

int64_t bp_scratch_elems(const NetworkSpec& net) {
  int64_t m = 0;
  Shape3 s = net.input;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    m = std::max(m, layer_scratch_elems(net.layers[i], s));
    s = layer_output_shape(net.layers[i], s, static_cast<int>(i));
  }
  return m;
}

AuxParams& ModelParams::classifier_at(int index) {
  const int n = static_cast<int>(net.layers.size());
  if (index < 0 || index >= n) throw input_error("classifier_at: bad index");
  if (index == n - 1) return head;
  if (index >= static_cast<int>(aux.size()))
    throw input_error("classifier_at: model has no auxiliary classifier at layer " +
                      std::to_string(index));
  return aux[static_cast<size_t>(index)];
}

const AuxParams& ModelParams::classifier_at(int index) const {
  return const_cast<ModelParams*>(this)->classifier_at(index);
}

UnitParams init_unit(const LayerSpec& spec, uint64_t seed) {
  rng r(seed);
  UnitParams p;
  p.spec = spec;
  p.conv1.w = Tensor({spec.out_channels, spec.in_channels, 3, 3});
  fill_kaiming(p.conv1.w, spec.in_channels * 9, r);
  p.conv1.b = Tensor({spec.out_channels});
  if (p.has_conv2()) {
    p.conv2.w = Tensor({spec.out_channels, spec.out_channels, 3, 3});
    fill_kaiming(p.conv2.w, spec.out_channels * 9, r);
    p.conv2.b = Tensor({spec.out_channels});
  }
  if (p.has_proj()) {
    p.proj.w = Tensor({spec.out_channels, spec.in_channels, 1, 1});
    fill_kaiming(p.proj.w, spec.in_channels, r);
    p.proj.b = Tensor({spec.out_channels});
  }
  return p;
}

AuxParams init_aux(const AuxiliarySpec& spec, int in_channels, uint64_t seed) {
  rng r(seed);
  AuxParams p;
  p.spec = spec;
  if (spec.filters > 0) {
    p.conv.w = Tensor({spec.filters, in_channels, 3, 3});
    fill_kaiming(p.conv.w, in_channels * 9, r);
    p.conv.b = Tensor({spec.filters});
  }
  p.fc.w = Tensor({spec.num_classes, spec.classifier_inputs});
  fill_kaiming(p.fc.w, spec.classifier_inputs, r);
  p.fc.b = Tensor({spec.num_classes});
  return p;
}

ModelParams init_parameters(const NetworkSpec& net, AuxMode mode,
                            uint64_t seed, bool include_aux) {
  validate(net);
  ModelParams m;
  m.net = net;
  m.mode = mode;
  const int n = static_cast<int>(net.layers.size());
  for (int i = 0; i < n; ++i)
    m.units.push_back(
        init_unit(net.layers[static_cast<size_t>(i)], mix_seed(seed, static_cast<uint64_t>(i))));
  for (int i = 0; include_aux && i < n - 1; ++i)
    m.aux.push_back(init_aux(build_auxiliary(net, i, mode),
                             net.layers[static_cast<size_t>(i)].out_channels,
                             mix_seed(seed, 1000 + static_cast<uint64_t>(i))));
  m.head = init_aux(terminal_head_spec(net), net.layers.back().out_channels,
                    mix_seed(seed, 9999));
  return m;
}

Tensor unit_forward(const UnitParams& p, Tensor x, UnitCtx* ctx,
                    Tensor* scratch) {
  if (p.spec.kind == LayerKind::conv_stage) {
    Tensor y = conv2d_forward(x, p.conv1.w, p.conv1.b, 1, 1, scratch);
    if (p.spec.downsample) {
      PoolResult pr = pool_forward(y, PoolKind::max, 2, 2, 2);
      y = std::move(pr.output);
      if (ctx) ctx->pool = std::move(pr.ctx);
    }
    Tensor out = relu_forward(y);
    if (ctx) {
      ctx->x = std::move(x);
      ctx->pre_relu = std::move(y);
    }
    return out;
  }
  const int s = p.spec.downsample ? 2 : 1;
  Tensor h1_pre = conv2d_forward(x, p.conv1.w, p.conv1.b, s, 1, scratch);
  Tensor h1 = relu_forward(h1_pre);
  Tensor h2 = conv2d_forward(h1, p.conv2.w, p.conv2.b, 1, 1, scratch);
  Tensor sum =
      p.has_proj()
          ? add_forward(h2, conv2d_forward(x, p.proj.w, p.proj.b, s, 0, scratch))
          : add_forward(h2, x);
  Tensor out = relu_forward(sum);
  if (ctx) {
    ctx->x = std::move(x);
    ctx->h1_pre = std::move(h1_pre);
    ctx->h1 = std::move(h1);
    ctx->pre_relu = std::move(sum);
  }
  return out;
}

Tensor unit_backward_acc(const UnitParams& p, const UnitCtx& ctx,
                         const Tensor& grad_output, bool need_grad_input,
                         std::vector<Tensor>& grads, Tensor* scratch) {
  if (p.spec.kind == LayerKind::conv_stage) {
    Tensor g_pre = relu_backward(ctx.pre_relu, grad_output);
    if (p.spec.downsample) g_pre = pool_backward(ctx.pool, g_pre);
    return conv2d_backward_acc(ctx.x, p.conv1.w, g_pre, 1, 1, need_grad_input,
                               grads[0], grads[1], scratch);
  }
  const int s = p.spec.downsample ? 2 : 1;
  Tensor g_sum = relu_backward(ctx.pre_relu, grad_output);
  Tensor g_h1pre;
  {
    Tensor g_h1 = conv2d_backward_acc(ctx.h1, p.conv2.w, g_sum, 1, 1, true,
                                      grads[2], grads[3], scratch);
    g_h1pre = relu_backward(ctx.h1_pre, g_h1);
  }
  Tensor g_x = conv2d_backward_acc(ctx.x, p.conv1.w, g_h1pre, s, 1,
                                   need_grad_input, grads[0], grads[1], scratch);
  if (p.has_proj()) {
    Tensor g_xp = conv2d_backward_acc(ctx.x, p.proj.w, g_sum, s, 0,
                                      need_grad_input, grads[4], grads[5],
                                      scratch);
    if (need_grad_input) g_x = add_forward(g_x, g_xp);
  } else if (need_grad_input) {
    g_x = add_forward(g_x, g_sum);
  }
  return g_x;
}

UnitGrads unit_backward(const UnitParams& p, const UnitCtx& ctx,
                        const Tensor& grad_output, bool need_grad_input) {
  UnitGrads g;
  g.tensors = zeros_matching(p.tensors());
  g.grad_input =
      unit_backward_acc(p, ctx, grad_output, need_grad_input, g.tensors);
  return g;
}

Tensor aux_forward(const AuxParams& p, const Tensor& x, AuxCtx* ctx,
                   Tensor* scratch) {
  const int n = x.dim(0);
  Tensor pooled;
  if (p.spec.filters > 0) {
    Tensor z1 = conv2d_forward(x, p.conv.w, p.conv.b, 1, 1, scratch);
    if (ctx) ctx->conv_out_shape = z1.shape();
    pooled = adaptive_avg_pool_forward(z1, p.spec.pool_h, p.spec.pool_w);
  } else {
    if (ctx) ctx->conv_out_shape.clear();
    pooled = adaptive_avg_pool_forward(x, p.spec.pool_h, p.spec.pool_w);
  }
  Tensor flat = std::move(pooled).reshaped({n, p.spec.classifier_inputs});
  Tensor logits = linear_forward(flat, p.fc.w, p.fc.b);
  if (ctx) ctx->pooled_flat = std::move(flat);
  return logits;
}

Tensor aux_backward_acc(const AuxParams& p, const AuxCtx& ctx, const Tensor& x,
                        const Tensor& grad_logits, std::vector<Tensor>& grads,
                        Tensor* scratch) {
  const int n = x.dim(0);
  if (p.spec.filters > 0) {
    // Slots: [conv.w, conv.b, fc.w, fc.b].
    Tensor g_flat = linear_backward_acc(ctx.pooled_flat, p.fc.w, grad_logits,
                                        true, grads[2], grads[3]);
    Tensor g_pool = std::move(g_flat).reshaped(
        {n, p.spec.filters, p.spec.pool_h, p.spec.pool_w});
    Tensor g_z1 = adaptive_avg_pool_backward(ctx.conv_out_shape, g_pool);
    return conv2d_backward_acc(x, p.conv.w, g_z1, 1, 1, true, grads[0],
                               grads[1], scratch);
  }
  Tensor g_flat = linear_backward_acc(ctx.pooled_flat, p.fc.w, grad_logits,
                                      true, grads[0], grads[1]);
  Tensor g_pool = std::move(g_flat).reshaped(
      {n, x.dim(1), p.spec.pool_h, p.spec.pool_w});
  return adaptive_avg_pool_backward(x.shape(), g_pool);
}

AuxGrads aux_backward(const AuxParams& p, const AuxCtx& ctx, const Tensor& x,
                      const Tensor& grad_logits) {
  AuxGrads g;
  g.tensors = zeros_matching(p.tensors());
  g.grad_input = aux_backward_acc(p, ctx, x, grad_logits, g.tensors);
  return g;
}

NetworkSpec vgg8(int num_classes) {
  NetworkSpec n;
  n.name = "vgg8";
  n.input = {3, 32, 32};
  auto stage = [](int in, int out, bool ds) {
    return LayerSpec{LayerKind::conv_stage, in, out, ds};
  };
  n.layers = {stage(3, 32, false),  stage(32, 32, true),
              stage(32, 64, false), stage(64, 64, true),
              stage(64, 128, false), stage(128, 128, true),
              stage(128, 128, false)};
  n.num_classes = num_classes;
  return n;
}

NetworkSpec resnet_toy(int num_classes) {
  NetworkSpec n;
  n.name = "resnet_toy";
  n.input = {3, 32, 32};
  auto res = [](int in, int out, bool ds) {
    return LayerSpec{LayerKind::residual_block, in, out, ds};
  };
  n.layers = {LayerSpec{LayerKind::conv_stage, 3, 32, false},
              res(32, 32, false), res(32, 64, true), res(64, 64, false),
              res(64, 128, true), res(128, 128, false)};
  n.num_classes = num_classes;
  return n;
}

NetworkSpec vgg_toy6(int num_classes) {
  NetworkSpec n;
  n.name = "vgg_toy6";
  n.input = {3, 16, 16};
  auto stage = [](int in, int out, bool ds) {
    return LayerSpec{LayerKind::conv_stage, in, out, ds};
  };
  n.layers = {stage(3, 8, false), stage(8, 8, true), stage(8, 16, false),
              stage(16, 16, true), stage(16, 32, false)};
  n.num_classes = num_classes;
  return n;
}

NetworkSpec network_by_name(const std::string& name, int num_classes) {
  if (name == "vgg8") return vgg8(num_classes);
  if (name == "resnet_toy") return resnet_toy(num_classes);
  if (name == "vgg_toy6") return vgg_toy6(num_classes);
  throw input_error("unknown network: " + name);
}

}  // namespace neuroflux
