#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace neuroflux {

enum class LayerKind { conv_stage, residual_block };

// One trainable unit of the backbone. conv_stage is conv3x3/s1/p1, then a
// 2x2/s2 max pool when downsample is set, then ReLU. residual_block is the
// usual two-conv basic block; downsample variants stride the first conv and
// the projection.
struct LayerSpec {
  LayerKind kind = LayerKind::conv_stage;
  int in_channels = 0;
  int out_channels = 0;
  bool downsample = false;
};

struct Shape3 {
  int c = 0, h = 0, w = 0;
};

struct NetworkSpec {
  std::string name;
  Shape3 input;
  std::vector<LayerSpec> layers;
  int num_classes = 0;
};

// Throws input_error when channel chaining, dims, or class count are broken.
void validate(const NetworkSpec& net);

// Spatial shape of the activation produced by layer `index` (input shape for
// index == -1).
Shape3 activation_shape(const NetworkSpec& net, int index);

/**
 * Local classifier attached to a layer output: conv3x3/s1/p1 to `filters`
 * channels, adaptive average pooling to pool_h x pool_w, one linear layer.
 * filters == 0 drops the conv and pools the layer output directly, which is
 * also the shape of the network's terminal head.
 */
struct AuxiliarySpec {
  int filters = 0;
  int pool_h = 2, pool_w = 2;
  int classifier_inputs = 0;
  int num_classes = 0;
};

enum class AuxMode { adaptive, classic };

// Width-adaptive filter rule: layers strictly before the first downsampling
// unit get floor(min_width / 2) filters, every other layer floor(max_width/2),
// widths read from out_channels across the whole backbone. The final layer
// has no auxiliary; asking for one is an error.
int adaptive_filter_count(const NetworkSpec& net, int layer_index);

inline constexpr int classic_aux_filters = 256;

AuxiliarySpec build_auxiliary(const NetworkSpec& net, int layer_index,
                              AuxMode mode);

// Pool-and-classify head that terminates the backbone after the last layer.
AuxiliarySpec terminal_head_spec(const NetworkSpec& net);

/**
 * Exact scalar parameter count (weights + biases) of layers [0, up_to],
 * optionally adding the auxiliary attached at include_aux_at (the terminal
 * head when include_aux_at is the last layer). Defaults cover the whole
 * backbone with no classifier.
 */
int64_t parameter_count(const NetworkSpec& net,
                        std::optional<int> up_to = std::nullopt,
                        std::optional<int> include_aux_at = std::nullopt,
                        AuxMode mode = AuxMode::adaptive);

struct ConvParams {
  Tensor w;
  Tensor b;
};

struct UnitParams {
  LayerSpec spec;
  ConvParams conv1;
  ConvParams conv2;  // residual only
  ConvParams proj;   // residual with projection only
  bool has_conv2() const { return spec.kind == LayerKind::residual_block; }
  bool has_proj() const {
    return spec.kind == LayerKind::residual_block &&
           (spec.in_channels != spec.out_channels || spec.downsample);
  }
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

struct AuxParams {
  AuxiliarySpec spec;
  ConvParams conv;  // present when spec.filters > 0
  ConvParams fc;    // weight [num_classes, classifier_inputs]
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

// Full trainable state for one run: backbone units, one auxiliary per
// non-final layer, terminal head.
struct ModelParams {
  NetworkSpec net;
  AuxMode mode = AuxMode::adaptive;
  std::vector<UnitParams> units;
  std::vector<AuxParams> aux;  // size layers-1
  AuxParams head;

  // The classifier trained together with layer `index`: its auxiliary, or
  // the terminal head for the last layer.
  AuxParams& classifier_at(int index);
  const AuxParams& classifier_at(int index) const;
};

// Kaiming-uniform fan-in weights, zero biases, reproducible from the seed.
ModelParams init_parameters(const NetworkSpec& net, AuxMode mode,
                            uint64_t seed, bool include_aux = true);
UnitParams init_unit(const LayerSpec& spec, uint64_t seed);
AuxParams init_aux(const AuxiliarySpec& spec, int in_channels, uint64_t seed);

// Forward context: exactly the tensors the matching backward needs, nothing
// else stays alive.
struct UnitCtx {
  Tensor x;         // unit input
  PoolCtx pool;     // conv_stage with downsample
  Tensor pre_relu;  // input of the final relu
  Tensor h1_pre;    // residual: conv1 output
  Tensor h1;        // residual: relu(conv1 output)
};

Tensor unit_forward(const UnitParams& p, Tensor x, UnitCtx* ctx,
                    Tensor* scratch = nullptr);

struct UnitGrads {
  std::vector<Tensor> tensors;  // aligned with UnitParams::tensors()
  Tensor grad_input;            // empty unless requested
};

UnitGrads unit_backward(const UnitParams& p, const UnitCtx& ctx,
                        const Tensor& grad_output, bool need_grad_input);

// Accumulating variant: grads is pre-zeroed and aligned with
// UnitParams::tensors(); returns the input gradient (empty when not needed).
// Training steps use this so parameter-gradient storage exists for the whole
// step rather than appearing mid-backward.
Tensor unit_backward_acc(const UnitParams& p, const UnitCtx& ctx,
                         const Tensor& grad_output, bool need_grad_input,
                         std::vector<Tensor>& grads, Tensor* scratch = nullptr);

struct AuxCtx {
  std::vector<int> conv_out_shape;
  Tensor pooled_flat;  // classifier input
};

// x is the attached layer's output activation [N,C,H,W].
Tensor aux_forward(const AuxParams& p, const Tensor& x, AuxCtx* ctx,
                   Tensor* scratch = nullptr);

struct AuxGrads {
  std::vector<Tensor> tensors;  // aligned with AuxParams::tensors()
  Tensor grad_input;            // gradient w.r.t. the layer activation
};

AuxGrads aux_backward(const AuxParams& p, const AuxCtx& ctx, const Tensor& x,
                      const Tensor& grad_logits);

// Accumulating variant; grads is pre-zeroed and aligned with
// AuxParams::tensors(). Always returns the gradient w.r.t. x.
Tensor aux_backward_acc(const AuxParams& p, const AuxCtx& ctx, const Tensor& x,
                        const Tensor& grad_logits, std::vector<Tensor>& grads,
                        Tensor* scratch = nullptr);

// Zero tensors shaped like the given parameters: gradient buffers, momentum.
std::vector<Tensor> zeros_matching(const std::vector<Tensor*>& params);
std::vector<Tensor> zeros_matching(const std::vector<const Tensor*>& params);

// Output activation shape of one layer applied to `in`.
Shape3 layer_output_shape(const LayerSpec& spec, Shape3 in, int index = -1);

// Scratch sizing for the workspace a training step keeps alive throughout:
// the largest conv workspace among the unit's convolutions and the attached
// classifier's, at the given input shape.
int64_t step_scratch_elems(const LayerSpec& spec, const AuxiliarySpec& cls,
                           Shape3 in);
// Largest conv workspace across the whole backbone (backprop steps).
int64_t bp_scratch_elems(const NetworkSpec& net);

// Built-in desk-scale networks.
NetworkSpec vgg8(int num_classes);
NetworkSpec resnet_toy(int num_classes);
NetworkSpec vgg_toy6(int num_classes);
NetworkSpec network_by_name(const std::string& name, int num_classes);

}  // namespace neuroflux
