#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavenet/rng.hpp"
#include "wavenet/tensor_ops.hpp"

namespace wavenet {

enum class LocalUpsampleMode { transposed, repeat };

/// Auxiliary stack that watches a long stretch of signal at low cost and
/// feeds a pooled summary into the main stack as local conditioning.
struct ContextStackConfig {
    std::vector<int> dilation_schedule;
    int channels = 0;
    int pool_factor = 1;
};

/// Optional frame-classification head over pooled skip features.
struct ClassifierConfig {
    int num_labels = 0;
    int pool_factor = 160;
};

struct ModelConfig {
    int num_classes = 256;
    int residual_channels = 32;
    int skip_channels = 32;
    int filter_width = 2;
    std::vector<int> dilation_schedule;

    /// 0 disables the mode. Both global and local conditioning may be active
    /// at once; each adds its own per-layer projections.
    int global_dim = 0;
    int local_dim = 0;
    int local_upsample_factor = 1;
    LocalUpsampleMode local_upsample_mode = LocalUpsampleMode::transposed;

    std::vector<ContextStackConfig> context_stacks;
    std::optional<ClassifierConfig> classifier;

    /// Throws ConfigError on any violated invariant.
    void validate() const;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// 1 + sum over layers of (filter_width - 1) * dilation. For undilated stacks
/// this reduces to #layers + filter_width - 1.
int receptive_field(const ModelConfig& config);

/// Same formula applied to one context stack's schedule (at audio rate).
int context_stack_receptive_field(const ContextStackConfig& stack, int filter_width);

/// Leading samples reserved for context-stack warm-up: the largest context
/// receptive field rounded up to that stack's pool grid. The main stack only
/// scores positions at or after this offset. Zero without context stacks.
int context_crop(const ModelConfig& config);

/// Parameter count implied by a config, without building the model.
std::size_t parameter_count(const ModelConfig& config);

/// Conditioning data accompanying one clip. Exactly the modes the config
/// declares must be present.
template <typename S>
struct ConditioningInputT {
    std::optional<std::vector<S>> global_vec;
    std::optional<Tensor2DT<S>> local_series; // control rate, upsampled inside forward

    template <typename U>
    ConditioningInputT<U> cast() const {
        ConditioningInputT<U> out;
        if (global_vec) {
            out.global_vec.emplace(global_vec->begin(), global_vec->end());
        }
        if (local_series) out.local_series = local_series->template cast<U>();
        return out;
    }
};

using ConditioningInput = ConditioningInputT<float>;

template <typename S>
struct LayerParamsT {
    ConvKernelT<S> filter;        // dilated, residual -> residual
    ConvKernelT<S> gate;
    ConvKernelT<S> global_filter; // 1x1, global_dim -> residual
    ConvKernelT<S> global_gate;
    ConvKernelT<S> local_filter;  // 1x1, local_dim -> residual
    ConvKernelT<S> local_gate;
    std::vector<ConvKernelT<S>> ctx_filter; // 1x1 per context stack
    std::vector<ConvKernelT<S>> ctx_gate;
    ConvKernelT<S> residual;      // 1x1, residual -> residual
    ConvKernelT<S> skip;          // 1x1, residual -> skip
};

template <typename S>
struct ContextStackParamsT {
    ConvKernelT<S> embed;                 // 1x1, num_classes -> channels
    std::vector<ConvKernelT<S>> filter;   // dilated, channels -> channels
    std::vector<ConvKernelT<S>> gate;
    std::vector<ConvKernelT<S>> residual; // 1x1, channels -> channels
};

template <typename S>
struct LayerTraceT {
    Tensor2DT<S> input;      // block input x_l over the scored window
    Tensor2DT<S> filter_pre; // conv + conditioning, before tanh
    Tensor2DT<S> gate_pre;   // before sigmoid
    Tensor2DT<S> gated;      // tanh * sigmoid
};

template <typename S>
struct ContextStackTraceT {
    std::vector<LayerTraceT<S>> layers;
    Tensor2DT<S> cond_window; // delayed pooled series over the scored window
};

/// Saved activations from one forward pass; consumed by backward. Owned by
/// the caller so concurrent forward passes over a shared model stay possible.
template <typename S>
struct ForwardTraceT {
    bool valid = false;
    std::vector<int> classes; // full input
    int crop = 0;
    ConditioningInputT<S> cond;
    Tensor2DT<S> local_upsampled; // audio-rate conditioning over the window
    std::vector<ContextStackTraceT<S>> context;
    std::vector<LayerTraceT<S>> layers;
    Tensor2DT<S> skip_sum;
    Tensor2DT<S> head_mid;   // after first 1x1, before second ReLU
    Tensor2DT<S> cls_pooled; // classifier inputs
    Tensor2DT<S> cls_mid;    // after first width-3 conv, before ReLU
};

template <typename S>
struct ForwardResultT {
    Tensor2DT<S> logits;       // (T - crop) x num_classes; row i scores position crop+i
    Tensor2DT<S> frame_logits; // frames x num_labels; empty without a classifier
    int crop = 0;
};

template <typename S>
struct LayerGradsT {
    KernelGradT<S> filter;
    KernelGradT<S> gate;
    KernelGradT<S> global_filter;
    KernelGradT<S> global_gate;
    KernelGradT<S> local_filter;
    KernelGradT<S> local_gate;
    std::vector<KernelGradT<S>> ctx_filter;
    std::vector<KernelGradT<S>> ctx_gate;
    KernelGradT<S> residual;
    KernelGradT<S> skip;
};

template <typename S>
struct ContextStackGradsT {
    KernelGradT<S> embed;
    std::vector<KernelGradT<S>> filter;
    std::vector<KernelGradT<S>> gate;
    std::vector<KernelGradT<S>> residual;
};

template <typename S>
class WaveNetModelT;

/// Gradient accumulator mirroring every kernel of a model, field for field.
template <typename S>
struct GradientTapeT {
    KernelGradT<S> input_embed;
    std::vector<LayerGradsT<S>> layers;
    KernelGradT<S> upsample;
    KernelGradT<S> head1;
    KernelGradT<S> head2;
    std::vector<ContextStackGradsT<S>> context_stacks;
    KernelGradT<S> cls1;
    KernelGradT<S> cls2;

    GradientTapeT() = default;
    explicit GradientTapeT(const WaveNetModelT<S>& model);
    void zero();
};

using GradientTape = GradientTapeT<float>;

template <typename S>
class WaveNetModelT {
public:
    ModelConfig config;

    ConvKernelT<S> input_embed; // 1x1, num_classes -> residual (one-hot gather)
    std::vector<LayerParamsT<S>> layers;
    ConvKernelT<S> upsample;    // width = upsample_factor, local transposed mode only
    ConvKernelT<S> head1;       // 1x1, skip -> skip
    ConvKernelT<S> head2;       // 1x1, skip -> num_classes
    std::vector<ContextStackParamsT<S>> context_stacks;
    ConvKernelT<S> cls1;        // width 3 same-padded, skip -> skip
    ConvKernelT<S> cls2;        // width 3 same-padded, skip -> num_labels

    WaveNetModelT() = default;

    /// Builds and initializes parameters. Dilated kernels, the input
    /// embedding, head and classifier draw uniform +-sqrt(1/(fw*cin)) from
    /// the seed; residual 1x1 and every conditioning projection start at
    /// zero (and consume no randomness), so conditioning and residual paths
    /// are neutral at init. The upsample kernel starts as replication.
    WaveNetModelT(const ModelConfig& cfg, std::uint64_t seed);

    /// Re-draws every kernel, including the normally zero-initialized ones.
    /// For receptive-field probing and gradient checks, which need generic
    /// weights on all paths.
    void randomize_parameters(std::uint64_t seed);

    ForwardResultT<S> forward(std::span<const int> classes, const ConditioningInputT<S>& cond) const;
    ForwardResultT<S> forward(std::span<const int> classes, const ConditioningInputT<S>& cond,
                              ForwardTraceT<S>* trace) const;

    /// Exact adjoint of forward. Accumulates into `tape` (caller zeroes).
    /// grad_frame_logits may be null when the classifier loss is unused.
    void backward(const ForwardTraceT<S>& trace, const Tensor2DT<S>& grad_logits,
                  const Tensor2DT<S>* grad_frame_logits, GradientTapeT<S>& tape) const;

    std::size_t count_parameters() const;
    bool parameters_finite() const;

    template <typename U>
    WaveNetModelT<U> cast() const;
};

using WaveNetModel = WaveNetModelT<float>;

/// Walks every kernel-like field in canonical declaration order. Works on
/// WaveNetModelT and GradientTapeT alike (their fields mirror each other),
/// which pins checkpoint layout, optimizer state and gradient pairing to one
/// traversal. f(name, field).
template <typename Net, typename F>
void visit_kernel_fields(Net& net, const ModelConfig& cfg, F&& f) {
    f("input_embed", net.input_embed);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto& layer = net.layers[i];
        const std::string base = "layer" + std::to_string(i) + ".";
        f(base + "filter", layer.filter);
        f(base + "gate", layer.gate);
        if (cfg.global_dim > 0) {
            f(base + "global_filter", layer.global_filter);
            f(base + "global_gate", layer.global_gate);
        }
        if (cfg.local_dim > 0) {
            f(base + "local_filter", layer.local_filter);
            f(base + "local_gate", layer.local_gate);
        }
        for (std::size_t s = 0; s < cfg.context_stacks.size(); ++s) {
            f(base + "ctx" + std::to_string(s) + "_filter", layer.ctx_filter[s]);
            f(base + "ctx" + std::to_string(s) + "_gate", layer.ctx_gate[s]);
        }
        f(base + "residual", layer.residual);
        f(base + "skip", layer.skip);
    }
    if (cfg.local_dim > 0 && cfg.local_upsample_mode == LocalUpsampleMode::transposed) {
        f("upsample", net.upsample);
    }
    f("head1", net.head1);
    f("head2", net.head2);
    for (std::size_t s = 0; s < net.context_stacks.size(); ++s) {
        auto& stack = net.context_stacks[s];
        const std::string base = "context" + std::to_string(s) + ".";
        f(base + "embed", stack.embed);
        for (std::size_t l = 0; l < stack.filter.size(); ++l) {
            const std::string lb = base + "layer" + std::to_string(l) + ".";
            f(lb + "filter", stack.filter[l]);
            f(lb + "gate", stack.gate[l]);
            f(lb + "residual", stack.residual[l]);
        }
    }
    if (cfg.classifier) {
        f("cls1", net.cls1);
        f("cls2", net.cls2);
    }
}

template <typename S>
GradientTapeT<S>::GradientTapeT(const WaveNetModelT<S>& model) {
    layers.resize(model.layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].ctx_filter.resize(model.layers[i].ctx_filter.size());
        layers[i].ctx_gate.resize(model.layers[i].ctx_gate.size());
    }
    context_stacks.resize(model.context_stacks.size());
    for (std::size_t s = 0; s < context_stacks.size(); ++s) {
        context_stacks[s].filter.resize(model.context_stacks[s].filter.size());
        context_stacks[s].gate.resize(model.context_stacks[s].gate.size());
        context_stacks[s].residual.resize(model.context_stacks[s].residual.size());
    }
    // Size every grad slot against its kernel through the shared traversal.
    std::vector<const ConvKernelT<S>*> kernels;
    visit_kernel_fields(model, model.config,
                        [&](const std::string&, const ConvKernelT<S>& k) { kernels.push_back(&k); });
    std::size_t idx = 0;
    visit_kernel_fields(*this, model.config, [&](const std::string&, KernelGradT<S>& g) {
        g = KernelGradT<S>(*kernels.at(idx++));
    });
}

template <typename S>
void GradientTapeT<S>::zero() {
    // Config-independent walk: zero everything that exists.
    input_embed.zero();
    for (auto& l : layers) {
        l.filter.zero();
        l.gate.zero();
        l.global_filter.zero();
        l.global_gate.zero();
        l.local_filter.zero();
        l.local_gate.zero();
        for (auto& g : l.ctx_filter) g.zero();
        for (auto& g : l.ctx_gate) g.zero();
        l.residual.zero();
        l.skip.zero();
    }
    upsample.zero();
    head1.zero();
    head2.zero();
    for (auto& s : context_stacks) {
        s.embed.zero();
        for (auto& g : s.filter) g.zero();
        for (auto& g : s.gate) g.zero();
        for (auto& g : s.residual) g.zero();
    }
    cls1.zero();
    cls2.zero();
}

template <typename S>
template <typename U>
WaveNetModelT<U> WaveNetModelT<S>::cast() const {
    WaveNetModelT<U> out;
    out.config = config;
    out.input_embed = input_embed.template cast<U>();
    out.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& a = layers[i];
        auto& b = out.layers[i];
        b.filter = a.filter.template cast<U>();
        b.gate = a.gate.template cast<U>();
        b.global_filter = a.global_filter.template cast<U>();
        b.global_gate = a.global_gate.template cast<U>();
        b.local_filter = a.local_filter.template cast<U>();
        b.local_gate = a.local_gate.template cast<U>();
        for (const auto& k : a.ctx_filter) b.ctx_filter.push_back(k.template cast<U>());
        for (const auto& k : a.ctx_gate) b.ctx_gate.push_back(k.template cast<U>());
        b.residual = a.residual.template cast<U>();
        b.skip = a.skip.template cast<U>();
    }
    out.upsample = upsample.template cast<U>();
    out.head1 = head1.template cast<U>();
    out.head2 = head2.template cast<U>();
    out.context_stacks.resize(context_stacks.size());
    for (std::size_t s = 0; s < context_stacks.size(); ++s) {
        const auto& a = context_stacks[s];
        auto& b = out.context_stacks[s];
        b.embed = a.embed.template cast<U>();
        for (const auto& k : a.filter) b.filter.push_back(k.template cast<U>());
        for (const auto& k : a.gate) b.gate.push_back(k.template cast<U>());
        for (const auto& k : a.residual) b.residual.push_back(k.template cast<U>());
    }
    out.cls1 = cls1.template cast<U>();
    out.cls2 = cls2.template cast<U>();
    return out;
}

} // namespace wavenet
