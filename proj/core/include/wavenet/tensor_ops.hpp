#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "wavenet/tensor.hpp"

namespace wavenet {

/// Convolution parameters: weights laid out [filter_width][in][out], plus a
/// per-output-channel bias. Tap k = filter_width-1 is the current timestep;
/// tap k reads the input at t - (filter_width-1-k) * dilation.
template <typename S>
struct ConvKernelT {
    int filter_width = 1;
    int dilation = 1;
    int in_channels = 0;
    int out_channels = 0;
    std::vector<S> weights;
    std::vector<S> bias;

    ConvKernelT() = default;
    ConvKernelT(int fw, int cin, int cout, int dil = 1)
        : filter_width(fw), dilation(dil), in_channels(cin), out_channels(cout),
          weights(static_cast<std::size_t>(fw) * cin * cout, S(0)),
          bias(static_cast<std::size_t>(cout), S(0)) {
        if (fw < 1 || dil < 1 || cin < 1 || cout < 1)
            throw ConfigError("conv kernel needs filter_width/dilation/channels >= 1");
    }

    S& w(int k, int ci, int co) {
        return weights[(static_cast<std::size_t>(k) * in_channels + ci) * out_channels + co];
    }
    S w(int k, int ci, int co) const {
        return weights[(static_cast<std::size_t>(k) * in_channels + ci) * out_channels + co];
    }

    std::size_t param_count() const { return weights.size() + bias.size(); }

    template <typename U>
    ConvKernelT<U> cast() const {
        // Field-wise copy so default-constructed placeholders survive the cast.
        ConvKernelT<U> out;
        out.filter_width = filter_width;
        out.dilation = dilation;
        out.in_channels = in_channels;
        out.out_channels = out_channels;
        out.weights.reserve(weights.size());
        for (S v : weights) out.weights.push_back(static_cast<U>(v));
        out.bias.reserve(bias.size());
        for (S v : bias) out.bias.push_back(static_cast<U>(v));
        return out;
    }
};

using ConvKernel = ConvKernelT<float>;

/// Gradient accumulator mirroring one ConvKernel.
template <typename S>
struct KernelGradT {
    std::vector<S> weights;
    std::vector<S> bias;

    KernelGradT() = default;
    explicit KernelGradT(const ConvKernelT<S>& k)
        : weights(k.weights.size(), S(0)), bias(k.bias.size(), S(0)) {}

    void zero() {
        std::fill(weights.begin(), weights.end(), S(0));
        std::fill(bias.begin(), bias.end(), S(0));
    }
};

using KernelGrad = KernelGradT<float>;

// --- dilated causal convolution ---------------------------------------------

/// out[t] = bias + sum_k W[k] * in[t - (fw-1-k)*dilation], reads before the
/// signal start are zero. Output has the same number of timesteps.
template <typename S>
Tensor2DT<S> causal_conv(const Tensor2DT<S>& input, const ConvKernelT<S>& kernel);

/// Adjoint of causal_conv. Accumulates kernel gradients into `acc` and
/// returns the gradient with respect to the input.
template <typename S>
Tensor2DT<S> causal_conv_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_input,
                                  const ConvKernelT<S>& kernel, KernelGradT<S>& acc);

/// Per-timestep linear map. Rejects kernels with filter_width != 1.
template <typename S>
Tensor2DT<S> conv1x1(const Tensor2DT<S>& input, const ConvKernelT<S>& kernel);

template <typename S>
Tensor2DT<S> conv1x1_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_input,
                              const ConvKernelT<S>& kernel, KernelGradT<S>& acc);

/// Centered same-padded convolution (non-causal); filter_width must be odd.
template <typename S>
Tensor2DT<S> conv_same(const Tensor2DT<S>& input, const ConvKernelT<S>& kernel);

template <typename S>
Tensor2DT<S> conv_same_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_input,
                                const ConvKernelT<S>& kernel, KernelGradT<S>& acc);

// --- gated activation --------------------------------------------------------

/// tanh(filter_pre) * sigmoid(gate_pre), elementwise.
template <typename S>
Tensor2DT<S> gated_activation(const Tensor2DT<S>& filter_pre, const Tensor2DT<S>& gate_pre);

/// Gradients w.r.t. both pre-activations given the saved pre-activations.
template <typename S>
std::pair<Tensor2DT<S>, Tensor2DT<S>> gated_activation_backward(const Tensor2DT<S>& grad_out,
                                                                const Tensor2DT<S>& filter_pre,
                                                                const Tensor2DT<S>& gate_pre);

// --- rectifier ----------------------------------------------------------------

template <typename S>
Tensor2DT<S> relu(const Tensor2DT<S>& input);

template <typename S>
Tensor2DT<S> relu_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_input);

// --- upsampling ---------------------------------------------------------------

/// Insert factor-1 zeros after each timestep: out[t*factor] = in[t], else 0.
template <typename S>
Tensor2DT<S> zero_stuff(const Tensor2DT<S>& input, int factor);

/// Adjoint of zero_stuff: keep every factor-th gradient row.
template <typename S>
Tensor2DT<S> zero_stuff_backward(const Tensor2DT<S>& grad_out, int factor);

/// Learned upsampling: causal convolution over the zero-stuffed series.
/// With a replication-initialized kernel this equals repeat_upsample.
template <typename S>
Tensor2DT<S> upsample_transposed(const Tensor2DT<S>& cond, const ConvKernelT<S>& kernel, int factor);

template <typename S>
Tensor2DT<S> upsample_transposed_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_cond,
                                          const ConvKernelT<S>& kernel, int factor, KernelGradT<S>& acc);

/// Duplicate each timestep `factor` times.
template <typename S>
Tensor2DT<S> repeat_upsample(const Tensor2DT<S>& cond, int factor);

template <typename S>
Tensor2DT<S> repeat_upsample_backward(const Tensor2DT<S>& grad_out, int factor);

/// Square kernel of width `factor` whose taps are identity maps, so that the
/// transposed upsampling starts out exactly equal to repeat upsampling.
template <typename S>
ConvKernelT<S> replication_upsample_kernel(int channels, int factor);

// --- pooling ------------------------------------------------------------------

/// Mean over non-overlapping windows of `pool`; a trailing partial window is
/// dropped.
template <typename S>
Tensor2DT<S> mean_pool(const Tensor2DT<S>& input, int pool);

/// Distributes grad/pool to each window member; rows beyond the last full
/// window receive zero.
template <typename S>
Tensor2DT<S> mean_pool_backward(const Tensor2DT<S>& grad_out, int pool, int input_timesteps);

// --- softmax cross-entropy ------------------------------------------------------

template <typename S>
struct XentResult {
    S loss = S(0);
    Tensor2DT<S> grad_logits;
    int counted = 0;
};

/// Mean negative log-likelihood over unmasked timesteps, with the matching
/// logit gradient (softmax - onehot) / count. Max-subtraction stabilized;
/// normalization accumulates in double.
template <typename S>
XentResult<S> softmax_xent(const Tensor2DT<S>& logits, std::span<const int> targets,
                           std::span<const std::uint8_t> mask = {});

/// Stabilized softmax of one logit row.
template <typename S>
std::vector<S> softmax_row(std::span<const S> logits);

} // namespace wavenet
