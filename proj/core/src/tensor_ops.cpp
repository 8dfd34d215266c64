#include "wavenet/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace wavenet {

namespace {

template <typename S>
void check_channels(const Tensor2DT<S>& input, const ConvKernelT<S>& kernel, const char* what) {
    if (input.channels != kernel.in_channels) {
        throw ShapeError(std::string(what) + ": input has " + std::to_string(input.channels) +
                         " channels but kernel expects " + std::to_string(kernel.in_channels) +
                         " (kernel " + std::to_string(kernel.filter_width) + "x" +
                         std::to_string(kernel.in_channels) + "x" + std::to_string(kernel.out_channels) + ")");
    }
}

template <typename S>
S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

} // namespace

template <typename S>
Tensor2DT<S> causal_conv(const Tensor2DT<S>& input, const ConvKernelT<S>& kernel) {
    check_channels(input, kernel, "causal_conv");
    const int T = input.timesteps;
    const int cin = kernel.in_channels;
    const int cout = kernel.out_channels;
    Tensor2DT<S> out(T, cout);
    for (int t = 0; t < T; ++t) {
        S* orow = out.data.data() + static_cast<std::size_t>(t) * cout;
        for (int co = 0; co < cout; ++co) orow[co] = kernel.bias[co];
        for (int k = 0; k < kernel.filter_width; ++k) {
            const int src = t - (kernel.filter_width - 1 - k) * kernel.dilation;
            if (src < 0) continue;
            const S* irow = input.data.data() + static_cast<std::size_t>(src) * cin;
            const S* wk = kernel.weights.data() + static_cast<std::size_t>(k) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const S xv = irow[ci];
                if (xv == S(0)) continue;
                const S* wrow = wk + static_cast<std::size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) orow[co] += wrow[co] * xv;
            }
        }
    }
    return out;
}

template <typename S>
Tensor2DT<S> causal_conv_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_input,
                                  const ConvKernelT<S>& kernel, KernelGradT<S>& acc) {
    check_channels(saved_input, kernel, "causal_conv_backward");
    if (grad_out.channels != kernel.out_channels || grad_out.timesteps != saved_input.timesteps) {
        throw ShapeError("causal_conv_backward: grad shape " + grad_out.shape_str() +
                         " does not match forward output " + std::to_string(saved_input.timesteps) +
                         "x" + std::to_string(kernel.out_channels));
    }
    if (acc.weights.size() != kernel.weights.size() || acc.bias.size() != kernel.bias.size()) {
        throw StateError("causal_conv_backward: gradient accumulator shape does not mirror the kernel");
    }
    const int T = saved_input.timesteps;
    const int cin = kernel.in_channels;
    const int cout = kernel.out_channels;
    Tensor2DT<S> grad_in(T, cin);
    for (int t = 0; t < T; ++t) {
        const S* grow = grad_out.data.data() + static_cast<std::size_t>(t) * cout;
        for (int co = 0; co < cout; ++co) acc.bias[co] += grow[co];
        for (int k = 0; k < kernel.filter_width; ++k) {
            const int src = t - (kernel.filter_width - 1 - k) * kernel.dilation;
            if (src < 0) continue;
            const S* irow = saved_input.data.data() + static_cast<std::size_t>(src) * cin;
            S* girow = grad_in.data.data() + static_cast<std::size_t>(src) * cin;
            const S* wk = kernel.weights.data() + static_cast<std::size_t>(k) * cin * cout;
            S* gwk = acc.weights.data() + static_cast<std::size_t>(k) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const S* wrow = wk + static_cast<std::size_t>(ci) * cout;
                S* gwrow = gwk + static_cast<std::size_t>(ci) * cout;
                const S xv = irow[ci];
                S gsum = S(0);
                for (int co = 0; co < cout; ++co) {
                    const S g = grow[co];
                    gsum += wrow[co] * g;
                    gwrow[co] += xv * g;
                }
                girow[ci] += gsum;
            }
        }
    }
    return grad_in;
}

template <typename S>
Tensor2DT<S> conv1x1(const Tensor2DT<S>& input, const ConvKernelT<S>& kernel) {
    if (kernel.filter_width != 1) {
        throw ConfigError("conv1x1 requires filter_width 1, got " + std::to_string(kernel.filter_width));
    }
    check_channels(input, kernel, "conv1x1");
    const int T = input.timesteps;
    const int cin = kernel.in_channels;
    const int cout = kernel.out_channels;
    Tensor2DT<S> out(T, cout);
    for (int t = 0; t < T; ++t) {
        const S* irow = input.data.data() + static_cast<std::size_t>(t) * cin;
        S* orow = out.data.data() + static_cast<std::size_t>(t) * cout;
        for (int co = 0; co < cout; ++co) orow[co] = kernel.bias[co];
        for (int ci = 0; ci < cin; ++ci) {
            const S xv = irow[ci];
            if (xv == S(0)) continue;
            const S* wrow = kernel.weights.data() + static_cast<std::size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) orow[co] += wrow[co] * xv;
        }
    }
    return out;
}

template <typename S>
Tensor2DT<S> conv1x1_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_input,
                              const ConvKernelT<S>& kernel, KernelGradT<S>& acc) {
    if (kernel.filter_width != 1) {
        throw ConfigError("conv1x1_backward requires filter_width 1, got " + std::to_string(kernel.filter_width));
    }
    return causal_conv_backward(grad_out, saved_input, kernel, acc);
}

template <typename S>
Tensor2DT<S> conv_same(const Tensor2DT<S>& input, const ConvKernelT<S>& kernel) {
    if (kernel.filter_width % 2 == 0) {
        throw ConfigError("conv_same requires an odd filter_width, got " + std::to_string(kernel.filter_width));
    }
    check_channels(input, kernel, "conv_same");
    const int T = input.timesteps;
    const int cin = kernel.in_channels;
    const int cout = kernel.out_channels;
    const int half = kernel.filter_width / 2;
    Tensor2DT<S> out(T, cout);
    for (int t = 0; t < T; ++t) {
        S* orow = out.data.data() + static_cast<std::size_t>(t) * cout;
        for (int co = 0; co < cout; ++co) orow[co] = kernel.bias[co];
        for (int k = 0; k < kernel.filter_width; ++k) {
            const int src = t + (k - half) * kernel.dilation;
            if (src < 0 || src >= T) continue;
            const S* irow = input.data.data() + static_cast<std::size_t>(src) * cin;
            const S* wk = kernel.weights.data() + static_cast<std::size_t>(k) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const S xv = irow[ci];
                if (xv == S(0)) continue;
                const S* wrow = wk + static_cast<std::size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) orow[co] += wrow[co] * xv;
            }
        }
    }
    return out;
}

template <typename S>
Tensor2DT<S> conv_same_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_input,
                                const ConvKernelT<S>& kernel, KernelGradT<S>& acc) {
    if (kernel.filter_width % 2 == 0) {
        throw ConfigError("conv_same_backward requires an odd filter_width");
    }
    check_channels(saved_input, kernel, "conv_same_backward");
    const int T = saved_input.timesteps;
    const int cin = kernel.in_channels;
    const int cout = kernel.out_channels;
    const int half = kernel.filter_width / 2;
    Tensor2DT<S> grad_in(T, cin);
    for (int t = 0; t < T; ++t) {
        const S* grow = grad_out.data.data() + static_cast<std::size_t>(t) * cout;
        for (int co = 0; co < cout; ++co) acc.bias[co] += grow[co];
        for (int k = 0; k < kernel.filter_width; ++k) {
            const int src = t + (k - half) * kernel.dilation;
            if (src < 0 || src >= T) continue;
            const S* irow = saved_input.data.data() + static_cast<std::size_t>(src) * cin;
            S* girow = grad_in.data.data() + static_cast<std::size_t>(src) * cin;
            const S* wk = kernel.weights.data() + static_cast<std::size_t>(k) * cin * cout;
            S* gwk = acc.weights.data() + static_cast<std::size_t>(k) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const S* wrow = wk + static_cast<std::size_t>(ci) * cout;
                S* gwrow = gwk + static_cast<std::size_t>(ci) * cout;
                const S xv = irow[ci];
                S gsum = S(0);
                for (int co = 0; co < cout; ++co) {
                    const S g = grow[co];
                    gsum += wrow[co] * g;
                    gwrow[co] += xv * g;
                }
                girow[ci] += gsum;
            }
        }
    }
    return grad_in;
}

template <typename S>
Tensor2DT<S> gated_activation(const Tensor2DT<S>& filter_pre, const Tensor2DT<S>& gate_pre) {
    require_same_shape(filter_pre, gate_pre, "gated_activation");
    Tensor2DT<S> out(filter_pre.timesteps, filter_pre.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = std::tanh(filter_pre.data[i]) * sigmoid(gate_pre.data[i]);
    }
    return out;
}

template <typename S>
std::pair<Tensor2DT<S>, Tensor2DT<S>> gated_activation_backward(const Tensor2DT<S>& grad_out,
                                                                const Tensor2DT<S>& filter_pre,
                                                                const Tensor2DT<S>& gate_pre) {
    require_same_shape(filter_pre, gate_pre, "gated_activation_backward");
    require_same_shape(grad_out, filter_pre, "gated_activation_backward");
    Tensor2DT<S> gf(filter_pre.timesteps, filter_pre.channels);
    Tensor2DT<S> gg(filter_pre.timesteps, filter_pre.channels);
    for (std::size_t i = 0; i < gf.data.size(); ++i) {
        const S th = std::tanh(filter_pre.data[i]);
        const S sg = sigmoid(gate_pre.data[i]);
        const S g = grad_out.data[i];
        gf.data[i] = g * sg * (S(1) - th * th);
        gg.data[i] = g * th * sg * (S(1) - sg);
    }
    return {std::move(gf), std::move(gg)};
}

template <typename S>
Tensor2DT<S> relu(const Tensor2DT<S>& input) {
    Tensor2DT<S> out(input.timesteps, input.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::max(input.data[i], S(0));
    return out;
}

template <typename S>
Tensor2DT<S> relu_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_input) {
    require_same_shape(grad_out, saved_input, "relu_backward");
    Tensor2DT<S> out(grad_out.timesteps, grad_out.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = saved_input.data[i] > S(0) ? grad_out.data[i] : S(0);
    }
    return out;
}

template <typename S>
Tensor2DT<S> zero_stuff(const Tensor2DT<S>& input, int factor) {
    if (factor < 1) throw ConfigError("zero_stuff factor must be >= 1, got " + std::to_string(factor));
    Tensor2DT<S> out(input.timesteps * factor, input.channels);
    for (int t = 0; t < input.timesteps; ++t) {
        std::copy(input.row(t).begin(), input.row(t).end(), out.row(t * factor).begin());
    }
    return out;
}

template <typename S>
Tensor2DT<S> zero_stuff_backward(const Tensor2DT<S>& grad_out, int factor) {
    if (factor < 1) throw ConfigError("zero_stuff factor must be >= 1");
    Tensor2DT<S> out(grad_out.timesteps / factor, grad_out.channels);
    for (int t = 0; t < out.timesteps; ++t) {
        std::copy(grad_out.row(t * factor).begin(), grad_out.row(t * factor).end(), out.row(t).begin());
    }
    return out;
}

template <typename S>
Tensor2DT<S> upsample_transposed(const Tensor2DT<S>& cond, const ConvKernelT<S>& kernel, int factor) {
    if (factor < 1) throw ConfigError("upsample factor must be >= 1, got " + std::to_string(factor));
    return causal_conv(zero_stuff(cond, factor), kernel);
}

template <typename S>
Tensor2DT<S> upsample_transposed_backward(const Tensor2DT<S>& grad_out, const Tensor2DT<S>& saved_cond,
                                          const ConvKernelT<S>& kernel, int factor, KernelGradT<S>& acc) {
    if (factor < 1) throw ConfigError("upsample factor must be >= 1");
    const Tensor2DT<S> stuffed = zero_stuff(saved_cond, factor);
    const Tensor2DT<S> grad_stuffed = causal_conv_backward(grad_out, stuffed, kernel, acc);
    return zero_stuff_backward(grad_stuffed, factor);
}

template <typename S>
Tensor2DT<S> repeat_upsample(const Tensor2DT<S>& cond, int factor) {
    if (factor < 1) throw ConfigError("repeat_upsample factor must be >= 1, got " + std::to_string(factor));
    Tensor2DT<S> out(cond.timesteps * factor, cond.channels);
    for (int t = 0; t < cond.timesteps; ++t) {
        for (int r = 0; r < factor; ++r) {
            std::copy(cond.row(t).begin(), cond.row(t).end(), out.row(t * factor + r).begin());
        }
    }
    return out;
}

template <typename S>
Tensor2DT<S> repeat_upsample_backward(const Tensor2DT<S>& grad_out, int factor) {
    if (factor < 1) throw ConfigError("repeat_upsample factor must be >= 1");
    Tensor2DT<S> out(grad_out.timesteps / factor, grad_out.channels);
    for (int t = 0; t < out.timesteps; ++t) {
        for (int r = 0; r < factor; ++r) {
            const auto src = grad_out.row(t * factor + r);
            auto dst = out.row(t);
            for (int c = 0; c < out.channels; ++c) dst[c] += src[c];
        }
    }
    return out;
}

template <typename S>
ConvKernelT<S> replication_upsample_kernel(int channels, int factor) {
    ConvKernelT<S> k(factor, channels, channels, 1);
    for (int tap = 0; tap < factor; ++tap) {
        for (int c = 0; c < channels; ++c) k.w(tap, c, c) = S(1);
    }
    return k;
}

template <typename S>
Tensor2DT<S> mean_pool(const Tensor2DT<S>& input, int pool) {
    if (pool < 1) throw ConfigError("mean_pool window must be >= 1, got " + std::to_string(pool));
    const int frames = input.timesteps / pool;
    Tensor2DT<S> out(frames, input.channels);
    const S inv = S(1) / static_cast<S>(pool);
    for (int f = 0; f < frames; ++f) {
        auto dst = out.row(f);
        for (int r = 0; r < pool; ++r) {
            const auto src = input.row(f * pool + r);
            for (int c = 0; c < input.channels; ++c) dst[c] += src[c];
        }
        for (int c = 0; c < input.channels; ++c) dst[c] *= inv;
    }
    return out;
}

template <typename S>
Tensor2DT<S> mean_pool_backward(const Tensor2DT<S>& grad_out, int pool, int input_timesteps) {
    if (pool < 1) throw ConfigError("mean_pool window must be >= 1");
    Tensor2DT<S> out(input_timesteps, grad_out.channels);
    const S inv = S(1) / static_cast<S>(pool);
    for (int f = 0; f < grad_out.timesteps; ++f) {
        const auto src = grad_out.row(f);
        for (int r = 0; r < pool; ++r) {
            auto dst = out.row(f * pool + r);
            for (int c = 0; c < grad_out.channels; ++c) dst[c] = src[c] * inv;
        }
    }
    return out;
}

template <typename S>
std::vector<S> softmax_row(std::span<const S> logits) {
    S mx = logits[0];
    for (S v : logits) mx = std::max(mx, v);
    std::vector<S> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double e = std::exp(static_cast<double>(logits[i] - mx));
        out[i] = static_cast<S>(e);
        z += e;
    }
    const double inv = 1.0 / z;
    for (auto& v : out) v = static_cast<S>(static_cast<double>(v) * inv);
    return out;
}

template <typename S>
XentResult<S> softmax_xent(const Tensor2DT<S>& logits, std::span<const int> targets,
                           std::span<const std::uint8_t> mask) {
    if (static_cast<int>(targets.size()) != logits.timesteps) {
        throw ShapeError("softmax_xent: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.timesteps) + " logit rows");
    }
    if (!mask.empty() && static_cast<int>(mask.size()) != logits.timesteps) {
        throw ShapeError("softmax_xent: mask length " + std::to_string(mask.size()) +
                         " does not match " + std::to_string(logits.timesteps) + " rows");
    }
    XentResult<S> res;
    res.grad_logits = Tensor2DT<S>(logits.timesteps, logits.channels);
    int count = 0;
    for (int t = 0; t < logits.timesteps; ++t) {
        if (!mask.empty() && !mask[t]) continue;
        ++count;
    }
    res.counted = count;
    if (count == 0) return res;

    double loss = 0.0;
    const S invn = S(1) / static_cast<S>(count);
    for (int t = 0; t < logits.timesteps; ++t) {
        if (!mask.empty() && !mask[t]) continue;
        const int target = targets[t];
        if (target < 0 || target >= logits.channels) {
            throw DataError("softmax_xent: target class " + std::to_string(target) +
                            " out of range [0, " + std::to_string(logits.channels - 1) + "] at t=" +
                            std::to_string(t));
        }
        const auto row = logits.row(t);
        const std::vector<S> p = softmax_row<S>(row);
        S mx = row[0];
        for (S v : row) mx = std::max(mx, v);
        double z = 0.0;
        for (S v : row) z += std::exp(static_cast<double>(v - mx));
        loss += std::log(z) - static_cast<double>(row[target] - mx);
        auto grow = res.grad_logits.row(t);
        for (int c = 0; c < logits.channels; ++c) grow[c] = p[c] * invn;
        grow[target] -= invn;
    }
    res.loss = static_cast<S>(loss / count);
    return res;
}

#define WAVENET_INSTANTIATE_OPS(S)                                                                  \
    template Tensor2DT<S> causal_conv<S>(const Tensor2DT<S>&, const ConvKernelT<S>&);               \
    template Tensor2DT<S> causal_conv_backward<S>(const Tensor2DT<S>&, const Tensor2DT<S>&,         \
                                                  const ConvKernelT<S>&, KernelGradT<S>&);          \
    template Tensor2DT<S> conv1x1<S>(const Tensor2DT<S>&, const ConvKernelT<S>&);                   \
    template Tensor2DT<S> conv1x1_backward<S>(const Tensor2DT<S>&, const Tensor2DT<S>&,             \
                                              const ConvKernelT<S>&, KernelGradT<S>&);              \
    template Tensor2DT<S> conv_same<S>(const Tensor2DT<S>&, const ConvKernelT<S>&);                 \
    template Tensor2DT<S> conv_same_backward<S>(const Tensor2DT<S>&, const Tensor2DT<S>&,           \
                                                const ConvKernelT<S>&, KernelGradT<S>&);            \
    template Tensor2DT<S> gated_activation<S>(const Tensor2DT<S>&, const Tensor2DT<S>&);            \
    template std::pair<Tensor2DT<S>, Tensor2DT<S>> gated_activation_backward<S>(                    \
        const Tensor2DT<S>&, const Tensor2DT<S>&, const Tensor2DT<S>&);                             \
    template Tensor2DT<S> relu<S>(const Tensor2DT<S>&);                                             \
    template Tensor2DT<S> relu_backward<S>(const Tensor2DT<S>&, const Tensor2DT<S>&);               \
    template Tensor2DT<S> zero_stuff<S>(const Tensor2DT<S>&, int);                                  \
    template Tensor2DT<S> zero_stuff_backward<S>(const Tensor2DT<S>&, int);                         \
    template Tensor2DT<S> upsample_transposed<S>(const Tensor2DT<S>&, const ConvKernelT<S>&, int);  \
    template Tensor2DT<S> upsample_transposed_backward<S>(const Tensor2DT<S>&, const Tensor2DT<S>&, \
                                                          const ConvKernelT<S>&, int,               \
                                                          KernelGradT<S>&);                         \
    template Tensor2DT<S> repeat_upsample<S>(const Tensor2DT<S>&, int);                             \
    template Tensor2DT<S> repeat_upsample_backward<S>(const Tensor2DT<S>&, int);                    \
    template ConvKernelT<S> replication_upsample_kernel<S>(int, int);                               \
    template Tensor2DT<S> mean_pool<S>(const Tensor2DT<S>&, int);                                   \
    template Tensor2DT<S> mean_pool_backward<S>(const Tensor2DT<S>&, int, int);                     \
    template std::vector<S> softmax_row<S>(std::span<const S>);                                     \
    template XentResult<S> softmax_xent<S>(const Tensor2DT<S>&, std::span<const int>,               \
                                           std::span<const std::uint8_t>);

WAVENET_INSTANTIATE_OPS(float)
WAVENET_INSTANTIATE_OPS(double)

#undef WAVENET_INSTANTIATE_OPS

} // namespace wavenet
