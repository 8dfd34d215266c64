#include "wavenet/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace wavenet {

namespace {

/// y[co] += W[k] * row, one tap of a kernel applied to one timestep.
void tap_accumulate(const ConvKernel& kernel, int k, std::span<const float> row, std::vector<float>& y) {
    const float* wk = kernel.weights.data() +
                      static_cast<std::size_t>(k) * kernel.in_channels * kernel.out_channels;
    for (int ci = 0; ci < kernel.in_channels; ++ci) {
        const float xv = row[ci];
        if (xv == 0.0f) continue;
        const float* wrow = wk + static_cast<std::size_t>(ci) * kernel.out_channels;
        for (int co = 0; co < kernel.out_channels; ++co) y[co] += wrow[co] * xv;
    }
}

std::vector<float> apply_1x1(const ConvKernel& kernel, std::span<const float> row) {
    std::vector<float> y(kernel.bias.begin(), kernel.bias.end());
    tap_accumulate(kernel, 0, row, y);
    return y;
}

void add_into(std::vector<float>& a, std::span<const float> b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

std::vector<float> softmax_probs(std::span<const float> logits) {
    float mx = logits[0];
    for (float v : logits) mx = std::max(mx, v);
    std::vector<float> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double e = std::exp(static_cast<double>(logits[i] - mx));
        p[i] = static_cast<float>(e);
        z += e;
    }
    for (auto& v : p) v = static_cast<float>(static_cast<double>(v) / z);
    return p;
}

void check_class(int c, int num_classes) {
    if (c < 0 || c >= num_classes) {
        throw DataError("class " + std::to_string(c) + " out of range [0, " +
                        std::to_string(num_classes - 1) + "]");
    }
}

} // namespace

SamplerState init_state(const WaveNetModel& model, const GenerationRequest& request) {
    const ModelConfig& cfg = model.config;
    if (request.num_samples < 1) {
        throw ConfigError("generation needs num_samples >= 1, got " +
                          std::to_string(request.num_samples));
    }
    if (!(request.temperature > 0.0)) {
        throw ConfigError("temperature must be > 0, got " + std::to_string(request.temperature));
    }
    const auto& cond = request.conditioning;
    if (cfg.global_dim > 0) {
        if (!cond.global_vec || static_cast<int>(cond.global_vec->size()) != cfg.global_dim) {
            throw ConfigError("generation request must carry a global vector of dim " +
                              std::to_string(cfg.global_dim));
        }
    } else if (cond.global_vec) {
        throw ConfigError("global conditioning supplied but the model declares none");
    }

    SamplerState state;
    state.rng = Rng(request.seed);
    state.crop = context_crop(cfg);
    state.silence = silence_class(CompandingParams{255, cfg.num_classes});

    const std::int64_t primer_len = request.primer ? static_cast<std::int64_t>(request.primer->classes.size()) : 0;
    if (cfg.local_dim > 0) {
        if (!cond.local_series || cond.local_series->channels != cfg.local_dim) {
            throw ConfigError("generation request must carry a local series with " +
                              std::to_string(cfg.local_dim) + " channels");
        }
        const std::int64_t horizon = primer_len + request.num_samples;
        const std::int64_t covered =
            static_cast<std::int64_t>(cond.local_series->timesteps) * cfg.local_upsample_factor;
        if (covered != horizon) {
            throw ShapeError("local conditioning covers " + std::to_string(covered) +
                             " samples but the run needs " + std::to_string(horizon));
        }
        state.local_upsampled =
            cfg.local_upsample_mode == LocalUpsampleMode::transposed
                ? upsample_transposed(*cond.local_series, model.upsample, cfg.local_upsample_factor)
                : repeat_upsample(*cond.local_series, cfg.local_upsample_factor);
        state.horizon = horizon;
    } else if (cond.local_series) {
        throw ConfigError("local conditioning supplied but the model declares none");
    }

    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& k = model.layers[l].filter;
        state.main_buffers.emplace_back(k.dilation * (k.filter_width - 1), cfg.residual_channels);
    }
    if (cfg.global_dim > 0) {
        for (const auto& layer : model.layers) {
            state.global_filter_bias.push_back(apply_1x1(layer.global_filter, *cond.global_vec));
            state.global_gate_bias.push_back(apply_1x1(layer.global_gate, *cond.global_vec));
        }
    }
    for (std::size_t s = 0; s < model.context_stacks.size(); ++s) {
        const auto& scfg = cfg.context_stacks[s];
        SamplerState::ContextState cs;
        for (const auto& k : model.context_stacks[s].filter) {
            cs.buffers.emplace_back(k.dilation * (k.filter_width - 1), scfg.channels);
        }
        cs.frame_acc.assign(static_cast<std::size_t>(scfg.channels), 0.0f);
        cs.current.assign(static_cast<std::size_t>(scfg.channels), 0.0f);
        state.context.push_back(std::move(cs));
    }

    if (request.primer) {
        for (int c : request.primer->classes) sampler_step(model, state, c);
    }
    return state;
}

std::vector<float> sampler_step(const WaveNetModel& model, SamplerState& state, int prev_class) {
    const ModelConfig& cfg = model.config;
    check_class(prev_class, cfg.num_classes);
    if (state.main_buffers.size() != model.layers.size() ||
        state.context.size() != model.context_stacks.size()) {
        throw StateError("sampler state does not match this model's structure");
    }
    const std::int64_t u = state.t;
    if (state.horizon >= 0 && u >= state.horizon) {
        throw StateError("stepped past the conditioned horizon of " + std::to_string(state.horizon));
    }

    std::vector<float> probs;
    if (u >= state.crop) {
        // One timestep of the main stack, taps served from the ring buffers.
        std::vector<float> x(static_cast<std::size_t>(cfg.residual_channels));
        {
            const auto& emb = model.input_embed;
            const float* w = emb.weights.data() +
                             static_cast<std::size_t>(prev_class) * emb.out_channels;
            for (int r = 0; r < emb.out_channels; ++r) x[r] = w[r] + emb.bias[r];
        }
        std::vector<float> skip_acc(static_cast<std::size_t>(cfg.skip_channels), 0.0f);
        std::vector<float> f_pre, g_pre, z(static_cast<std::size_t>(cfg.residual_channels));
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            const auto& layer = model.layers[l];
            const int fw = layer.filter.filter_width;
            const int d = layer.filter.dilation;
            f_pre.assign(layer.filter.bias.begin(), layer.filter.bias.end());
            g_pre.assign(layer.gate.bias.begin(), layer.gate.bias.end());
            for (int k = 0; k < fw - 1; ++k) {
                const auto row = state.main_buffers[l].read((fw - 1 - k) * d);
                tap_accumulate(layer.filter, k, row, f_pre);
                tap_accumulate(layer.gate, k, row, g_pre);
            }
            tap_accumulate(layer.filter, fw - 1, x, f_pre);
            tap_accumulate(layer.gate, fw - 1, x, g_pre);
            if (cfg.global_dim > 0) {
                add_into(f_pre, state.global_filter_bias[l]);
                add_into(g_pre, state.global_gate_bias[l]);
            }
            if (cfg.local_dim > 0) {
                add_into(f_pre, apply_1x1(layer.local_filter,
                                          state.local_upsampled.row(static_cast<int>(u))));
                add_into(g_pre, apply_1x1(layer.local_gate,
                                          state.local_upsampled.row(static_cast<int>(u))));
            }
            for (std::size_t s = 0; s < state.context.size(); ++s) {
                add_into(f_pre, apply_1x1(layer.ctx_filter[s], state.context[s].current));
                add_into(g_pre, apply_1x1(layer.ctx_gate[s], state.context[s].current));
            }
            for (int r = 0; r < cfg.residual_channels; ++r) {
                z[r] = std::tanh(f_pre[r]) * (1.0f / (1.0f + std::exp(-g_pre[r])));
            }
            add_into(skip_acc, apply_1x1(layer.skip, z));
            state.main_buffers[l].push(x);
            auto res = apply_1x1(layer.residual, z);
            add_into(res, x);
            x = std::move(res);
        }
        std::vector<float> h1(skip_acc.size());
        for (std::size_t i = 0; i < h1.size(); ++i) h1[i] = std::max(skip_acc[i], 0.0f);
        auto o1 = apply_1x1(model.head1, h1);
        for (auto& v : o1) v = std::max(v, 0.0f);
        const auto logits = apply_1x1(model.head2, o1);
        probs = softmax_probs(logits);
    } else {
        // Context warm-up: no prediction yet, emit the silence prior.
        probs.assign(static_cast<std::size_t>(cfg.num_classes), 0.0f);
        probs[static_cast<std::size_t>(state.silence)] = 1.0f;
    }

    // Feed this sample through every context stack; a finished frame becomes
    // the conditioning vector from the next position onward.
    for (std::size_t s = 0; s < model.context_stacks.size(); ++s) {
        const auto& stack = model.context_stacks[s];
        const auto& scfg = cfg.context_stacks[s];
        auto& cs = state.context[s];
        std::vector<float> xc(static_cast<std::size_t>(scfg.channels));
        {
            const auto& emb = stack.embed;
            const float* w = emb.weights.data() +
                             static_cast<std::size_t>(prev_class) * emb.out_channels;
            for (int r = 0; r < emb.out_channels; ++r) xc[r] = w[r] + emb.bias[r];
        }
        std::vector<float> f_pre, g_pre, z(xc.size());
        for (std::size_t l = 0; l < stack.filter.size(); ++l) {
            const int fw = stack.filter[l].filter_width;
            const int d = stack.filter[l].dilation;
            f_pre.assign(stack.filter[l].bias.begin(), stack.filter[l].bias.end());
            g_pre.assign(stack.gate[l].bias.begin(), stack.gate[l].bias.end());
            for (int k = 0; k < fw - 1; ++k) {
                const auto row = cs.buffers[l].read((fw - 1 - k) * d);
                tap_accumulate(stack.filter[l], k, row, f_pre);
                tap_accumulate(stack.gate[l], k, row, g_pre);
            }
            tap_accumulate(stack.filter[l], fw - 1, xc, f_pre);
            tap_accumulate(stack.gate[l], fw - 1, xc, g_pre);
            for (std::size_t r = 0; r < z.size(); ++r) {
                z[r] = std::tanh(f_pre[r]) * (1.0f / (1.0f + std::exp(-g_pre[r])));
            }
            cs.buffers[l].push(xc);
            auto res = apply_1x1(stack.residual[l], z);
            add_into(res, xc);
            xc = std::move(res);
        }
        add_into(cs.frame_acc, xc);
        if (++cs.in_frame == scfg.pool_factor) {
            for (std::size_t i = 0; i < cs.current.size(); ++i) {
                cs.current[i] = cs.frame_acc[i] / static_cast<float>(scfg.pool_factor);
            }
            cs.frame_acc.assign(cs.frame_acc.size(), 0.0f);
            cs.in_frame = 0;
        }
    }

    ++state.t;
    return probs;
}

std::vector<float> temperature_scale(std::span<const float> probs, double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("temperature must be > 0, got " + std::to_string(temperature));
    }
    std::vector<float> out(probs.begin(), probs.end());
    if (temperature == 1.0) return out;
    const double inv_t = 1.0 / temperature;
    double z = 0.0;
    std::vector<double> powed(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        powed[i] = probs[i] > 0.0f ? std::pow(static_cast<double>(probs[i]), inv_t) : 0.0;
        z += powed[i];
    }
    if (z <= 0.0) throw DataError("temperature scaling saw an all-zero distribution");
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = static_cast<float>(powed[i] / z);
    return out;
}

GenerationResult generate(const WaveNetModel& model, const GenerationRequest& request) {
    SamplerState state = init_state(model, request);
    // init_state already fed the primer; continue from its last class, or
    // from silence when starting cold.
    int prev = request.primer && !request.primer->classes.empty() ? request.primer->classes.back()
                                                                  : state.silence;

    GenerationResult result;
    result.wave.sample_rate_hz = request.sample_rate_hz;
    result.wave.classes.reserve(static_cast<std::size_t>(request.num_samples));
    double nll = 0.0;
    for (int i = 0; i < request.num_samples; ++i) {
        const std::vector<float> probs = sampler_step(model, state, prev);
        int chosen;
        if (request.mode == SamplingMode::argmax) {
            chosen = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        } else {
            const std::vector<float> scaled = temperature_scale(probs, request.temperature);
            chosen = state.rng.categorical(scaled);
        }
        nll -= std::log(std::max(static_cast<double>(probs[static_cast<std::size_t>(chosen)]), 1e-300));
        result.wave.classes.push_back(chosen);
        prev = chosen;
    }
    result.mean_nll = nll / request.num_samples;
    return result;
}

} // namespace wavenet
