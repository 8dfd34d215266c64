#include "wavenet/model.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "json.hpp"

namespace wavenet {

using nlohmann::json;

// --- config ------------------------------------------------------------------

void ModelConfig::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2, got " + std::to_string(num_classes));
    if (residual_channels < 1 || skip_channels < 1) {
        throw ConfigError("residual_channels and skip_channels must be >= 1");
    }
    if (filter_width < 1) throw ConfigError("filter_width must be >= 1, got " + std::to_string(filter_width));
    if (dilation_schedule.empty()) throw ConfigError("dilation_schedule must be non-empty");
    for (int d : dilation_schedule) {
        if (d < 1) throw ConfigError("dilations must be >= 1, got " + std::to_string(d));
    }
    if (receptive_field(*this) <= filter_width) {
        throw ConfigError("receptive field " + std::to_string(receptive_field(*this)) +
                          " does not exceed filter_width " + std::to_string(filter_width) +
                          "; deepen the dilation schedule");
    }
    if (global_dim < 0 || local_dim < 0) throw ConfigError("conditioning dims must be >= 0");
    if (local_dim > 0 && local_upsample_factor < 1) {
        throw ConfigError("local_upsample_factor must be >= 1, got " + std::to_string(local_upsample_factor));
    }
    for (const auto& s : context_stacks) {
        if (s.dilation_schedule.empty()) throw ConfigError("context stack dilation_schedule must be non-empty");
        for (int d : s.dilation_schedule) {
            if (d < 1) throw ConfigError("context stack dilations must be >= 1");
        }
        if (s.channels < 1) throw ConfigError("context stack channels must be >= 1");
        if (s.pool_factor < 1) throw ConfigError("context stack pool_factor must be >= 1");
    }
    if (classifier) {
        if (classifier->num_labels < 2) throw ConfigError("classifier needs num_labels >= 2");
        if (classifier->pool_factor < 1) throw ConfigError("classifier pool_factor must be >= 1");
    }
}

int receptive_field(const ModelConfig& config) {
    long rf = 1;
    for (int d : config.dilation_schedule) rf += static_cast<long>(config.filter_width - 1) * d;
    return static_cast<int>(rf);
}

int context_stack_receptive_field(const ContextStackConfig& stack, int filter_width) {
    long rf = 1;
    for (int d : stack.dilation_schedule) rf += static_cast<long>(filter_width - 1) * d;
    return static_cast<int>(rf);
}

int context_crop(const ModelConfig& config) {
    int crop = 0;
    for (const auto& s : config.context_stacks) {
        const int rf = context_stack_receptive_field(s, config.filter_width);
        const int rounded = ((rf + s.pool_factor - 1) / s.pool_factor) * s.pool_factor;
        crop = std::max(crop, rounded);
    }
    return crop;
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t K = static_cast<std::size_t>(c.num_classes);
    const std::size_t R = static_cast<std::size_t>(c.residual_channels);
    const std::size_t SK = static_cast<std::size_t>(c.skip_channels);
    const std::size_t fw = static_cast<std::size_t>(c.filter_width);
    std::size_t n = K * R + R; // input embedding
    for (std::size_t i = 0; i < c.dilation_schedule.size(); ++i) {
        n += 2 * (fw * R * R + R); // filter + gate
        if (c.global_dim > 0) n += 2 * (static_cast<std::size_t>(c.global_dim) * R + R);
        if (c.local_dim > 0) n += 2 * (static_cast<std::size_t>(c.local_dim) * R + R);
        for (const auto& s : c.context_stacks) n += 2 * (static_cast<std::size_t>(s.channels) * R + R);
        n += R * R + R;   // residual 1x1
        n += R * SK + SK; // skip 1x1
    }
    if (c.local_dim > 0 && c.local_upsample_mode == LocalUpsampleMode::transposed) {
        const std::size_t L = static_cast<std::size_t>(c.local_dim);
        n += static_cast<std::size_t>(c.local_upsample_factor) * L * L + L;
    }
    n += SK * SK + SK; // head1
    n += SK * K + K;   // head2
    for (const auto& s : c.context_stacks) {
        const std::size_t C = static_cast<std::size_t>(s.channels);
        n += K * C + C;
        n += s.dilation_schedule.size() * (2 * (fw * C * C + C) + (C * C + C));
    }
    if (c.classifier) {
        const std::size_t NL = static_cast<std::size_t>(c.classifier->num_labels);
        n += 3 * SK * SK + SK;
        n += 3 * SK * NL + NL;
    }
    return n;
}

namespace {

const char* upsample_mode_name(LocalUpsampleMode m) {
    return m == LocalUpsampleMode::transposed ? "transposed" : "repeat";
}

LocalUpsampleMode upsample_mode_from(const std::string& s) {
    if (s == "transposed") return LocalUpsampleMode::transposed;
    if (s == "repeat") return LocalUpsampleMode::repeat;
    throw ConfigError("unknown local_upsample_mode \"" + s + "\" (expected transposed|repeat)");
}

} // namespace

std::string model_config_to_json(const ModelConfig& c) {
    json j;
    j["num_classes"] = c.num_classes;
    j["residual_channels"] = c.residual_channels;
    j["skip_channels"] = c.skip_channels;
    j["filter_width"] = c.filter_width;
    j["dilation_schedule"] = c.dilation_schedule;
    j["global_dim"] = c.global_dim;
    j["local_dim"] = c.local_dim;
    j["local_upsample_factor"] = c.local_upsample_factor;
    j["local_upsample_mode"] = upsample_mode_name(c.local_upsample_mode);
    j["context_stacks"] = json::array();
    for (const auto& s : c.context_stacks) {
        j["context_stacks"].push_back({{"dilation_schedule", s.dilation_schedule},
                                       {"channels", s.channels},
                                       {"pool_factor", s.pool_factor}});
    }
    if (c.classifier) {
        j["classifier"] = {{"num_labels", c.classifier->num_labels},
                           {"pool_factor", c.classifier->pool_factor}};
    }
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    ModelConfig c;
    try {
        c.num_classes = j.value("num_classes", c.num_classes);
        c.residual_channels = j.value("residual_channels", c.residual_channels);
        c.skip_channels = j.value("skip_channels", c.skip_channels);
        c.filter_width = j.value("filter_width", c.filter_width);
        c.dilation_schedule = j.at("dilation_schedule").get<std::vector<int>>();
        c.global_dim = j.value("global_dim", 0);
        c.local_dim = j.value("local_dim", 0);
        c.local_upsample_factor = j.value("local_upsample_factor", 1);
        c.local_upsample_mode = upsample_mode_from(j.value("local_upsample_mode", std::string("transposed")));
        if (j.contains("context_stacks")) {
            for (const auto& js : j.at("context_stacks")) {
                ContextStackConfig s;
                s.dilation_schedule = js.at("dilation_schedule").get<std::vector<int>>();
                s.channels = js.at("channels").get<int>();
                s.pool_factor = js.value("pool_factor", 1);
                c.context_stacks.push_back(std::move(s));
            }
        }
        if (j.contains("classifier") && !j.at("classifier").is_null()) {
            ClassifierConfig cl;
            cl.num_labels = j.at("classifier").at("num_labels").get<int>();
            cl.pool_factor = j.at("classifier").value("pool_factor", 160);
            c.classifier = cl;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config field error: ") + e.what());
    }
    c.validate();
    return c;
}

// --- construction and init -----------------------------------------------------

template <typename S>
WaveNetModelT<S>::WaveNetModelT(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    config = cfg;
    const int K = cfg.num_classes;
    const int R = cfg.residual_channels;
    const int SK = cfg.skip_channels;
    const int fw = cfg.filter_width;

    input_embed = ConvKernelT<S>(1, K, R);
    for (int d : cfg.dilation_schedule) {
        LayerParamsT<S> layer;
        layer.filter = ConvKernelT<S>(fw, R, R, d);
        layer.gate = ConvKernelT<S>(fw, R, R, d);
        if (cfg.global_dim > 0) {
            layer.global_filter = ConvKernelT<S>(1, cfg.global_dim, R);
            layer.global_gate = ConvKernelT<S>(1, cfg.global_dim, R);
        }
        if (cfg.local_dim > 0) {
            layer.local_filter = ConvKernelT<S>(1, cfg.local_dim, R);
            layer.local_gate = ConvKernelT<S>(1, cfg.local_dim, R);
        }
        for (const auto& s : cfg.context_stacks) {
            layer.ctx_filter.push_back(ConvKernelT<S>(1, s.channels, R));
            layer.ctx_gate.push_back(ConvKernelT<S>(1, s.channels, R));
        }
        layer.residual = ConvKernelT<S>(1, R, R);
        layer.skip = ConvKernelT<S>(1, R, SK);
        layers.push_back(std::move(layer));
    }
    if (cfg.local_dim > 0 && cfg.local_upsample_mode == LocalUpsampleMode::transposed) {
        upsample = replication_upsample_kernel<S>(cfg.local_dim, cfg.local_upsample_factor);
    }
    head1 = ConvKernelT<S>(1, SK, SK);
    head2 = ConvKernelT<S>(1, SK, K);
    for (const auto& s : cfg.context_stacks) {
        ContextStackParamsT<S> stack;
        stack.embed = ConvKernelT<S>(1, K, s.channels);
        for (int d : s.dilation_schedule) {
            stack.filter.push_back(ConvKernelT<S>(fw, s.channels, s.channels, d));
            stack.gate.push_back(ConvKernelT<S>(fw, s.channels, s.channels, d));
            stack.residual.push_back(ConvKernelT<S>(1, s.channels, s.channels));
        }
        context_stacks.push_back(std::move(stack));
    }
    if (cfg.classifier) {
        cls1 = ConvKernelT<S>(3, SK, SK);
        cls2 = ConvKernelT<S>(3, SK, cfg.classifier->num_labels);
    }

    // Uniform draws go only to the always-active kernels, in a fixed order,
    // so two same-seed models whose configs differ only in conditioning or
    // classifier options share every common weight. Residual 1x1 and all
    // conditioning projections stay zero: blocks start as identity and
    // conditioning starts neutral.
    Rng rng(seed);
    auto fill = [&](ConvKernelT<S>& k) {
        const double bound = std::sqrt(1.0 / (static_cast<double>(k.filter_width) * k.in_channels));
        for (auto& w : k.weights) w = static_cast<S>(rng.uniform(-bound, bound));
    };
    fill(input_embed);
    for (auto& layer : layers) {
        fill(layer.filter);
        fill(layer.gate);
        fill(layer.skip);
    }
    fill(head1);
    fill(head2);
    for (auto& stack : context_stacks) {
        fill(stack.embed);
        for (std::size_t l = 0; l < stack.filter.size(); ++l) {
            fill(stack.filter[l]);
            fill(stack.gate[l]);
        }
    }
    if (cfg.classifier) {
        fill(cls1);
        fill(cls2);
    }
}

template <typename S>
void WaveNetModelT<S>::randomize_parameters(std::uint64_t seed) {
    Rng rng(seed);
    visit_kernel_fields(*this, config, [&](const std::string&, ConvKernelT<S>& k) {
        const double bound = std::sqrt(1.0 / (static_cast<double>(k.filter_width) * k.in_channels));
        for (auto& w : k.weights) w = static_cast<S>(rng.uniform(-bound, bound));
        for (auto& b : k.bias) b = static_cast<S>(rng.uniform(-0.1, 0.1));
    });
}

template <typename S>
std::size_t WaveNetModelT<S>::count_parameters() const {
    std::size_t n = 0;
    visit_kernel_fields(*this, config,
                        [&](const std::string&, const ConvKernelT<S>& k) { n += k.param_count(); });
    return n;
}

template <typename S>
bool WaveNetModelT<S>::parameters_finite() const {
    bool ok = true;
    visit_kernel_fields(*this, config, [&](const std::string&, const ConvKernelT<S>& k) {
        for (S w : k.weights)
            if (!std::isfinite(static_cast<double>(w))) ok = false;
        for (S b : k.bias)
            if (!std::isfinite(static_cast<double>(b))) ok = false;
    });
    return ok;
}

// --- forward -------------------------------------------------------------------

namespace {

template <typename S>
Tensor2DT<S> embed_classes(std::span<const int> classes, int begin, int count,
                           const ConvKernelT<S>& embed) {
    Tensor2DT<S> out(count, embed.out_channels);
    for (int i = 0; i < count; ++i) {
        const int c = classes[static_cast<std::size_t>(begin) + i];
        auto row = out.row(i);
        const S* w = embed.weights.data() + static_cast<std::size_t>(c) * embed.out_channels;
        for (int r = 0; r < embed.out_channels; ++r) row[r] = w[r] + embed.bias[r];
    }
    return out;
}

template <typename S>
void embed_backward(const Tensor2DT<S>& grad_e, std::span<const int> classes, int begin,
                    const ConvKernelT<S>& embed, KernelGradT<S>& acc) {
    for (int i = 0; i < grad_e.timesteps; ++i) {
        const int c = classes[static_cast<std::size_t>(begin) + i];
        const auto row = grad_e.row(i);
        S* gw = acc.weights.data() + static_cast<std::size_t>(c) * embed.out_channels;
        for (int r = 0; r < embed.out_channels; ++r) {
            gw[r] += row[r];
            acc.bias[r] += row[r];
        }
    }
}

template <typename S>
void add_inplace(Tensor2DT<S>& a, const Tensor2DT<S>& b) {
    require_same_shape(a, b, "add_inplace");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename S>
Tensor2DT<S> broadcast_rows(const std::vector<S>& v, int timesteps) {
    Tensor2DT<S> out(timesteps, static_cast<int>(v.size()));
    for (int t = 0; t < timesteps; ++t) std::copy(v.begin(), v.end(), out.row(t).begin());
    return out;
}

template <typename S>
Tensor2DT<S> crop_rows(const Tensor2DT<S>& x, int begin) {
    Tensor2DT<S> out(x.timesteps - begin, x.channels);
    std::copy(x.data.begin() + static_cast<std::size_t>(begin) * x.channels, x.data.end(),
              out.data.begin());
    return out;
}

} // namespace

template <typename S>
ForwardResultT<S> WaveNetModelT<S>::forward(std::span<const int> classes,
                                            const ConditioningInputT<S>& cond) const {
    return forward(classes, cond, nullptr);
}

template <typename S>
ForwardResultT<S> WaveNetModelT<S>::forward(std::span<const int> classes,
                                            const ConditioningInputT<S>& cond,
                                            ForwardTraceT<S>* trace) const {
    const int T = static_cast<int>(classes.size());
    if (T < 1) throw DataError("forward needs at least one input sample");
    for (int t = 0; t < T; ++t) {
        if (classes[t] < 0 || classes[t] >= config.num_classes) {
            throw DataError("input class " + std::to_string(classes[t]) + " out of range [0, " +
                            std::to_string(config.num_classes - 1) + "] at t=" + std::to_string(t));
        }
    }
    if (config.global_dim > 0) {
        if (!cond.global_vec) throw ConfigError("model expects a global conditioning vector");
        if (static_cast<int>(cond.global_vec->size()) != config.global_dim) {
            throw ConfigError("global conditioning dim " + std::to_string(cond.global_vec->size()) +
                              " does not match config " + std::to_string(config.global_dim));
        }
    } else if (cond.global_vec) {
        throw ConfigError("global conditioning supplied but the model declares none");
    }
    if (config.local_dim > 0) {
        if (!cond.local_series) throw ConfigError("model expects a local conditioning series");
        if (cond.local_series->channels != config.local_dim) {
            throw ConfigError("local conditioning has " + std::to_string(cond.local_series->channels) +
                              " channels, config says " + std::to_string(config.local_dim));
        }
        if (cond.local_series->timesteps * config.local_upsample_factor != T) {
            throw ShapeError("local conditioning covers " +
                             std::to_string(cond.local_series->timesteps * config.local_upsample_factor) +
                             " samples after upsampling but the input has " + std::to_string(T));
        }
    } else if (cond.local_series) {
        throw ConfigError("local conditioning supplied but the model declares none");
    }

    const int crop = context_crop(config);
    if (T <= crop) {
        throw DataError("input of " + std::to_string(T) +
                        " samples is shorter than the context warm-up of " + std::to_string(crop));
    }
    const int To = T - crop;

    if (trace) {
        *trace = ForwardTraceT<S>{};
        trace->classes.assign(classes.begin(), classes.end());
        trace->crop = crop;
        trace->cond = cond;
        trace->context.resize(context_stacks.size());
        trace->layers.reserve(layers.size());
    }

    // Context stacks: full-history pass at audio rate, pooled, then applied
    // one frame late so position t only sees frames that ended before it.
    std::vector<Tensor2DT<S>> ctx_cond;
    for (std::size_t s = 0; s < context_stacks.size(); ++s) {
        const auto& scfg = config.context_stacks[s];
        const auto& stack = context_stacks[s];
        ContextStackTraceT<S>* tr = trace ? &trace->context[s] : nullptr;
        Tensor2DT<S> x = embed_classes(classes, 0, T, stack.embed);
        for (std::size_t l = 0; l < stack.filter.size(); ++l) {
            Tensor2DT<S> f_pre = causal_conv(x, stack.filter[l]);
            Tensor2DT<S> g_pre = causal_conv(x, stack.gate[l]);
            Tensor2DT<S> z = gated_activation(f_pre, g_pre);
            Tensor2DT<S> next = x;
            add_inplace(next, conv1x1(z, stack.residual[l]));
            if (tr) {
                tr->layers.push_back(LayerTraceT<S>{std::move(x), std::move(f_pre), std::move(g_pre),
                                                    std::move(z)});
            }
            x = std::move(next);
        }
        const Tensor2DT<S> pooled = mean_pool(x, scfg.pool_factor);
        Tensor2DT<S> cw(To, scfg.channels);
        for (int i = 0; i < To; ++i) {
            const int frame = (crop + i) / scfg.pool_factor - 1;
            if (frame >= 0 && frame < pooled.timesteps) {
                std::copy(pooled.row(frame).begin(), pooled.row(frame).end(), cw.row(i).begin());
            }
        }
        if (tr) tr->cond_window = cw;
        ctx_cond.push_back(std::move(cw));
    }

    // Local conditioning upsampled to audio rate, then trimmed to the window.
    Tensor2DT<S> local_window;
    if (config.local_dim > 0) {
        Tensor2DT<S> y = config.local_upsample_mode == LocalUpsampleMode::transposed
                             ? upsample_transposed(*cond.local_series, upsample, config.local_upsample_factor)
                             : repeat_upsample(*cond.local_series, config.local_upsample_factor);
        local_window = crop_rows(y, crop);
        if (trace) trace->local_upsampled = local_window;
    }

    Tensor2DT<S> global_rows;
    if (config.global_dim > 0) global_rows = broadcast_rows(*cond.global_vec, To);

    Tensor2DT<S> x = embed_classes(classes, crop, To, input_embed);
    Tensor2DT<S> skip_sum(To, config.skip_channels);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        Tensor2DT<S> f_pre = causal_conv(x, layer.filter);
        Tensor2DT<S> g_pre = causal_conv(x, layer.gate);
        if (config.global_dim > 0) {
            add_inplace(f_pre, conv1x1(global_rows, layer.global_filter));
            add_inplace(g_pre, conv1x1(global_rows, layer.global_gate));
        }
        if (config.local_dim > 0) {
            add_inplace(f_pre, conv1x1(local_window, layer.local_filter));
            add_inplace(g_pre, conv1x1(local_window, layer.local_gate));
        }
        for (std::size_t s = 0; s < ctx_cond.size(); ++s) {
            add_inplace(f_pre, conv1x1(ctx_cond[s], layer.ctx_filter[s]));
            add_inplace(g_pre, conv1x1(ctx_cond[s], layer.ctx_gate[s]));
        }
        Tensor2DT<S> z = gated_activation(f_pre, g_pre);
        add_inplace(skip_sum, conv1x1(z, layer.skip));
        Tensor2DT<S> next = x;
        add_inplace(next, conv1x1(z, layer.residual));
        if (trace) {
            trace->layers.push_back(LayerTraceT<S>{std::move(x), std::move(f_pre), std::move(g_pre),
                                                   std::move(z)});
        }
        x = std::move(next);
    }

    const Tensor2DT<S> h1 = relu(skip_sum);
    Tensor2DT<S> o1 = conv1x1(h1, head1);
    const Tensor2DT<S> h2 = relu(o1);

    ForwardResultT<S> result;
    result.crop = crop;
    result.logits = conv1x1(h2, head2);
    if (config.classifier) {
        Tensor2DT<S> pooled = mean_pool(skip_sum, config.classifier->pool_factor);
        Tensor2DT<S> c1 = conv_same(pooled, cls1);
        const Tensor2DT<S> r = relu(c1);
        result.frame_logits = conv_same(r, cls2);
        if (trace) {
            trace->cls_pooled = std::move(pooled);
            trace->cls_mid = std::move(c1);
        }
    }
    if (trace) {
        trace->skip_sum = std::move(skip_sum);
        trace->head_mid = std::move(o1);
        trace->valid = true;
    }
    return result;
}

// --- backward ------------------------------------------------------------------

template <typename S>
void WaveNetModelT<S>::backward(const ForwardTraceT<S>& trace, const Tensor2DT<S>& grad_logits,
                                const Tensor2DT<S>* grad_frame_logits, GradientTapeT<S>& tape) const {
    if (!trace.valid) throw StateError("backward called without a saved forward trace");
    if (trace.layers.size() != layers.size() || trace.context.size() != context_stacks.size()) {
        throw StateError("forward trace does not match this model's layer structure");
    }
    const int To = trace.skip_sum.timesteps;
    const int T = static_cast<int>(trace.classes.size());
    const int crop = trace.crop;
    if (grad_logits.timesteps != To || grad_logits.channels != config.num_classes) {
        throw ShapeError("logit gradient " + grad_logits.shape_str() + " does not match logits " +
                         std::to_string(To) + "x" + std::to_string(config.num_classes));
    }
    if (grad_frame_logits && !config.classifier) {
        throw ConfigError("frame-logit gradient supplied but the model has no classifier head");
    }

    // Output head.
    const Tensor2DT<S> h1 = relu(trace.skip_sum);
    const Tensor2DT<S> h2 = relu(trace.head_mid);
    Tensor2DT<S> g = conv1x1_backward(grad_logits, h2, head2, tape.head2);
    g = relu_backward(g, trace.head_mid);
    g = conv1x1_backward(g, h1, head1, tape.head1);
    Tensor2DT<S> g_skip = relu_backward(g, trace.skip_sum);

    // Classifier head feeds the same skip sum.
    if (grad_frame_logits && config.classifier) {
        const Tensor2DT<S> r = relu(trace.cls_mid);
        Tensor2DT<S> gc = conv_same_backward(*grad_frame_logits, r, cls2, tape.cls2);
        gc = relu_backward(gc, trace.cls_mid);
        gc = conv_same_backward(gc, trace.cls_pooled, cls1, tape.cls1);
        add_inplace(g_skip, mean_pool_backward(gc, config.classifier->pool_factor, To));
    }

    Tensor2DT<S> global_rows;
    if (config.global_dim > 0) global_rows = broadcast_rows(*trace.cond.global_vec, To);

    std::vector<Tensor2DT<S>> g_ctx;
    for (const auto& s : config.context_stacks) g_ctx.emplace_back(To, s.channels);
    Tensor2DT<S> g_local;
    if (config.local_dim > 0) g_local = Tensor2DT<S>(To, config.local_dim);

    // Residual blocks in reverse. The final block output feeds nothing, so
    // its gradient starts at zero; every block passes the identity term up.
    Tensor2DT<S> gx(To, config.residual_channels);
    for (std::size_t li = layers.size(); li-- > 0;) {
        const auto& layer = layers[li];
        const auto& tr = trace.layers[li];
        Tensor2DT<S> g_z = conv1x1_backward(g_skip, tr.gated, layer.skip, tape.layers[li].skip);
        add_inplace(g_z, conv1x1_backward(gx, tr.gated, layer.residual, tape.layers[li].residual));
        auto [gf, gg] = gated_activation_backward(g_z, tr.filter_pre, tr.gate_pre);
        if (config.global_dim > 0) {
            conv1x1_backward(gf, global_rows, layer.global_filter, tape.layers[li].global_filter);
            conv1x1_backward(gg, global_rows, layer.global_gate, tape.layers[li].global_gate);
        }
        if (config.local_dim > 0) {
            add_inplace(g_local, conv1x1_backward(gf, trace.local_upsampled, layer.local_filter,
                                                  tape.layers[li].local_filter));
            add_inplace(g_local, conv1x1_backward(gg, trace.local_upsampled, layer.local_gate,
                                                  tape.layers[li].local_gate));
        }
        for (std::size_t s = 0; s < g_ctx.size(); ++s) {
            add_inplace(g_ctx[s], conv1x1_backward(gf, trace.context[s].cond_window,
                                                   layer.ctx_filter[s], tape.layers[li].ctx_filter[s]));
            add_inplace(g_ctx[s], conv1x1_backward(gg, trace.context[s].cond_window,
                                                   layer.ctx_gate[s], tape.layers[li].ctx_gate[s]));
        }
        add_inplace(gx, causal_conv_backward(gf, tr.input, layer.filter, tape.layers[li].filter));
        add_inplace(gx, causal_conv_backward(gg, tr.input, layer.gate, tape.layers[li].gate));
    }
    embed_backward(gx, trace.classes, crop, input_embed, tape.input_embed);

    if (config.local_dim > 0 && config.local_upsample_mode == LocalUpsampleMode::transposed) {
        Tensor2DT<S> g_full(T, config.local_dim);
        std::copy(g_local.data.begin(), g_local.data.end(),
                  g_full.data.begin() + static_cast<std::size_t>(crop) * config.local_dim);
        upsample_transposed_backward(g_full, *trace.cond.local_series, upsample,
                                     config.local_upsample_factor, tape.upsample);
    }

    for (std::size_t s = 0; s < context_stacks.size(); ++s) {
        const auto& scfg = config.context_stacks[s];
        const auto& stack = context_stacks[s];
        const auto& str = trace.context[s];
        const int frames = T / scfg.pool_factor;
        Tensor2DT<S> g_pooled(frames, scfg.channels);
        for (int i = 0; i < To; ++i) {
            const int frame = (crop + i) / scfg.pool_factor - 1;
            if (frame < 0 || frame >= frames) continue;
            auto dst = g_pooled.row(frame);
            const auto src = g_ctx[s].row(i);
            for (int c = 0; c < scfg.channels; ++c) dst[c] += src[c];
        }
        Tensor2DT<S> gxs = mean_pool_backward(g_pooled, scfg.pool_factor, T);
        for (std::size_t li = stack.filter.size(); li-- > 0;) {
            const auto& tr = str.layers[li];
            Tensor2DT<S> g_z = conv1x1_backward(gxs, tr.gated, stack.residual[li],
                                                tape.context_stacks[s].residual[li]);
            auto [gf, gg] = gated_activation_backward(g_z, tr.filter_pre, tr.gate_pre);
            add_inplace(gxs, causal_conv_backward(gf, tr.input, stack.filter[li],
                                                  tape.context_stacks[s].filter[li]));
            add_inplace(gxs, causal_conv_backward(gg, tr.input, stack.gate[li],
                                                  tape.context_stacks[s].gate[li]));
        }
        embed_backward(gxs, trace.classes, 0, stack.embed, tape.context_stacks[s].embed);
    }
}

template class WaveNetModelT<float>;
template class WaveNetModelT<double>;
template WaveNetModelT<double> WaveNetModelT<float>::cast<double>() const;
template WaveNetModelT<float> WaveNetModelT<double>::cast<float>() const;
template WaveNetModelT<float> WaveNetModelT<float>::cast<float>() const;

} // namespace wavenet
