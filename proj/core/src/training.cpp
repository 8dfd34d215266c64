#include "wavenet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "wavenet/checkpoint.hpp"

namespace wavenet {

using nlohmann::json;

ConditioningInput conditioning_for(const TrainingClip& clip, const ModelConfig& config) {
    ConditioningInput cond;
    if (config.global_dim > 0) {
        if (!clip.global_class) throw DataError("clip lacks the global class the model expects");
        const int c = *clip.global_class;
        if (c < 0 || c >= config.global_dim) {
            throw DataError("global class " + std::to_string(c) + " out of range [0, " +
                            std::to_string(config.global_dim - 1) + ")");
        }
        std::vector<float> onehot(static_cast<std::size_t>(config.global_dim), 0.0f);
        onehot[static_cast<std::size_t>(c)] = 1.0f;
        cond.global_vec = std::move(onehot);
    }
    if (config.local_dim > 0) {
        if (!clip.local_features) throw DataError("clip lacks the local features the model expects");
        cond.local_series = *clip.local_features;
    }
    return cond;
}

double nll_loss(const Tensor2D& logits, std::span<const int> targets) {
    return static_cast<double>(softmax_xent(logits, targets, {}).loss);
}

double dual_loss(double next_sample_nll, double frame_xent, double weight) {
    if (weight < 0.0 || weight > 1.0) {
        throw ConfigError("classifier loss weight must lie in [0, 1], got " + std::to_string(weight));
    }
    return (1.0 - weight) * next_sample_nll + weight * frame_xent;
}

namespace {

template <typename S>
struct SegmentLoss {
    double total = 0.0;
    double nll = 0.0;
    double frame_xent = 0.0;
    Tensor2DT<S> grad_logits;
    Tensor2DT<S> grad_frames;
    bool has_frames = false;
};

/// Teacher-forced dual loss over one segment: every logit row is scored
/// against the next input sample; frame logits (when weighted) against the
/// per-frame labels. Gradients come back pre-scaled by the loss weights.
template <typename S>
SegmentLoss<S> segment_loss(const WaveNetModelT<S>& model, std::span<const int> classes,
                            const ConditioningInputT<S>& cond, std::span<const int> frame_labels,
                            double weight, ForwardTraceT<S>* trace) {
    ForwardResultT<S> fwd = model.forward(classes, cond, trace);
    const int To = fwd.logits.timesteps;
    const int T = static_cast<int>(classes.size());

    std::vector<int> targets(static_cast<std::size_t>(To), 0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(To), 1);
    for (int i = 0; i < To; ++i) {
        const int next = fwd.crop + i + 1;
        if (next < T) {
            targets[static_cast<std::size_t>(i)] = classes[static_cast<std::size_t>(next)];
        } else {
            mask[static_cast<std::size_t>(i)] = 0;
        }
    }
    XentResult<S> xr = softmax_xent(fwd.logits, targets, mask);
    if (xr.counted == 0) throw DataError("segment has no scored positions; lengthen it");

    SegmentLoss<S> out;
    out.nll = static_cast<double>(xr.loss);
    out.grad_logits = std::move(xr.grad_logits);
    const S gen_scale = static_cast<S>(1.0 - weight);
    for (auto& g : out.grad_logits.data) g *= gen_scale;

    if (weight > 0.0 && model.config.classifier) {
        const int frames = fwd.frame_logits.timesteps;
        if (frames > 0) {
            if (static_cast<int>(frame_labels.size()) < frames) {
                throw DataError("segment spans " + std::to_string(frames) + " frames but only " +
                                std::to_string(frame_labels.size()) + " labels are available");
            }
            XentResult<S> fr = softmax_xent(fwd.frame_logits, frame_labels.first(frames), {});
            out.frame_xent = static_cast<double>(fr.loss);
            out.grad_frames = std::move(fr.grad_logits);
            const S cls_scale = static_cast<S>(weight);
            for (auto& g : out.grad_frames.data) g *= cls_scale;
            out.has_frames = true;
        }
    }
    out.total = dual_loss(out.nll, out.frame_xent, weight);
    return out;
}

template <typename S>
double parameter_norm(const WaveNetModelT<S>& model) {
    double sq = 0.0;
    visit_kernel_fields(model, model.config, [&](const std::string&, const ConvKernelT<S>& k) {
        for (S w : k.weights) sq += static_cast<double>(w) * w;
        for (S b : k.bias) sq += static_cast<double>(b) * b;
    });
    return std::sqrt(sq);
}

ConditioningInput slice_conditioning(const ConditioningInput& cond, const ModelConfig& cfg,
                                     int offset, int length) {
    ConditioningInput out;
    out.global_vec = cond.global_vec;
    if (cfg.local_dim > 0) {
        const int f = cfg.local_upsample_factor;
        const int begin = offset / f;
        const int count = length / f;
        Tensor2D slice(count, cfg.local_dim);
        std::copy(cond.local_series->data.begin() + static_cast<std::size_t>(begin) * cfg.local_dim,
                  cond.local_series->data.begin() +
                      static_cast<std::size_t>(begin + count) * cfg.local_dim,
                  slice.data.begin());
        out.local_series = std::move(slice);
    }
    return out;
}

} // namespace

void adam_update(WaveNetModel& model, const GradientTape& tape, AdamState& state,
                 const TrainConfig& config) {
    std::vector<ConvKernel*> kernels;
    visit_kernel_fields(model, model.config,
                        [&](const std::string&, ConvKernel& k) { kernels.push_back(&k); });
    std::vector<const KernelGrad*> grads;
    visit_kernel_fields(tape, model.config,
                        [&](const std::string&, const KernelGrad& g) { grads.push_back(&g); });
    std::vector<KernelGrad*> ms, vs;
    visit_kernel_fields(state.m, model.config,
                        [&](const std::string&, KernelGrad& g) { ms.push_back(&g); });
    visit_kernel_fields(state.v, model.config,
                        [&](const std::string&, KernelGrad& g) { vs.push_back(&g); });
    if (grads.size() != kernels.size() || ms.size() != kernels.size() || vs.size() != kernels.size()) {
        throw StateError("optimizer state does not mirror the model's kernels");
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.step));
    auto update = [&](std::vector<float>& params, const std::vector<float>& grad,
                      std::vector<float>& m, std::vector<float>& v) {
        if (grad.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
            throw StateError("optimizer state shape drifted from the parameters");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad[i];
            const double mi = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * g;
            const double vi = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            params[i] -= static_cast<float>(config.learning_rate * (mi / bc1) /
                                            (std::sqrt(vi / bc2) + config.adam_eps));
        }
    };
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        update(kernels[i]->weights, grads[i]->weights, ms[i]->weights, vs[i]->weights);
        update(kernels[i]->bias, grads[i]->bias, ms[i]->bias, vs[i]->bias);
    }
}

double evaluate_nll(const WaveNetModel& model, const Dataset& clips) {
    if (clips.empty()) throw DataError("cannot evaluate on an empty clip set");
    double loss_sum = 0.0;
    long counted = 0;
    for (const auto& clip : clips) {
        const ConditioningInput cond = conditioning_for(clip, model.config);
        const auto sl = segment_loss<float>(model, clip.audio.classes, cond, clip.frame_labels, 0.0,
                                            nullptr);
        // Every logit row except the last has a next-sample target.
        const int scored =
            static_cast<int>(clip.audio.classes.size()) - context_crop(model.config) - 1;
        loss_sum += sl.nll * scored;
        counted += scored;
    }
    return loss_sum / static_cast<double>(counted);
}

double evaluate_frame_accuracy(const WaveNetModel& model, const Dataset& clips) {
    if (!model.config.classifier) throw ConfigError("model has no classifier head to evaluate");
    long correct = 0, total = 0;
    for (const auto& clip : clips) {
        const ConditioningInput cond = conditioning_for(clip, model.config);
        const ForwardResultT<float> fwd = model.forward(clip.audio.classes, cond);
        const int frames = fwd.frame_logits.timesteps;
        if (static_cast<int>(clip.frame_labels.size()) < frames) {
            throw DataError("clip provides fewer frame labels than frames");
        }
        for (int j = 0; j < frames; ++j) {
            const auto row = fwd.frame_logits.row(j);
            const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            correct += pred == clip.frame_labels[static_cast<std::size_t>(j)] ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) throw DataError("no frames to evaluate");
    return static_cast<double>(correct) / static_cast<double>(total);
}

TrainReport train(WaveNetModel& model, const Dataset& dataset, const TrainConfig& config,
                  const std::string& report_path, const std::string& checkpoint_path) {
    const ModelConfig& mc = model.config;
    if (config.max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (config.batch_segments < 1) throw ConfigError("batch_segments must be >= 1");
    if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
        throw ConfigError("learning_rate must be finite and >= 0");
    }
    dual_loss(0.0, 0.0, config.classifier_loss_weight); // range check
    if (config.validation_fraction < 0.0 || config.validation_fraction >= 1.0) {
        throw ConfigError("validation_fraction must lie in [0, 1)");
    }
    if (config.val_interval_steps < 1) throw ConfigError("val_interval_steps must be >= 1");
    if (config.classifier_loss_weight > 0.0 && !mc.classifier) {
        throw ConfigError("classifier_loss_weight > 0 but the model has no classifier head");
    }
    const int rf = receptive_field(mc);
    const int crop = context_crop(mc);
    if (config.segment_length < rf) {
        throw ConfigError("segment_length " + std::to_string(config.segment_length) +
                          " does not cover the receptive field " + std::to_string(rf));
    }
    if (config.segment_length < crop + 2) {
        throw ConfigError("segment_length must exceed the context warm-up of " + std::to_string(crop));
    }
    const bool train_classifier = config.classifier_loss_weight > 0.0 && mc.classifier.has_value();
    if (train_classifier && !mc.context_stacks.empty()) {
        throw ConfigError("classifier training combined with context stacks is unsupported "
                          "(frame labels cannot be aligned across the warm-up crop)");
    }
    int align = 1;
    if (mc.local_dim > 0) align = std::lcm(align, mc.local_upsample_factor);
    if (train_classifier) align = std::lcm(align, mc.classifier->pool_factor);
    if (config.segment_length % align != 0) {
        throw ConfigError("segment_length must be a multiple of " + std::to_string(align) +
                          " to stay aligned with conditioning and pooling");
    }
    if (dataset.empty()) throw DataError("training dataset is empty");
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& clip = dataset[i];
        const int len = static_cast<int>(clip.audio.classes.size());
        if (len < config.segment_length) {
            throw DataError("clip " + std::to_string(i) + " has " + std::to_string(len) +
                            " samples, shorter than segment_length " +
                            std::to_string(config.segment_length));
        }
        if (mc.local_dim > 0) {
            if (!clip.local_features ||
                clip.local_features->timesteps * mc.local_upsample_factor != len) {
                throw DataError("clip " + std::to_string(i) +
                                " local features do not cover the audio after upsampling");
            }
        }
        if (train_classifier) {
            const int frames = len / mc.classifier->pool_factor;
            if (static_cast<int>(clip.frame_labels.size()) < frames) {
                throw DataError("clip " + std::to_string(i) + " needs " + std::to_string(frames) +
                                " frame labels, has " + std::to_string(clip.frame_labels.size()));
            }
        }
    }

    // Hold out whole clips for validation, never segments of shared clips.
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> train_idx, val_idx;
    if (config.validation_fraction > 0.0) {
        if (dataset.size() < 2) {
            throw ConfigError("validation_fraction > 0 needs at least two clips");
        }
        Rng split_rng(derive_seed(config.seed, 17));
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(split_rng.next_below(i));
            std::swap(order[i - 1], order[j]);
        }
        auto n_val = static_cast<std::size_t>(config.validation_fraction *
                                              static_cast<double>(dataset.size()));
        n_val = std::clamp<std::size_t>(n_val, 1, dataset.size() - 1);
        val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
        train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    } else {
        train_idx = order;
    }
    Dataset val_clips;
    for (std::size_t i : val_idx) val_clips.push_back(dataset[i]);

    std::vector<ConditioningInput> conds;
    conds.reserve(dataset.size());
    for (const auto& clip : dataset) conds.push_back(conditioning_for(clip, mc));

    std::ofstream report_file;
    if (!report_path.empty()) {
        report_file.open(report_path, std::ios::trunc);
        if (!report_file) throw IoError("cannot open report file " + report_path);
    }

    Rng rng(derive_seed(config.seed, 1));
    GradientTape tape(model);
    AdamState adam(model);
    ForwardTraceT<float> trace;
    TrainReport report;

    for (int step = 1; step <= config.max_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        tape.zero();
        double loss_sum = 0.0;
        for (int b = 0; b < config.batch_segments; ++b) {
            const std::size_t ci = train_idx[rng.next_below(train_idx.size())];
            const auto& clip = dataset[ci];
            const int len = static_cast<int>(clip.audio.classes.size());
            const int max_off = len - config.segment_length;
            int off = max_off > 0 ? static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_off) + 1)) : 0;
            off -= off % align;

            const std::span<const int> segment(clip.audio.classes.data() + off,
                                               static_cast<std::size_t>(config.segment_length));
            const ConditioningInput scond =
                slice_conditioning(conds[ci], mc, off, config.segment_length);
            std::span<const int> labels;
            if (train_classifier) {
                const int first_frame = off / mc.classifier->pool_factor;
                labels = std::span<const int>(clip.frame_labels.data() + first_frame,
                                              clip.frame_labels.size() -
                                                  static_cast<std::size_t>(first_frame));
            }
            auto sl = segment_loss<float>(model, segment, scond, labels,
                                          config.classifier_loss_weight, &trace);
            const float inv_batch = 1.0f / static_cast<float>(config.batch_segments);
            for (auto& g : sl.grad_logits.data) g *= inv_batch;
            for (auto& g : sl.grad_frames.data) g *= inv_batch;
            model.backward(trace, sl.grad_logits, sl.has_frames ? &sl.grad_frames : nullptr, tape);
            loss_sum += sl.total;
        }
        const double loss = loss_sum / config.batch_segments;
        if (!std::isfinite(loss)) {
            throw StateError("training aborted at step " + std::to_string(step) +
                             ": non-finite loss (parameter L2 norm " +
                             std::to_string(parameter_norm(model)) + ")");
        }
        adam_update(model, tape, adam, config);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        TrainStepRecord rec;
        rec.step = step;
        rec.loss = loss;
        rec.seconds = seconds;
        if (!val_clips.empty() &&
            (step % config.val_interval_steps == 0 || step == config.max_steps)) {
            rec.val_loss = evaluate_nll(model, val_clips);
        }
        if (report_file) {
            json line;
            line["step"] = rec.step;
            line["loss"] = rec.loss;
            if (rec.val_loss) line["val_loss"] = *rec.val_loss;
            line["seconds"] = rec.seconds;
            report_file << line.dump() << '\n';
        }
        report.steps.push_back(std::move(rec));
    }

    if (!model.parameters_finite()) {
        throw StateError("training finished with non-finite parameters");
    }
    if (!checkpoint_path.empty()) {
        save_checkpoint(model, checkpoint_path);
        report.checkpoint_path = checkpoint_path;
    }
    if (!report.steps.empty()) {
        report.final_loss = report.steps.back().loss;
        for (auto it = report.steps.rbegin(); it != report.steps.rend(); ++it) {
            if (it->val_loss) {
                report.final_val_loss = it->val_loss;
                break;
            }
        }
    }
    return report;
}

GradCheckReport gradient_check(const WaveNetModel& source, const TrainingClip& clip,
                               double classifier_weight) {
    WaveNetModelT<double> model = source.cast<double>();
    const ConditioningInputT<double> cond =
        conditioning_for(clip, source.config).cast<double>();
    const std::span<const int> classes(clip.audio.classes);
    const std::span<const int> labels(clip.frame_labels);

    ForwardTraceT<double> trace;
    auto sl = segment_loss<double>(model, classes, cond, labels, classifier_weight, &trace);
    GradientTapeT<double> tape(model);
    model.backward(trace, sl.grad_logits, sl.has_frames ? &sl.grad_frames : nullptr, tape);

    const auto loss_at = [&]() {
        return segment_loss<double>(model, classes, cond, labels, classifier_weight, nullptr).total;
    };

    std::vector<std::string> names;
    std::vector<ConvKernelT<double>*> kernels;
    visit_kernel_fields(model, model.config, [&](const std::string& n, ConvKernelT<double>& k) {
        names.push_back(n);
        kernels.push_back(&k);
    });
    std::vector<const KernelGradT<double>*> grads;
    visit_kernel_fields(tape, model.config, [&](const std::string&, const KernelGradT<double>& g) {
        grads.push_back(&g);
    });

    GradCheckReport report;
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        double diff_sq = 0.0, analytic_sq = 0.0, fd_sq = 0.0;
        auto probe = [&](std::vector<double>& params, const std::vector<double>& analytic) {
            for (std::size_t j = 0; j < params.size(); ++j) {
                const double theta = params[j];
                const double h = 1e-6 * std::max(1.0, std::abs(theta));
                params[j] = theta + h;
                const double lp = loss_at();
                params[j] = theta - h;
                const double lm = loss_at();
                params[j] = theta;
                const double fd = (lp - lm) / (2.0 * h);
                const double a = analytic[j];
                diff_sq += (a - fd) * (a - fd);
                analytic_sq += a * a;
                fd_sq += fd * fd;
            }
        };
        probe(kernels[i]->weights, grads[i]->weights);
        probe(kernels[i]->bias, grads[i]->bias);
        const double rel = std::sqrt(diff_sq) /
                           std::max({std::sqrt(analytic_sq), std::sqrt(fd_sq), 1e-8});
        report.groups.push_back({names[i], rel});
        report.max_rel_error = std::max(report.max_rel_error, rel);
    }
    return report;
}

} // namespace wavenet
