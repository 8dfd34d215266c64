// Acceptance gate: each numbered check prints one PASS/FAIL line with its
// wall-clock time and a short measurement note. Run with no arguments for the
// full gate, or pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "wavenet/audio_io.hpp"
#include "wavenet/checkpoint.hpp"
#include "wavenet/codec.hpp"
#include "wavenet/model.hpp"
#include "wavenet/rng.hpp"
#include "wavenet/sampler.hpp"
#include "wavenet/tensor_ops.hpp"
#include "wavenet/training.hpp"

using namespace wavenet;
using testutil::dominant_bin;
using testutil::random_classes;
using testutil::TempDir;

namespace {

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), pattern, v);
    return buf;
}

ModelConfig plain_config(int num_classes, int channels, std::vector<int> dils, int fw = 2) {
    ModelConfig cfg;
    cfg.num_classes = num_classes;
    cfg.residual_channels = channels;
    cfg.skip_channels = channels;
    cfg.filter_width = fw;
    cfg.dilation_schedule = std::move(dils);
    cfg.validate();
    return cfg;
}

TrainingClip synth_clip(SynthKind kind, double freq, double seconds, int num_classes,
                        std::uint64_t seed = 0) {
    SyntheticSpec spec;
    spec.kind = kind;
    spec.frequency_hz = freq;
    spec.duration_s = seconds;
    spec.seed = seed;
    TrainingClip clip;
    clip.audio = quantize(synth(spec), CompandingParams{255, num_classes});
    return clip;
}

// --- 1: causality ------------------------------------------------------------

bool check_causality(std::string& note) {
    Rng rng(1001);
    std::vector<ModelConfig> configs;
    configs.push_back(plain_config(8, 4, {1, 2, 4}));
    configs.push_back(plain_config(6, 3, {1, 2, 1, 2}, 3));
    {
        ModelConfig cfg = plain_config(8, 4, {1, 2});
        cfg.global_dim = 2;
        configs.push_back(cfg);
    }
    {
        ModelConfig cfg = plain_config(8, 4, {2, 4});
        ContextStackConfig stack;
        stack.dilation_schedule = {1, 2};
        stack.channels = 3;
        stack.pool_factor = 4;
        cfg.context_stacks.push_back(stack);
        cfg.validate();
        configs.push_back(cfg);
    }
    configs.push_back(plain_config(4, 2, {1, 1, 1, 1}));

    int triples = 0;
    for (std::size_t ci = 0; ci < configs.size(); ++ci) {
        const ModelConfig& cfg = configs[ci];
        WaveNetModel model(cfg, 2000 + ci);
        model.randomize_parameters(3000 + ci);
        ConditioningInput cond;
        if (cfg.global_dim > 0) {
            std::vector<float> onehot(static_cast<std::size_t>(cfg.global_dim), 0.0f);
            onehot[0] = 1.0f;
            cond.global_vec = onehot;
        }
        const int crop = context_crop(cfg);
        for (int trial = 0; trial < 10; ++trial) {
            const int T = crop + 16 + static_cast<int>(rng.next_below(16));
            std::vector<int> classes = random_classes(T, cfg.num_classes, rng);
            const ForwardResultT<float> base = model.forward(classes, cond);
            const int t =
                crop + 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(T - crop - 1)));
            const int p = t + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(T - t)));
            classes[static_cast<std::size_t>(p)] =
                (classes[static_cast<std::size_t>(p)] + 1) % cfg.num_classes;
            const ForwardResultT<float> moved = model.forward(classes, cond);
            for (int u = crop; u < t; ++u) {
                for (int c = 0; c < cfg.num_classes; ++c) {
                    if (moved.logits.at(u - crop, c) != base.logits.at(u - crop, c)) {
                        note = "logit changed before t at config " + std::to_string(ci);
                        return false;
                    }
                }
            }
            ++triples;
        }
    }
    note = std::to_string(triples) + " perturbation triples bit-identical";
    return triples == 50;
}

// --- 2: receptive field -------------------------------------------------------

bool probe_tightness(const ModelConfig& cfg, std::uint64_t seed) {
    WaveNetModel seed_model(cfg, seed);
    seed_model.randomize_parameters(seed + 1);
    const WaveNetModelT<double> model = seed_model.cast<double>();
    const int rf = receptive_field(cfg);
    const int T = rf + 3;
    Rng rng(seed + 2);
    std::vector<int> base = random_classes(T, cfg.num_classes, rng);
    const auto newest = [&](const std::vector<int>& cls) {
        const auto out = model.forward(cls, {});
        const auto row = out.logits.row(out.logits.timesteps - 1);
        return std::vector<double>(row.begin(), row.end());
    };
    const std::vector<double> baseline = newest(base);
    const auto moves = [&](int pos) {
        std::vector<int> mod = base;
        mod[static_cast<std::size_t>(pos)] =
            (mod[static_cast<std::size_t>(pos)] + 1) % cfg.num_classes;
        return newest(mod) != baseline;
    };
    return moves(T - 1 - (rf - 1)) && !moves(T - 1 - rf);
}

bool check_receptive_field(std::string& note) {
    const ModelConfig undilated = plain_config(4, 2, {1, 1, 1, 1});
    if (receptive_field(undilated) != 5) {
        note = "undilated four-layer field is " + std::to_string(receptive_field(undilated));
        return false;
    }
    const ModelConfig block = plain_config(4, 2, {1, 2, 4, 8, 16, 32, 64, 128, 256, 512});
    if (receptive_field(block) != 1024) {
        note = "dilation block field is " + std::to_string(receptive_field(block));
        return false;
    }
    Rng rng(1002);
    for (int trial = 0; trial < 3; ++trial) {
        ModelConfig cfg;
        cfg.num_classes = 4;
        cfg.residual_channels = 3;
        cfg.skip_channels = 3;
        const int n_layers = 2 + static_cast<int>(rng.next_below(3));
        for (int i = 0; i < n_layers; ++i) {
            cfg.dilation_schedule.push_back(1 << rng.next_below(5));
        }
        cfg.filter_width = 2 + static_cast<int>(rng.next_below(2));
        if (receptive_field(cfg) <= cfg.filter_width) cfg.dilation_schedule.push_back(16);
        cfg.validate();
        if (!probe_tightness(cfg, 4000 + static_cast<std::uint64_t>(trial) * 10)) {
            note = "perturbation probe disagreed on random config " + std::to_string(trial);
            return false;
        }
    }
    note = "closed form 5 and 1024; 3 random configs probed tight";
    return true;
}

// --- 3: gradients ---------------------------------------------------------------

bool check_gradients(std::string& note) {
    ModelConfig cfg;
    cfg.num_classes = 8;
    cfg.residual_channels = 4;
    cfg.skip_channels = 4;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {1, 2, 1, 2};
    cfg.global_dim = 2;
    cfg.local_dim = 2;
    cfg.local_upsample_factor = 4;
    cfg.local_upsample_mode = LocalUpsampleMode::transposed;
    cfg.classifier = ClassifierConfig{3, 8};
    cfg.validate();

    WaveNetModel model(cfg, 0);
    model.randomize_parameters(1);

    const int T = 32;
    Rng rng(1003);
    TrainingClip clip;
    clip.audio.classes = random_classes(T, cfg.num_classes, rng);
    clip.global_class = 1;
    Tensor2D feats(T / cfg.local_upsample_factor, cfg.local_dim);
    for (auto& v : feats.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    clip.local_features = std::move(feats);
    clip.frame_labels = {0, 1, 2, 1};

    const GradCheckReport report = gradient_check(model, clip, 0.5);
    note = "max relative error " + fmt("%.2e", report.max_rel_error) + " over " +
           std::to_string(report.groups.size()) + " kernel groups";
    return report.max_rel_error < 1e-4;
}

// --- 4: codec -------------------------------------------------------------------

bool check_codec(std::string& note) {
    double sweep_err = 0.0;
    for (int i = 0; i <= 10000; ++i) {
        const double x = -1.0 + 2.0 * i / 10000.0;
        sweep_err = std::max(sweep_err, std::abs(mulaw_expand(mulaw_compand(x)) - x));
    }
    const bool exact = mulaw_compand(0.0) == 0.0 && mulaw_compand(1.0) == 1.0 &&
                       mulaw_compand(-1.0) == -1.0;

    SyntheticSpec spec;
    spec.kind = SynthKind::sine;
    spec.frequency_hz = 440.0;
    spec.amplitude = 1.0;
    spec.duration_s = 1.0;
    const ContinuousWaveform wave = synth(spec);
    const ContinuousWaveform back = dequantize(quantize(wave));
    double quant_err = 0.0;
    for (std::size_t i = 0; i < wave.samples.size(); ++i) {
        quant_err = std::max(
            quant_err, std::abs(static_cast<double>(back.samples[i]) - wave.samples[i]));
    }
    note = "round-trip " + fmt("%.1e", sweep_err) + ", sine quantization " +
           fmt("%.3f", quant_err);
    return sweep_err <= 1e-6 && exact && quant_err < 0.04;
}

// --- 5: sampler ----------------------------------------------------------------

bool check_sampler(std::string& note) {
    ModelConfig cfg = plain_config(8, 8, {1, 2, 4, 8});
    WaveNetModel model(cfg, 5000);
    model.randomize_parameters(5001);

    Rng rng(1004);
    const std::vector<int> classes = random_classes(65, cfg.num_classes, rng);
    const ForwardResultT<float> batch = model.forward(classes, {});
    GenerationRequest req;
    req.num_samples = 1;
    SamplerState state = init_state(model, req);
    double max_diff = 0.0;
    for (int u = 0; u < 64; ++u) {
        const std::vector<float> probs =
            sampler_step(model, state, classes[static_cast<std::size_t>(u)]);
        const std::vector<float> want = softmax_row(batch.logits.row(u));
        for (std::size_t c = 0; c < want.size(); ++c) {
            max_diff = std::max(max_diff, std::abs(static_cast<double>(probs[c]) - want[c]));
        }
    }
    if (max_diff > 1e-5) {
        note = "incremental vs batch diverges by " + fmt("%.1e", max_diff);
        return false;
    }

    // Per-step cost must not grow with history length.
    SamplerState timing = init_state(model, req);
    Rng draw(1005);
    int prev = state.silence;
    const auto step_once = [&]() {
        const std::vector<float> probs = sampler_step(model, timing, prev);
        prev = static_cast<int>(draw.categorical(probs));
    };
    using clock = std::chrono::steady_clock;
    const auto window = [&](int from, int upto) {
        const auto t0 = clock::now();
        for (int i = from; i < upto; ++i) step_once();
        return std::chrono::duration<double>(clock::now() - t0).count() / (upto - from);
    };
    window(0, 100);
    const double early = window(100, 600);
    window(600, 9500);
    const double late = window(9500, 10000);
    const double ratio = late / early;
    note = "probs agree to " + fmt("%.1e", max_diff) + "; step time ratio " + fmt("%.2f", ratio);
    return ratio < 2.0 && ratio > 0.5;
}

// --- 6: overfit and regenerate ---------------------------------------------------

ModelConfig audio_model_config() {
    ModelConfig cfg;
    cfg.num_classes = 256;
    cfg.residual_channels = 32;
    cfg.skip_channels = 32;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {1, 2, 4, 8, 16, 32, 64, 1, 2, 4, 8, 16, 32, 64};
    cfg.validate();
    return cfg;
}

bool check_overfit(std::string& note) {
    const ModelConfig cfg = audio_model_config();
    const Dataset data = {synth_clip(SynthKind::sine, 440.0, 2.0, cfg.num_classes)};

    TrainConfig tc;
    tc.segment_length = 512;
    tc.max_steps = 2500;
    tc.seed = 60;

    WaveNetModel model(cfg, tc.seed);
    const TrainReport report = train(model, data, tc, "", "");
    double train_nll = 0.0;
    for (std::size_t i = report.steps.size() - 50; i < report.steps.size(); ++i) {
        train_nll += report.steps[i].loss;
    }
    train_nll /= 50.0;
    if (!(train_nll < 0.5)) {
        note = "training NLL stuck at " + fmt("%.3f", train_nll) + " nats/sample";
        return false;
    }

    GenerationRequest req;
    req.num_samples = 4096;
    req.seed = 61;
    const GenerationResult gen = generate(model, req);
    const ContinuousWaveform wave = dequantize(gen.wave);
    const int bin = dominant_bin(wave.samples);
    const double target = 440.0 * 4096.0 / 16000.0; // 112.64
    note = "train NLL " + fmt("%.3f", train_nll) + ", peak bin " + std::to_string(bin) +
           " (target " + fmt("%.1f", target) + ")";
    return std::abs(bin - target) <= 2.0;
}

// --- 7: conditioning discrimination ----------------------------------------------

bool check_conditioning(std::string& note) {
    ModelConfig cfg = audio_model_config();
    cfg.global_dim = 2;
    cfg.validate();

    TrainingClip low = synth_clip(SynthKind::sine, 440.0, 2.0, cfg.num_classes);
    low.global_class = 0;
    TrainingClip high = synth_clip(SynthKind::sine, 660.0, 2.0, cfg.num_classes);
    high.global_class = 1;
    const Dataset data = {low, high};

    TrainConfig tc;
    tc.segment_length = 512;
    tc.batch_segments = 2;
    // Rollouts drift off pitch with less training even when teacher-forced
    // NLL looks converged; 5000 steps keeps sampled cycles locked.
    tc.max_steps = 5000;
    tc.seed = 70;

    WaveNetModel model(cfg, tc.seed);
    train(model, data, tc, "", "");

    const double tones[2] = {440.0, 660.0};
    int hits[2] = {0, 0};
    for (int cls = 0; cls < 2; ++cls) {
        for (int run = 0; run < 10; ++run) {
            GenerationRequest req;
            req.num_samples = 4096;
            req.seed = 700 + static_cast<std::uint64_t>(10 * cls + run);
            std::vector<float> onehot = {0.0f, 0.0f};
            onehot[static_cast<std::size_t>(cls)] = 1.0f;
            req.conditioning.global_vec = onehot;
            const GenerationResult gen = generate(model, req);
            const int bin = dominant_bin(dequantize(gen.wave).samples);
            const double target = tones[cls] * 4096.0 / 16000.0;
            if (std::abs(bin - target) <= 2.0) hits[cls] += 1;
        }
    }
    note = "matching peaks: class 0 in " + std::to_string(hits[0]) + "/10, class 1 in " +
           std::to_string(hits[1]) + "/10";
    return hits[0] >= 9 && hits[1] >= 9;
}

// --- 8: entropy rate ---------------------------------------------------------------

bool check_entropy(std::string& note) {
    ModelConfig cfg = plain_config(256, 16, {1, 2, 4});
    Dataset data;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        data.push_back(synth_clip(SynthKind::markov_noise, 0.0, 1.0, cfg.num_classes, seed));
    }
    TrainConfig tc;
    tc.segment_length = 256;
    tc.batch_segments = 2;
    tc.max_steps = 1200;
    tc.seed = 80;
    tc.validation_fraction = 0.34; // two of six clips held out
    tc.val_interval_steps = 200;

    WaveNetModel model(cfg, tc.seed);
    const TrainReport report = train(model, data, tc, "", "");
    const double H = markov_noise_entropy_rate();
    const double val = report.final_val_loss.value_or(1e9);
    note = "validation NLL " + fmt("%.4f", val) + " vs source entropy " + fmt("%.4f", H);
    return val >= H - 0.05 && val <= H + 0.3;
}

// --- 9: dual loss ---------------------------------------------------------------------

bool check_dual_loss(std::string& note) {
    ModelConfig cfg;
    cfg.num_classes = 256;
    cfg.residual_channels = 16;
    cfg.skip_channels = 16;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {1, 2, 4, 8, 16, 32};
    cfg.classifier = ClassifierConfig{2, 160};
    cfg.validate();

    TrainingClip low = synth_clip(SynthKind::sine, 440.0, 1.0, cfg.num_classes);
    TrainingClip high = synth_clip(SynthKind::sine, 660.0, 1.0, cfg.num_classes);
    low.frame_labels.assign(low.audio.classes.size() / 160, 0);
    high.frame_labels.assign(high.audio.classes.size() / 160, 1);
    const Dataset data = {low, high};

    TrainConfig tc;
    tc.segment_length = 320;
    tc.batch_segments = 2;
    tc.max_steps = 800;
    tc.seed = 90;
    tc.classifier_loss_weight = 0.5;

    WaveNetModel model(cfg, tc.seed);
    const double nll_before = evaluate_nll(model, data);
    train(model, data, tc, "", "");
    const double nll_after = evaluate_nll(model, data);
    const double acc = evaluate_frame_accuracy(model, data);
    note = "frame accuracy " + fmt("%.1f", 100.0 * acc) + "%, generative NLL " +
           fmt("%.3f", nll_before) + " -> " + fmt("%.3f", nll_after);
    return acc > 0.95 && nll_after < nll_before;
}

// --- 10: determinism and persistence ---------------------------------------------------

bool check_determinism(std::string& note) {
    TempDir dir;
    const ModelConfig cfg = plain_config(16, 4, {1, 2, 4});
    const Dataset data = {synth_clip(SynthKind::sine, 440.0, 0.05, cfg.num_classes)};
    TrainConfig tc;
    tc.segment_length = 64;
    tc.max_steps = 25;
    tc.seed = 100;

    WaveNetModel a(cfg, tc.seed);
    const TrainReport ra = train(a, data, tc, "", dir.file("a.ckpt"));
    WaveNetModel b(cfg, tc.seed);
    const TrainReport rb = train(b, data, tc, "", dir.file("b.ckpt"));
    if (ra.final_loss != rb.final_loss) {
        note = "same-seed losses differ";
        return false;
    }
    if (testutil::read_bytes(dir.file("a.ckpt")) != testutil::read_bytes(dir.file("b.ckpt"))) {
        note = "same-seed checkpoints differ";
        return false;
    }

    GenerationRequest req;
    req.num_samples = 400;
    req.seed = 101;
    const GenerationResult g1 = generate(a, req);
    const GenerationResult g2 = generate(a, req);
    if (g1.wave.classes != g2.wave.classes || g1.mean_nll != g2.mean_nll) {
        note = "same-seed generations differ";
        return false;
    }

    const WaveNetModel restored = load_checkpoint(dir.file("a.ckpt"));
    Rng rng(1006);
    const std::vector<int> probe = random_classes(40, cfg.num_classes, rng);
    const auto fa = a.forward(probe, {});
    const auto fb = restored.forward(probe, {});
    if (fa.logits.data != fb.logits.data) {
        note = "restored model's outputs differ";
        return false;
    }
    note = "reruns, checkpoints, generations and restores all bit-identical";
    return true;
}

struct Criterion {
    int id;
    const char* name;
    bool (*fn)(std::string&);
};

const Criterion kCriteria[] = {
    {1, "causality", check_causality},
    {2, "receptive_field", check_receptive_field},
    {3, "gradients", check_gradients},
    {4, "codec", check_codec},
    {5, "sampler", check_sampler},
    {6, "overfit_regenerate", check_overfit},
    {7, "conditioning", check_conditioning},
    {8, "entropy_rate", check_entropy},
    {9, "dual_loss", check_dual_loss},
    {10, "determinism", check_determinism},
};

} // namespace

int main(int argc, char** argv) {
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

    bool all_ok = true;
    for (const Criterion& c : kCriteria) {
        if (!selected.empty() &&
            std::find(selected.begin(), selected.end(), c.id) == selected.end()) {
            continue;
        }
        std::string note;
        bool ok = false;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            ok = c.fn(note);
        } catch (const std::exception& e) {
            note = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2d %-20s %7.1fs  %s\n", ok ? "PASS" : "FAIL", c.id, c.name, secs,
                    note.c_str());
        std::fflush(stdout);
        all_ok = all_ok && ok;
    }
    return all_ok ? 0 : 1;
}
