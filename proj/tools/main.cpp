#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "wavenet/checkpoint.hpp"
#include "wavenet/codec.hpp"
#include "wavenet/errors.hpp"
#include "wavenet/model.hpp"
#include "wavenet/rng.hpp"
#include "wavenet/run_config.hpp"
#include "wavenet/sampler.hpp"
#include "wavenet/training.hpp"

namespace {

using namespace wavenet;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Flags {
    std::string config;
    std::string out;
    std::string checkpoint;
    std::string mode = "sample";
    std::uint64_t seed = 0;
    bool seed_given = false;
    int steps = 0;
    bool steps_given = false;
    int samples = 16000;
    int global_class = -1;
    double temperature = 1.0;
};

int run_train(const Flags& flags) {
    RunConfig rc = load_run_config(flags.config);
    if (flags.seed_given) rc.train.seed = flags.seed;
    if (flags.steps_given) rc.train.max_steps = flags.steps;
    if (!flags.out.empty()) rc.output_dir = flags.out;
    std::filesystem::create_directories(rc.output_dir);

    const Dataset dataset = build_dataset(rc);
    WaveNetModel model(rc.model, rc.train.seed);
    const auto report_path = (std::filesystem::path(rc.output_dir) / "report.jsonl").string();
    const auto ckpt_path = (std::filesystem::path(rc.output_dir) / "model.ckpt").string();
    const TrainReport report = train(model, dataset, rc.train, report_path, ckpt_path);

    std::printf("trained %zu steps, final loss %.6f nats/sample\n", report.steps.size(),
                report.final_loss);
    if (report.final_val_loss) {
        std::printf("validation loss %.6f nats/sample\n", *report.final_val_loss);
    }
    std::printf("checkpoint: %s\nreport: %s\n", ckpt_path.c_str(), report_path.c_str());
    return 0;
}

int run_generate(const Flags& flags) {
    if (flags.checkpoint.empty()) throw ConfigError("generate requires --checkpoint");
    if (flags.out.empty()) throw ConfigError("generate requires --out");
    WaveNetModel model = load_checkpoint(flags.checkpoint);

    GenerationRequest req;
    req.num_samples = flags.samples;
    req.seed = flags.seed;
    req.temperature = flags.temperature;
    if (flags.mode == "sample") {
        req.mode = SamplingMode::sample;
    } else if (flags.mode == "argmax") {
        req.mode = SamplingMode::argmax;
    } else {
        throw ConfigError("--mode must be sample or argmax, got \"" + flags.mode + "\"");
    }
    if (model.config.global_dim > 0) {
        if (flags.global_class < 0) {
            throw ConfigError("checkpoint expects a global class; pass --global-class");
        }
        if (flags.global_class >= model.config.global_dim) {
            throw ConfigError("--global-class " + std::to_string(flags.global_class) +
                              " out of range [0, " + std::to_string(model.config.global_dim) + ")");
        }
        std::vector<float> onehot(static_cast<std::size_t>(model.config.global_dim), 0.0f);
        onehot[static_cast<std::size_t>(flags.global_class)] = 1.0f;
        req.conditioning.global_vec = std::move(onehot);
    } else if (flags.global_class >= 0) {
        throw ConfigError("--global-class given but the checkpointed model is unconditioned");
    }
    if (model.config.local_dim > 0) {
        throw ConfigError("checkpointed model expects local feature series, "
                          "which this command cannot supply");
    }

    const GenerationResult result = generate(model, req);
    const ContinuousWaveform wave =
        dequantize(result.wave, CompandingParams{255, model.config.num_classes});
    write_wav(wave, flags.out);
    std::printf("generated %d samples to %s\n", req.num_samples, flags.out.c_str());
    std::printf("mean NLL %.6f nats/sample\n", result.mean_nll);
    return 0;
}

int run_gradcheck(const Flags& flags) {
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
    model.randomize_parameters(derive_seed(flags.seed, 1));

    const int T = 32;
    Rng rng(derive_seed(flags.seed, 2));
    TrainingClip clip;
    clip.audio.sample_rate_hz = 16000;
    clip.audio.classes.resize(T);
    for (auto& c : clip.audio.classes) {
        c = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.num_classes)));
    }
    clip.global_class = 1;
    Tensor2D feats(T / cfg.local_upsample_factor, cfg.local_dim);
    for (auto& v : feats.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    clip.local_features = std::move(feats);
    clip.frame_labels = {0, 1, 2, 1};

    const GradCheckReport report = gradient_check(model, clip, 0.5);
    for (const auto& g : report.groups) {
        std::printf("  %-28s rel err %.3e\n", g.name.c_str(), g.rel_error);
    }
    const double tol = 1e-4;
    const bool pass = report.max_rel_error < tol;
    std::printf("gradcheck max rel error %.3e (tolerance %.0e): %s\n", report.max_rel_error, tol,
                pass ? "PASS" : "FAIL");
    return pass ? 0 : kExitRuntime;
}

int run_probe_rf(const Flags& flags) {
    ModelConfig cfg;
    if (!flags.config.empty()) {
        cfg = load_run_config(flags.config).model;
    } else {
        cfg.num_classes = 4;
        cfg.residual_channels = 4;
        cfg.skip_channels = 4;
        cfg.filter_width = 2;
        cfg.dilation_schedule = {1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
        cfg.validate();
    }
    const int rf = receptive_field(cfg);
    std::printf("analytic receptive field: %d samples\n", rf);

    WaveNetModel seed_model(cfg, 0);
    seed_model.randomize_parameters(derive_seed(flags.seed, 4));
    // A perturbation crossing many gated layers attenuates below float
    // epsilon; probe in double so the deepest tap chain stays visible.
    const WaveNetModelT<double> model = seed_model.cast<double>();
    const int T = rf + 4;
    Rng rng(derive_seed(flags.seed, 5));
    std::vector<int> base(static_cast<std::size_t>(T));
    for (auto& c : base) {
        c = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.num_classes)));
    }
    const ConditioningInputT<double> none;
    const auto newest_row = [&](const std::vector<int>& cls) {
        const ForwardResultT<double> out = model.forward(cls, none);
        const auto row = out.logits.row(out.logits.timesteps - 1);
        return std::vector<double>(row.begin(), row.end());
    };
    const std::vector<double> baseline = newest_row(base);
    const auto perturb_moves_newest = [&](int pos) {
        std::vector<int> mod = base;
        mod[static_cast<std::size_t>(pos)] =
            (mod[static_cast<std::size_t>(pos)] + 1) % cfg.num_classes;
        const std::vector<double> probed = newest_row(mod);
        for (std::size_t i = 0; i < probed.size(); ++i) {
            if (probed[i] != baseline[i]) return true;
        }
        return false;
    };
    const int newest = T - 1;
    const bool oldest_tap = perturb_moves_newest(newest - (rf - 1));
    const bool beyond = perturb_moves_newest(newest - rf);
    std::printf("perturbation %d samples back reaches the newest logit: %s\n", rf - 1,
                oldest_tap ? "yes" : "no");
    std::printf("perturbation %d samples back reaches the newest logit: %s\n", rf,
                beyond ? "yes" : "no");
    const bool pass = oldest_tap && !beyond;
    std::printf("probed receptive field %s the analytic value: %s\n",
                pass ? "matches" : "contradicts", pass ? "PASS" : "FAIL");
    return pass ? 0 : kExitRuntime;
}

int run_codec_roundtrip(const Flags&) {
    const CompandingParams cp;
    double max_err = 0.0;
    for (int i = 0; i <= 10000; ++i) {
        const double x = -1.0 + 2.0 * i / 10000.0;
        const double back = mulaw_expand(mulaw_compand(x, cp), cp);
        max_err = std::max(max_err, std::abs(back - x));
    }
    std::printf("compand/expand sweep over 10001 points: max error %.3e\n", max_err);
    const bool sweep_ok = max_err <= 1e-6;

    const bool zero_ok = mulaw_compand(0.0, cp) == 0.0;
    const bool unit_ok = mulaw_compand(1.0, cp) == 1.0 && mulaw_compand(-1.0, cp) == -1.0;
    std::printf("f(0) = 0 exact: %s; f(+-1) = +-1 exact: %s\n", zero_ok ? "yes" : "no",
                unit_ok ? "yes" : "no");

    SyntheticSpec spec;
    spec.kind = SynthKind::sine;
    spec.frequency_hz = 440.0;
    spec.amplitude = 1.0;
    spec.duration_s = 1.0;
    const ContinuousWaveform wave = synth(spec);
    const ContinuousWaveform back = dequantize(quantize(wave, cp), cp);
    double q_err = 0.0;
    for (std::size_t i = 0; i < wave.samples.size(); ++i) {
        q_err = std::max(q_err, std::abs(static_cast<double>(back.samples[i]) - wave.samples[i]));
    }
    std::printf("quantize/dequantize on a full-scale sine: max error %.5f\n", q_err);
    const bool q_ok = q_err < 0.04;

    const bool pass = sweep_ok && zero_ok && unit_ok && q_ok;
    std::printf("codec round trip: %s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : kExitRuntime;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Autoregressive waveform model: training, generation and self-checks"};
    app.require_subcommand(1);
    Flags flags;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", flags.seed, "Root RNG seed")
            ->each([&](const std::string&) { flags.seed_given = true; });
    };

    CLI::App* cmd_train = app.add_subcommand("train", "Train a model from a config file");
    cmd_train->add_option("--config", flags.config, "Run config path")
        ->required()
        ->check(CLI::ExistingFile);
    cmd_train->add_option("--steps", flags.steps, "Override train.max_steps")
        ->each([&](const std::string&) { flags.steps_given = true; });
    cmd_train->add_option("--out", flags.out, "Override the output directory");
    add_seed(cmd_train);

    CLI::App* cmd_gen = app.add_subcommand("generate", "Sample audio from a checkpoint");
    cmd_gen->add_option("--checkpoint", flags.checkpoint, "Checkpoint path")->required();
    cmd_gen->add_option("--out", flags.out, "Output WAV path")->required();
    cmd_gen->add_option("--samples", flags.samples, "Number of samples to generate");
    cmd_gen->add_option("--global-class", flags.global_class, "Global conditioning class id");
    cmd_gen->add_option("--temperature", flags.temperature, "Softmax temperature");
    cmd_gen->add_option("--mode", flags.mode, "sample or argmax");
    add_seed(cmd_gen);

    CLI::App* cmd_grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    add_seed(cmd_grad);

    CLI::App* cmd_probe =
        app.add_subcommand("probe-receptive-field", "Verify the receptive field by perturbation");
    cmd_probe->add_option("--config", flags.config, "Probe the model from this run config")
        ->check(CLI::ExistingFile);
    add_seed(cmd_probe);

    app.add_subcommand("codec-roundtrip", "Sweep the companding codec for round-trip error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (app.got_subcommand("train")) return run_train(flags);
        if (app.got_subcommand("generate")) return run_generate(flags);
        if (app.got_subcommand("gradcheck")) return run_gradcheck(flags);
        if (app.got_subcommand("probe-receptive-field")) return run_probe_rf(flags);
        if (app.got_subcommand("codec-roundtrip")) return run_codec_roundtrip(flags);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
