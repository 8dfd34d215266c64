#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavenet/codec.hpp"
#include "wavenet/model.hpp"

namespace wavenet {

struct TrainConfig {
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_segments = 1;
    int segment_length = 0; // must cover the receptive field
    int max_steps = 0;
    std::uint64_t seed = 0;
    double classifier_loss_weight = 0.0; // in [0, 1]
    double validation_fraction = 0.0;    // whole clips held out
    int val_interval_steps = 100;
};

struct TrainStepRecord {
    int step = 0;
    double loss = 0.0;
    std::optional<double> val_loss;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<TrainStepRecord> steps;
    std::string checkpoint_path;
    double final_loss = 0.0;
    std::optional<double> final_val_loss;
};

/// One clip of training material: quantized audio plus whatever conditioning
/// and labels the model config calls for.
struct TrainingClip {
    QuantizedWaveform audio;
    std::optional<int> global_class;
    std::optional<Tensor2D> local_features; // control rate
    std::vector<int> frame_labels;          // one per classifier pool frame
};

using Dataset = std::vector<TrainingClip>;

/// Builds the ConditioningInput a clip implies under a config (one-hot
/// global vector, local feature series). Validates ranges.
ConditioningInput conditioning_for(const TrainingClip& clip, const ModelConfig& config);

/// Mean negative log-likelihood in nats per sample. Targets are the input
/// shifted left by one, already aligned with the logit rows.
double nll_loss(const Tensor2D& logits, std::span<const int> targets);

/// (1 - weight) * next_sample_nll + weight * frame_xent.
double dual_loss(double next_sample_nll, double frame_xent, double weight);

struct AdamState {
    GradientTape m;
    GradientTape v;
    std::int64_t step = 0;

    AdamState() = default;
    explicit AdamState(const WaveNetModel& model) : m(model), v(model) {}
};

/// Standard bias-corrected Adam step over every parameter.
void adam_update(WaveNetModel& model, const GradientTape& tape, AdamState& state,
                 const TrainConfig& config);

/// Teacher-forced training. Deterministic under config.seed. Writes one JSON
/// record per step to report_path (empty string disables) and the final model
/// to checkpoint_path (empty string disables). Aborts with StateError when
/// the loss turns non-finite.
TrainReport train(WaveNetModel& model, const Dataset& dataset, const TrainConfig& config,
                  const std::string& report_path, const std::string& checkpoint_path);

/// Mean teacher-forced NLL (nats/sample) over whole clips.
double evaluate_nll(const WaveNetModel& model, const Dataset& clips);

/// Mean frame-classification accuracy over whole clips (classifier models).
double evaluate_frame_accuracy(const WaveNetModel& model, const Dataset& clips);

struct GradCheckGroup {
    std::string name;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_rel_error = 0.0;
};

/// Central finite differences against the analytic tape, evaluated in double
/// on a cast copy of the model. Per kernel the reported number is the
/// L2-norm relative error ||analytic - fd|| / max(||analytic||, ||fd||, 1e-8).
GradCheckReport gradient_check(const WaveNetModel& model, const TrainingClip& clip,
                               double classifier_weight);

} // namespace wavenet
