#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "wavenet/codec.hpp"
#include "wavenet/model.hpp"
#include "wavenet/rng.hpp"

namespace wavenet {

enum class SamplingMode { sample, argmax };

struct GenerationRequest {
    int num_samples = 0;
    ConditioningInput conditioning;
    double temperature = 1.0;
    SamplingMode mode = SamplingMode::sample;
    std::uint64_t seed = 0;
    std::optional<QuantizedWaveform> primer; // warms the state; not part of the output
    int sample_rate_hz = 16000;              // stamped onto the generated waveform
};

/// Fixed-capacity history of recent rows, read by delay. Slots start zeroed
/// and reads past the beginning of time return zeros: the silence prior.
class RingBuffer {
public:
    RingBuffer() = default;
    RingBuffer(int capacity, int channels)
        : capacity_(capacity), channels_(channels),
          data_(static_cast<std::size_t>(capacity) * channels, 0.0f), zeros_(channels, 0.0f) {}

    void push(std::span<const float> row) {
        std::copy(row.begin(), row.end(),
                  data_.begin() + static_cast<std::size_t>(count_ % capacity_) * channels_);
        ++count_;
    }

    /// Row pushed `delay` steps ago, 1 <= delay <= capacity.
    std::span<const float> read(int delay) const {
        const std::int64_t idx = count_ - delay;
        if (idx < 0) return zeros_;
        return {data_.data() + static_cast<std::size_t>(idx % capacity_) * channels_,
                static_cast<std::size_t>(channels_)};
    }

    int capacity() const { return capacity_; }

private:
    int capacity_ = 0;
    int channels_ = 0;
    std::int64_t count_ = 0;
    std::vector<float> data_;
    std::vector<float> zeros_;
};

/// Mutable cursor of one generation run. Single-threaded; several states may
/// share one immutable model.
struct SamplerState {
    std::int64_t t = 0; // positions processed so far
    Rng rng{0};
    std::vector<RingBuffer> main_buffers; // one per main layer

    struct ContextState {
        std::vector<RingBuffer> buffers; // one per stack layer
        std::vector<float> frame_acc;    // running sum over the open frame
        int in_frame = 0;
        std::vector<float> current;      // last completed pooled frame (zeros before the first)
    };
    std::vector<ContextState> context;

    // Conditioning fixed for the whole run.
    std::vector<std::vector<float>> global_filter_bias; // per layer, V_f^T h + bias
    std::vector<std::vector<float>> global_gate_bias;
    Tensor2D local_upsampled;              // audio rate, full horizon
    std::int64_t horizon = -1;             // max positions when locally conditioned, else -1
    int crop = 0;
    int silence = 0;
};

struct GenerationResult {
    QuantizedWaveform wave;
    double mean_nll = 0.0; // nats/sample of the emitted classes under the model
};

/// Zero-filled buffers (silence prior), conditioning validated and
/// precomputed, then the primer teacher-forced through sampler_step.
SamplerState init_state(const WaveNetModel& model, const GenerationRequest& request);

/// Feeds prev_class as the sample at the state's current position and
/// returns the model's distribution over the next sample, matching the
/// softmax of a batch forward's last logit row over the same history.
/// Positions inside the context warm-up window return one-hot silence.
std::vector<float> sampler_step(const WaveNetModel& model, SamplerState& state, int prev_class);

/// p^(1/temperature), renormalized. Temperature 1 returns the input as-is.
std::vector<float> temperature_scale(std::span<const float> probs, double temperature);

GenerationResult generate(const WaveNetModel& model, const GenerationRequest& request);

} // namespace wavenet
