#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "wavenet/codec.hpp"

namespace wavenet {

enum class SynthKind { sine, sine_mixture, square, markov_noise };

/// Desk-scale substitute for a real corpus. Pure function of its fields.
/// frequency_hz is ignored by markov_noise, whose output is a per-sample
/// 4-level chain; seed only matters for markov_noise.
struct SyntheticSpec {
    SynthKind kind = SynthKind::sine;
    double frequency_hz = 440.0;
    double amplitude = 0.5;
    double duration_s = 1.0;
    std::uint64_t seed = 0;
    int sample_rate_hz = 16000;
};

/// Reads a RIFF/WAVE file holding 16-bit mono linear PCM; anything else is
/// rejected with a FormatError naming the offending field. Samples map to
/// [-1, 1] by division by 32768.
ContinuousWaveform read_wav(const std::string& path);

/// Writes 16-bit mono PCM. Samples are scaled by 32768 and rounded half away
/// from zero, clamped to the int16 range.
void write_wav(const ContinuousWaveform& w, const std::string& path);

ContinuousWaveform synth(const SyntheticSpec& spec);

/// The transition matrix behind markov_noise: 4 states, each staying put
/// with probability 0.7 and moving to any other state with 0.1. Doubly
/// stochastic, so the stationary distribution is uniform.
const std::array<std::array<double, 4>, 4>& markov_noise_transitions();

/// Amplitude level emitted by each state, before the amplitude scale.
const std::array<double, 4>& markov_noise_levels();

/// Entropy rate of the chain in nats per sample.
double markov_noise_entropy_rate();

} // namespace wavenet
