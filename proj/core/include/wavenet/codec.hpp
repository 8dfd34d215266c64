#pragma once

#include <cstdint>
#include <vector>

#include "wavenet/errors.hpp"

namespace wavenet {

/// Real-valued waveform with amplitudes in [-1, 1].
struct ContinuousWaveform {
    std::vector<float> samples;
    int sample_rate_hz = 0;
};

/// Waveform reduced to the categorical alphabet [0, num_classes).
struct QuantizedWaveform {
    std::vector<int> classes;
    int sample_rate_hz = 0;
};

/// mu-law companding parameters. The default 255/256 pair matches the
/// standard 8-bit companding setup.
struct CompandingParams {
    int mu = 255;
    int num_classes = 256;
};

/// sign(x) * ln(1 + mu*|x|) / ln(1 + mu). Odd, monotone, maps [-1,1] -> [-1,1].
double mulaw_compand(double x, const CompandingParams& params = {});

/// Analytic inverse: sign(y) * ((1 + mu)^|y| - 1) / mu.
double mulaw_expand(double y, const CompandingParams& params = {});

/// Per sample: clamp(floor((compand(x) + 1) / 2 * num_classes), 0, num_classes - 1).
/// Half-open bins with a final clamp, so exactly +1.0 lands in the top class.
QuantizedWaveform quantize(const ContinuousWaveform& w, const CompandingParams& params = {});

/// Bin-center reconstruction: y = 2*(c + 0.5)/num_classes - 1, x = expand(y).
ContinuousWaveform dequantize(const QuantizedWaveform& q, const CompandingParams& params = {});

/// Class index a zero amplitude maps to (the silence prior during generation).
int silence_class(const CompandingParams& params = {});

} // namespace wavenet
