#include "wavenet/codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace wavenet {

namespace {

void check_params(const CompandingParams& p) {
    if (p.mu < 1) throw ConfigError("companding mu must be positive, got " + std::to_string(p.mu));
    if (p.num_classes < 2) throw ConfigError("num_classes must be at least 2, got " + std::to_string(p.num_classes));
}

void check_unit_range(double v, const char* what) {
    if (!(std::abs(v) <= 1.0)) {
        throw DomainError(std::string(what) + " input out of [-1, 1]: " + std::to_string(v));
    }
}

} // namespace

double mulaw_compand(double x, const CompandingParams& params) {
    check_params(params);
    check_unit_range(x, "mulaw_compand");
    const double mu = static_cast<double>(params.mu);
    const double mag = std::log1p(mu * std::abs(x)) / std::log1p(mu);
    return std::copysign(mag, x);
}

double mulaw_expand(double y, const CompandingParams& params) {
    check_params(params);
    check_unit_range(y, "mulaw_expand");
    const double mu = static_cast<double>(params.mu);
    // Pinned at the rail so expand inverts compand(+-1) exactly.
    const double mag = std::abs(y) == 1.0 ? 1.0 : std::expm1(std::abs(y) * std::log1p(mu)) / mu;
    return std::copysign(mag, y);
}

QuantizedWaveform quantize(const ContinuousWaveform& w, const CompandingParams& params) {
    check_params(params);
    QuantizedWaveform q;
    q.sample_rate_hz = w.sample_rate_hz;
    q.classes.reserve(w.samples.size());
    const int top = params.num_classes - 1;
    for (float s : w.samples) {
        const double y = mulaw_compand(static_cast<double>(s), params);
        const int c = static_cast<int>(std::floor((y + 1.0) / 2.0 * params.num_classes));
        q.classes.push_back(std::clamp(c, 0, top));
    }
    return q;
}

ContinuousWaveform dequantize(const QuantizedWaveform& q, const CompandingParams& params) {
    check_params(params);
    ContinuousWaveform w;
    w.sample_rate_hz = q.sample_rate_hz;
    w.samples.reserve(q.classes.size());
    for (int c : q.classes) {
        if (c < 0 || c >= params.num_classes) {
            throw DataError("class index " + std::to_string(c) + " outside [0, " +
                            std::to_string(params.num_classes - 1) + "]");
        }
        const double y = 2.0 * (c + 0.5) / params.num_classes - 1.0;
        w.samples.push_back(static_cast<float>(mulaw_expand(y, params)));
    }
    return w;
}

int silence_class(const CompandingParams& params) {
    check_params(params);
    const int c = static_cast<int>(std::floor(0.5 * params.num_classes));
    return std::clamp(c, 0, params.num_classes - 1);
}

} // namespace wavenet
