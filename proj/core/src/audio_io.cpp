#include "wavenet/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <vector>

#include "wavenet/rng.hpp"

namespace wavenet {

namespace {

std::uint32_t u32_at(const std::vector<std::uint8_t>& b, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
    return v;
}

std::uint16_t u16_at(const std::vector<std::uint8_t>& b, std::size_t pos) {
    return static_cast<std::uint16_t>(b[pos] | (b[pos + 1] << 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

} // namespace

ContinuousWaveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw FormatError(path + " is not a RIFF/WAVE file");
    }

    bool have_fmt = false;
    std::uint16_t audio_format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    const std::uint8_t* pcm = nullptr;
    std::size_t pcm_bytes = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        char id[5] = {};
        std::memcpy(id, bytes.data() + pos, 4);
        const std::uint32_t size = u32_at(bytes, pos + 4);
        pos += 8;
        if (pos + size > bytes.size()) {
            throw IntegrityError(path + ": chunk '" + id + "' claims " + std::to_string(size) +
                                 " bytes past the end of the file");
        }
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) throw IntegrityError(path + ": fmt chunk shorter than 16 bytes");
            audio_format = u16_at(bytes, pos);
            channels = u16_at(bytes, pos + 2);
            sample_rate = u32_at(bytes, pos + 4);
            bits = u16_at(bytes, pos + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            pcm = bytes.data() + pos;
            pcm_bytes = size;
        }
        pos += size + (size % 2); // chunks are word-aligned
    }

    if (!have_fmt) throw FormatError(path + ": missing fmt chunk");
    if (!pcm) throw FormatError(path + ": missing data chunk");
    if (audio_format != 1) {
        throw FormatError(path + ": audio_format is " + std::to_string(audio_format) +
                          ", only linear PCM (1) is accepted");
    }
    if (channels != 1) {
        throw FormatError(path + ": channels is " + std::to_string(channels) + ", only mono is accepted");
    }
    if (bits != 16) {
        throw FormatError(path + ": bits_per_sample is " + std::to_string(bits) +
                          ", only 16-bit is accepted");
    }

    ContinuousWaveform w;
    w.sample_rate_hz = static_cast<int>(sample_rate);
    w.samples.resize(pcm_bytes / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const std::int16_t v = static_cast<std::int16_t>(pcm[2 * i] | (pcm[2 * i + 1] << 8));
        w.samples[i] = static_cast<float>(v) / 32768.0f;
    }
    return w;
}

void write_wav(const ContinuousWaveform& w, const std::string& path) {
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, 1); // linear PCM
    put_u16(out, 1); // mono
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
    put_u16(out, 2);  // block align
    put_u16(out, 16); // bits per sample
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_bytes);
    for (float s : w.samples) {
        const long scaled = std::lround(static_cast<double>(s) * 32768.0);
        const auto v = static_cast<std::int16_t>(std::clamp<long>(scaled, -32768, 32767));
        put_u16(out, static_cast<std::uint16_t>(v));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing WAV to " + path);
}

namespace {

const std::array<std::array<double, 4>, 4> kMarkovTransitions = {{
    {0.7, 0.1, 0.1, 0.1},
    {0.1, 0.7, 0.1, 0.1},
    {0.1, 0.1, 0.7, 0.1},
    {0.1, 0.1, 0.1, 0.7},
}};

const std::array<double, 4> kMarkovLevels = {-0.5, -0.05, 0.05, 0.5};

void check_frequency(double f, int rate, const char* what) {
    if (f <= 0.0 || f >= rate / 2.0) {
        throw ConfigError(std::string(what) + " frequency " + std::to_string(f) +
                          " Hz aliases at sample rate " + std::to_string(rate));
    }
}

} // namespace

const std::array<std::array<double, 4>, 4>& markov_noise_transitions() { return kMarkovTransitions; }

const std::array<double, 4>& markov_noise_levels() { return kMarkovLevels; }

double markov_noise_entropy_rate() {
    // Uniform stationary distribution, identical row entropies.
    double h = 0.0;
    for (double p : kMarkovTransitions[0]) h -= p * std::log(p);
    return h;
}

ContinuousWaveform synth(const SyntheticSpec& spec) {
    if (spec.sample_rate_hz < 1) throw ConfigError("sample_rate_hz must be >= 1");
    if (spec.amplitude < 0.0 || spec.amplitude > 1.0) {
        throw ConfigError("amplitude must lie in [0, 1], got " + std::to_string(spec.amplitude));
    }
    const long n = std::lround(spec.duration_s * spec.sample_rate_hz);
    if (n < 1) throw ConfigError("duration_s " + std::to_string(spec.duration_s) +
                                 " yields an empty waveform");

    ContinuousWaveform w;
    w.sample_rate_hz = spec.sample_rate_hz;
    w.samples.resize(static_cast<std::size_t>(n));

    switch (spec.kind) {
    case SynthKind::sine: {
        check_frequency(spec.frequency_hz, spec.sample_rate_hz, "sine");
        const double step = 2.0 * std::numbers::pi * spec.frequency_hz / spec.sample_rate_hz;
        for (long t = 0; t < n; ++t) {
            w.samples[static_cast<std::size_t>(t)] =
                static_cast<float>(spec.amplitude * std::sin(step * static_cast<double>(t)));
        }
        break;
    }
    case SynthKind::sine_mixture: {
        // Fundamental plus a 1.5x partial at 60/40 of the amplitude.
        check_frequency(spec.frequency_hz * 1.5, spec.sample_rate_hz, "sine_mixture partial");
        check_frequency(spec.frequency_hz, spec.sample_rate_hz, "sine_mixture");
        const double s1 = 2.0 * std::numbers::pi * spec.frequency_hz / spec.sample_rate_hz;
        const double s2 = s1 * 1.5;
        for (long t = 0; t < n; ++t) {
            const auto td = static_cast<double>(t);
            w.samples[static_cast<std::size_t>(t)] =
                static_cast<float>(spec.amplitude * (0.6 * std::sin(s1 * td) + 0.4 * std::sin(s2 * td)));
        }
        break;
    }
    case SynthKind::square: {
        check_frequency(spec.frequency_hz, spec.sample_rate_hz, "square");
        for (long t = 0; t < n; ++t) {
            const double phase =
                std::fmod(spec.frequency_hz * static_cast<double>(t) / spec.sample_rate_hz, 1.0);
            w.samples[static_cast<std::size_t>(t)] =
                static_cast<float>(phase < 0.5 ? spec.amplitude : -spec.amplitude);
        }
        break;
    }
    case SynthKind::markov_noise: {
        Rng rng(spec.seed);
        int state = static_cast<int>(rng.next_below(4)); // uniform = stationary
        for (long t = 0; t < n; ++t) {
            w.samples[static_cast<std::size_t>(t)] =
                static_cast<float>(spec.amplitude * kMarkovLevels[static_cast<std::size_t>(state)]);
            const double u = rng.next_double();
            double cum = 0.0;
            int next = 3;
            for (int j = 0; j < 4; ++j) {
                cum += kMarkovTransitions[static_cast<std::size_t>(state)][static_cast<std::size_t>(j)];
                if (u < cum) {
                    next = j;
                    break;
                }
            }
            state = next;
        }
        break;
    }
    }
    return w;
}

} // namespace wavenet
