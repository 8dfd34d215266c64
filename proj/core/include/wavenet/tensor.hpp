#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wavenet/errors.hpp"

namespace wavenet {

/// Time-major 2-D array: `timesteps` rows of `channels` values, row-major.
/// The universal carrier for activations, logits and conditioning series.
template <typename S>
struct Tensor2DT {
    int timesteps = 0;
    int channels = 0;
    std::vector<S> data;

    Tensor2DT() = default;
    Tensor2DT(int t, int c, S fill = S(0))
        : timesteps(t), channels(c), data(static_cast<std::size_t>(t) * c, fill) {
        if (t < 0 || c < 1) {
            throw ShapeError("Tensor2D requires timesteps >= 0 and channels >= 1, got " +
                             std::to_string(t) + "x" + std::to_string(c));
        }
    }

    S& at(int t, int c) { return data[static_cast<std::size_t>(t) * channels + c]; }
    S at(int t, int c) const { return data[static_cast<std::size_t>(t) * channels + c]; }

    std::span<S> row(int t) { return {data.data() + static_cast<std::size_t>(t) * channels, static_cast<std::size_t>(channels)}; }
    std::span<const S> row(int t) const { return {data.data() + static_cast<std::size_t>(t) * channels, static_cast<std::size_t>(channels)}; }

    bool same_shape(const Tensor2DT& o) const { return timesteps == o.timesteps && channels == o.channels; }

    std::string shape_str() const { return std::to_string(timesteps) + "x" + std::to_string(channels); }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor2DT<U> cast() const {
        Tensor2DT<U> out(timesteps, channels);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor2D = Tensor2DT<float>;

template <typename S>
void require_same_shape(const Tensor2DT<S>& a, const Tensor2DT<S>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

} // namespace wavenet
