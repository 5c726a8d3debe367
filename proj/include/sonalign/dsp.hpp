#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sonalign/rng.hpp"
#include "sonalign/wav.hpp"

namespace sonalign {

// ---- resampling ----

namespace detail {

// zeroth-order modified Bessel function, power series
inline double bessel_i0(double x) {
    double sum = 1.0, term = 1.0;
    const double hx = x / 2.0;
    for (int k = 1; k < 64; ++k) {
        term *= (hx / k) * (hx / k);
        sum += term;
        if (term < 1e-18 * sum) break;
    }
    return sum;
}

inline double kaiser(double x, double beta) {
    // x in [-1, 1]
    if (x < -1.0 || x > 1.0) return 0.0;
    return bessel_i0(beta * std::sqrt(1.0 - x * x)) / bessel_i0(beta);
}

inline double sinc(double x) {
    if (x == 0.0) return 1.0;
    double px = M_PI * x;
    return std::sin(px) / px;
}

}  // namespace detail

inline constexpr int kResampleTapsPerSide = 16;
inline constexpr double kResampleKaiserBeta = 8.6;
inline constexpr double kResampleRolloff = 0.945;

// Windowed-sinc rate conversion (Kaiser window, 16 taps per side). Each
// output kernel is renormalized to unit sum, which preserves DC exactly.
inline Waveform resample(const Waveform& w, int target_hz) {
    if (target_hz <= 0) throw NumericError("resample: target rate must be positive");
    if (w.sample_rate == target_hz) return w;
    const double ratio = static_cast<double>(target_hz) / w.sample_rate;
    // anti-aliasing cutoff relative to the input Nyquist
    const double cutoff = (ratio < 1.0 ? ratio : 1.0) * kResampleRolloff;
    const auto n_in = static_cast<long long>(w.samples.size());
    const auto n_out = static_cast<long long>(std::llround(static_cast<double>(n_in) * ratio));

    Waveform out;
    out.sample_rate = target_hz;
    out.samples.resize(static_cast<size_t>(n_out), 0.0);
    for (long long i = 0; i < n_out; ++i) {
        const double center = static_cast<double>(i) / ratio;
        const auto j0 = static_cast<long long>(std::ceil(center)) - kResampleTapsPerSide;
        const auto j1 = static_cast<long long>(std::floor(center)) + kResampleTapsPerSide;
        double acc = 0.0, wsum = 0.0;
        for (long long j = j0; j <= j1; ++j) {
            const double d = center - static_cast<double>(j);
            const double k =
                cutoff * detail::sinc(cutoff * d) * detail::kaiser(d / kResampleTapsPerSide, kResampleKaiserBeta);
            wsum += k;
            if (j >= 0 && j < n_in) acc += k * w.samples[static_cast<size_t>(j)];
        }
        out.samples[static_cast<size_t>(i)] = (wsum != 0.0) ? acc / wsum : 0.0;
    }
    return out;
}

// ---- segmentation ----

// Non-overlapping fixed-length windows; the final remainder (and any input
// shorter than one window) is zero-padded on the right.
inline std::vector<Waveform> segment(const Waveform& w, double seconds = 8.0) {
    if (w.samples.empty()) throw NumericError("segment: empty waveform");
    const auto win = static_cast<size_t>(std::llround(seconds * w.sample_rate));
    if (win == 0) throw NumericError("segment: window shorter than one sample");
    std::vector<Waveform> out;
    for (size_t start = 0; start < w.samples.size(); start += win) {
        Waveform s;
        s.sample_rate = w.sample_rate;
        s.samples.assign(win, 0.0);
        const size_t take = std::min(win, w.samples.size() - start);
        std::copy(w.samples.begin() + static_cast<long>(start),
                  w.samples.begin() + static_cast<long>(start + take), s.samples.begin());
        out.push_back(std::move(s));
    }
    return out;
}

// ---- filters ----

// Second-order (biquad) filter, RBJ cookbook coefficients, direct form II
// transposed, zero initial state.
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

    static Biquad lowpass(double cutoff_hz, double sample_rate, double q = M_SQRT1_2) {
        const double w0 = 2.0 * M_PI * cutoff_hz / sample_rate;
        const double alpha = std::sin(w0) / (2.0 * q);
        const double c = std::cos(w0);
        const double a0 = 1.0 + alpha;
        Biquad f;
        f.b0 = (1.0 - c) / 2.0 / a0;
        f.b1 = (1.0 - c) / a0;
        f.b2 = (1.0 - c) / 2.0 / a0;
        f.a1 = -2.0 * c / a0;
        f.a2 = (1.0 - alpha) / a0;
        return f;
    }

    static Biquad highpass(double cutoff_hz, double sample_rate, double q = M_SQRT1_2) {
        const double w0 = 2.0 * M_PI * cutoff_hz / sample_rate;
        const double alpha = std::sin(w0) / (2.0 * q);
        const double c = std::cos(w0);
        const double a0 = 1.0 + alpha;
        Biquad f;
        f.b0 = (1.0 + c) / 2.0 / a0;
        f.b1 = -(1.0 + c) / a0;
        f.b2 = (1.0 + c) / 2.0 / a0;
        f.a1 = -2.0 * c / a0;
        f.a2 = (1.0 - alpha) / a0;
        return f;
    }

    std::vector<double> process(const std::vector<double>& x) const {
        std::vector<double> y(x.size());
        double z1 = 0.0, z2 = 0.0;
        for (size_t i = 0; i < x.size(); ++i) {
            double out = b0 * x[i] + z1;
            z1 = b1 * x[i] - a1 * out + z2;
            z2 = b2 * x[i] - a2 * out;
            y[i] = out;
        }
        return y;
    }
};

// ---- augmentation ----

enum class AugmentKind { GainPlus5dB, PeakNormalize, LowPass300Hz, HighPass3000Hz };

inline const char* augment_kind_name(AugmentKind k) {
    switch (k) {
        case AugmentKind::GainPlus5dB: return "gain+5dB";
        case AugmentKind::PeakNormalize: return "peak-normalize";
        case AugmentKind::LowPass300Hz: return "lowpass-300Hz";
        case AugmentKind::HighPass3000Hz: return "highpass-3000Hz";
    }
    return "?";
}

inline Waveform apply_augment(const Waveform& w, AugmentKind kind) {
    Waveform out = w;
    switch (kind) {
        case AugmentKind::GainPlus5dB: {
            const double g = std::pow(10.0, 5.0 / 20.0);
            for (double& s : out.samples) s *= g;
            break;
        }
        case AugmentKind::PeakNormalize: {
            double peak = 0.0;
            for (double s : out.samples) peak = std::max(peak, std::abs(s));
            if (peak > 0.0)
                for (double& s : out.samples) s /= peak;
            break;  // silence passes through unchanged
        }
        case AugmentKind::LowPass300Hz:
            out.samples = Biquad::lowpass(300.0, w.sample_rate).process(w.samples);
            break;
        case AugmentKind::HighPass3000Hz:
            out.samples = Biquad::highpass(3000.0, w.sample_rate).process(w.samples);
            break;
    }
    return out;
}

// One transformation per sample, chosen uniformly.
inline std::pair<Waveform, AugmentKind> augment(const Waveform& w, Rng& rng) {
    const auto kind = static_cast<AugmentKind>(rng.next_below(4));
    return {apply_augment(w, kind), kind};
}

}  // namespace sonalign
