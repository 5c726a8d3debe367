#pragma once

#include <cmath>
#include <complex>
#include <fstream>
#include <string>
#include <vector>

#include "sonalign/matrix.hpp"
#include "sonalign/wav.hpp"

namespace sonalign {

struct LogmelConfig {
    int sample_rate = 16000;
    int win_length = 400;   // 25 ms
    int hop_length = 160;   // 10 ms
    int fft_size = 512;
    int mel_bins = 64;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-6;
};

struct Spectrogram {
    Matrix values;  // T×F, natural-log mel energies
    size_t frames() const { return values.rows(); }
    size_t mel_bins() const { return values.cols(); }
};

namespace detail {

// iterative radix-2 FFT, in place
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace detail

// Triangular mel filterbank on FFT bin centers, HTK mel scale, unit-peak
// triangles. Row = mel band, column = FFT bin (0..fft/2).
inline Matrix mel_filterbank(const LogmelConfig& cfg) {
    const int bins = cfg.fft_size / 2 + 1;
    Matrix fb(static_cast<size_t>(cfg.mel_bins), static_cast<size_t>(bins));
    const double mel_lo = detail::hz_to_mel(cfg.fmin);
    const double mel_hi = detail::hz_to_mel(cfg.fmax);
    std::vector<double> edges(static_cast<size_t>(cfg.mel_bins) + 2);
    for (size_t i = 0; i < edges.size(); ++i)
        edges[i] = detail::mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                                  static_cast<double>(cfg.mel_bins + 1));
    for (int m = 0; m < cfg.mel_bins; ++m) {
        const double f0 = edges[static_cast<size_t>(m)];
        const double f1 = edges[static_cast<size_t>(m) + 1];
        const double f2 = edges[static_cast<size_t>(m) + 2];
        for (int k = 0; k < bins; ++k) {
            const double fk = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            double w = 0.0;
            if (fk > f0 && fk < f1)
                w = (fk - f0) / (f1 - f0);
            else if (fk >= f1 && fk < f2)
                w = (f2 - fk) / (f2 - f1);
            fb(static_cast<size_t>(m), static_cast<size_t>(k)) = w;
        }
    }
    return fb;
}

// STFT power → mel filterbank → natural log with floor. Window is periodic
// Hann; frames are left-aligned (no centering), T = floor((N - win)/hop) + 1.
inline Spectrogram logmel(const Waveform& w, const LogmelConfig& cfg = {}) {
    if (w.sample_rate != cfg.sample_rate)
        throw NumericError("logmel: waveform rate " + std::to_string(w.sample_rate) + " != configured " +
                           std::to_string(cfg.sample_rate));
    const auto n = static_cast<long long>(w.samples.size());
    if (n < cfg.win_length) throw NumericError("logmel: waveform shorter than one analysis window");
    const auto frames = static_cast<size_t>((n - cfg.win_length) / cfg.hop_length + 1);

    std::vector<double> window(static_cast<size_t>(cfg.win_length));
    for (int i = 0; i < cfg.win_length; ++i)
        window[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / cfg.win_length));

    const Matrix fb = mel_filterbank(cfg);
    const int bins = cfg.fft_size / 2 + 1;

    Spectrogram spec;
    spec.values = Matrix(frames, static_cast<size_t>(cfg.mel_bins));
    std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));
    std::vector<double> power(static_cast<size_t>(bins));
    for (size_t t = 0; t < frames; ++t) {
        const size_t start = t * static_cast<size_t>(cfg.hop_length);
        for (int i = 0; i < cfg.fft_size; ++i) {
            double s = (i < cfg.win_length) ? w.samples[start + static_cast<size_t>(i)] * window[static_cast<size_t>(i)]
                                            : 0.0;
            buf[static_cast<size_t>(i)] = {s, 0.0};
        }
        detail::fft_radix2(buf);
        for (int k = 0; k < bins; ++k) power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
        for (int m = 0; m < cfg.mel_bins; ++m) {
            double e = 0.0;
            for (int k = 0; k < bins; ++k)
                e += fb(static_cast<size_t>(m), static_cast<size_t>(k)) * power[static_cast<size_t>(k)];
            spec.values(t, static_cast<size_t>(m)) = std::log(std::max(e, cfg.log_floor));
        }
    }
    return spec;
}

// ---- flat binary format: "ACSPEC1\0", u32 T, u32 F, T×F f32 LE row-major ----

inline void save_spectrogram(const std::string& path, const Spectrogram& s) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    write_magic(f, "ACSPEC1\0");
    write_u32le(f, static_cast<uint32_t>(s.frames()));
    write_u32le(f, static_cast<uint32_t>(s.mel_bins()));
    for (size_t i = 0; i < s.values.size(); ++i) write_f32le(f, static_cast<float>(s.values[i]));
    if (!f) throw IoError("write failed: " + path);
}

inline Spectrogram load_spectrogram(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    expect_magic(f, "ACSPEC1\0", path);
    const uint32_t t = read_u32le(f);
    const uint32_t fbins = read_u32le(f);
    Spectrogram s;
    s.values = Matrix(t, fbins);
    for (size_t i = 0; i < s.values.size(); ++i) s.values[i] = static_cast<double>(read_f32le(f));
    if (!f) throw FormatError("truncated spectrogram file: " + path);
    return s;
}

}  // namespace sonalign
