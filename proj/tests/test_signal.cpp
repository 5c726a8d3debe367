#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "sonalign/dsp.hpp"
#include "sonalign/logmel.hpp"
#include "sonalign/wav.hpp"

using namespace sonalign;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto p = fs::temp_directory_path() / "sonalign_signal_test";
    fs::create_directories(p);
    return p;
}

Waveform tone(double freq_hz, double seconds, int rate, double amp = 0.5) {
    Waveform w;
    w.sample_rate = rate;
    auto n = static_cast<size_t>(seconds * rate);
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * M_PI * freq_hz * i / rate);
    return w;
}

double rms(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

// naive DFT magnitude at one frequency; independent of the library FFT
double goertzel_mag(const std::vector<double>& x, double freq, int rate) {
    double re = 0.0, im = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double ph = 2.0 * M_PI * freq * static_cast<double>(i) / rate;
        re += x[i] * std::cos(ph);
        im -= x[i] * std::sin(ph);
    }
    return std::sqrt(re * re + im * im);
}

}  // namespace

TEST_CASE("wav pcm16 round trip and scaling") {
    auto dir = temp_dir();
    Waveform sq;
    sq.sample_rate = 44100;
    sq.samples.resize(44100);
    for (size_t i = 0; i < sq.samples.size(); ++i) sq.samples[i] = (i % 100 < 50) ? 1.0 : -1.0;
    auto path = (dir / "square.wav").string();
    save_wav_pcm16(path, sq);
    Waveform r = load_wav(path);
    REQUIRE(r.sample_rate == 44100);
    REQUIRE(r.samples.size() == sq.samples.size());
    // full-scale PCM16: positive rail is 32767/32768, negative rail is exactly -1 + 1/32768
    for (size_t i = 0; i < 200; ++i) {
        if (sq.samples[i] > 0) CHECK_THAT(r.samples[i], Catch::Matchers::WithinAbs(32767.0 / 32768.0, 1e-12));
        else CHECK_THAT(r.samples[i], Catch::Matchers::WithinAbs(-32767.0 / 32768.0, 1e-12));
    }
}

TEST_CASE("wav zero-byte file is a malformed header") {
    auto dir = temp_dir();
    auto path = (dir / "empty.wav").string();
    write_file_text(path, "");
    try {
        load_wav(path);
        FAIL("expected WavError");
    } catch (const WavError& e) {
        CHECK(e.kind == WavErrorKind::MalformedHeader);
    }
}

TEST_CASE("wav unsupported codec and truncated data are distinct kinds") {
    auto dir = temp_dir();
    Waveform w;
    w.sample_rate = 8000;
    w.samples.assign(100, 0.25);
    auto path = (dir / "bits.wav").string();
    save_wav_pcm16(path, w);
    auto bytes = read_file_bytes(path);

    SECTION("codec") {
        auto bad = bytes;
        bad[20] = 7;  // mu-law format tag
        auto p2 = (dir / "mulaw.wav").string();
        std::ofstream(p2, std::ios::binary).write(reinterpret_cast<char*>(bad.data()), static_cast<long>(bad.size()));
        try {
            load_wav(p2);
            FAIL("expected WavError");
        } catch (const WavError& e) {
            CHECK(e.kind == WavErrorKind::UnsupportedCodec);
        }
    }
    SECTION("truncated") {
        auto bad = bytes;
        bad.resize(bytes.size() - 50);  // keep header, cut samples
        auto p3 = (dir / "trunc.wav").string();
        std::ofstream(p3, std::ios::binary).write(reinterpret_cast<char*>(bad.data()), static_cast<long>(bad.size()));
        try {
            load_wav(p3);
            FAIL("expected WavError");
        } catch (const WavError& e) {
            CHECK(e.kind == WavErrorKind::TruncatedData);
        }
    }
}

TEST_CASE("stereo channels x and -x average to silence") {
    // hand-build a stereo PCM16 file
    auto dir = temp_dir();
    auto path = (dir / "stereo.wav").string();
    std::ofstream f(path, std::ios::binary);
    const uint32_t frames = 50;
    f.write("RIFF", 4);
    write_u32le(f, 36 + frames * 4);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    write_u32le(f, 16);
    const unsigned char fmt[16] = {1, 0, 2, 0, 0x80, 0x3e, 0, 0, 0, 0xfa, 0, 0, 4, 0, 16, 0};  // 16000 Hz stereo
    f.write(reinterpret_cast<const char*>(fmt), 16);
    f.write("data", 4);
    write_u32le(f, frames * 4);
    for (uint32_t i = 0; i < frames; ++i) {
        int16_t v = static_cast<int16_t>(1000 + 17 * static_cast<int>(i));
        int16_t nv = static_cast<int16_t>(-v);
        f.write(reinterpret_cast<char*>(&v), 2);
        f.write(reinterpret_cast<char*>(&nv), 2);
    }
    f.close();
    Waveform w = load_wav(path);
    REQUIRE(w.samples.size() == frames);
    for (double s : w.samples) CHECK(s == 0.0);
}

TEST_CASE("resample identity at equal rates") {
    Waveform w = tone(440, 0.1, 16000);
    Waveform r = resample(w, 16000);
    CHECK(r.samples == w.samples);
}

TEST_CASE("resample preserves DC") {
    Waveform w;
    w.sample_rate = 44100;
    w.samples.assign(4410, 0.5);
    Waveform r = resample(w, 16000);
    // interior samples (edges see the zero boundary)
    for (size_t i = 100; i + 100 < r.samples.size(); ++i)
        CHECK_THAT(r.samples[i], Catch::Matchers::WithinAbs(0.5, 1e-6));
}

TEST_CASE("resample preserves duration within one sample period") {
    Waveform w = tone(100, 0.73, 44100);
    Waveform r = resample(w, 16000);
    CHECK(std::abs(r.duration_seconds() - w.duration_seconds()) <= 1.0 / 16000.0);
}

TEST_CASE("440 Hz tone resampled 44.1k to 16k keeps its dominant frequency") {
    Waveform w = tone(440, 1.0, 44100);
    Waveform r = resample(w, 16000);
    // FFT oracle: scan bins, find the dominant frequency
    const size_t n = 8192;
    std::vector<double> seg(r.samples.begin() + 1000, r.samples.begin() + 1000 + n);
    double best_f = 0.0, best_m = -1.0;
    const double bin_hz = 16000.0 / static_cast<double>(n);
    for (size_t k = 1; k < n / 2; ++k) {
        double m = goertzel_mag(seg, static_cast<double>(k) * bin_hz, 16000);
        if (m > best_m) {
            best_m = m;
            best_f = static_cast<double>(k) * bin_hz;
        }
    }
    CHECK(std::abs(best_f - 440.0) <= bin_hz);
}

TEST_CASE("segment splits 20 s into 8+8+4pad") {
    Waveform w = tone(100, 20.0, 16000);
    auto segs = segment(w, 8.0);
    REQUIRE(segs.size() == 3);
    for (const auto& s : segs) CHECK(s.samples.size() == 8 * 16000);
    // last 4 s of the final segment are padding
    for (size_t i = 4 * 16000; i < 8 * 16000; ++i) CHECK(segs[2].samples[i] == 0.0);
    // concatenation reproduces the original on the covered prefix
    for (size_t i = 0; i < w.samples.size(); ++i) {
        CHECK(segs[i / (8 * 16000)].samples[i % (8 * 16000)] == w.samples[i]);
    }
}

TEST_CASE("segment boundary and short input") {
    Waveform exact = tone(100, 8.0, 16000);
    auto one = segment(exact, 8.0);
    REQUIRE(one.size() == 1);
    CHECK(one[0].samples == exact.samples);

    Waveform shrt = tone(100, 3.0, 16000);
    auto padded = segment(shrt, 8.0);
    REQUIRE(padded.size() == 1);
    CHECK(padded[0].samples.size() == 8 * 16000);
    for (size_t i = 3 * 16000; i < 8 * 16000; ++i) CHECK(padded[0].samples[i] == 0.0);

    Waveform empty;
    empty.sample_rate = 16000;
    CHECK_THROWS_AS(segment(empty, 8.0), NumericError);
}

TEST_CASE("logmel of silence is the log floor everywhere") {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(8 * 16000, 0.0);
    Spectrogram s = logmel(w);
    for (size_t i = 0; i < s.values.size(); ++i) CHECK(s.values[i] == std::log(1e-6));
}

TEST_CASE("logmel frame count follows floor((N - win)/hop) + 1") {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(8 * 16000, 0.0);
    Spectrogram s = logmel(w);
    CHECK(s.frames() == (128000 - 400) / 160 + 1);  // = 798
    CHECK(s.mel_bins() == 64);

    w.samples.resize(399);
    CHECK_THROWS_AS(logmel(w), NumericError);
}

TEST_CASE("1 kHz tone peaks at the mel bin containing 1 kHz in every frame") {
    Waveform w = tone(1000, 1.0, 16000);
    Spectrogram s = logmel(w);
    // mel filterbank oracle: find which band's peak frequency is closest to 1 kHz
    LogmelConfig cfg;
    const double mel_lo = 0.0;
    const double mel_hi = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
    int expect_band = -1;
    double best = 1e18;
    for (int m = 0; m < 64; ++m) {
        double mel_center = mel_lo + (mel_hi - mel_lo) * (m + 1) / 65.0;
        double hz_center = 700.0 * (std::pow(10.0, mel_center / 2595.0) - 1.0);
        if (std::abs(hz_center - 1000.0) < best) {
            best = std::abs(hz_center - 1000.0);
            expect_band = m;
        }
    }
    for (size_t t = 0; t < s.frames(); ++t) {
        size_t argmax = 0;
        for (size_t m = 1; m < s.mel_bins(); ++m)
            if (s.values(t, m) > s.values(t, argmax)) argmax = m;
        CHECK(std::abs(static_cast<int>(argmax) - expect_band) <= 1);
    }
}

TEST_CASE("logmel is monotone under amplification") {
    Waveform w = tone(700, 0.5, 16000, 0.01);
    // add some silence so parts of the spectrum sit on the floor
    for (size_t i = 0; i < w.samples.size() / 3; ++i) w.samples[i] = 0.0;
    Spectrogram lo = logmel(w);
    Waveform loud = w;
    for (double& s : loud.samples) s *= 11.0;
    Spectrogram hi = logmel(loud);
    for (size_t i = 0; i < lo.values.size(); ++i) CHECK(hi.values[i] >= lo.values[i]);
}

TEST_CASE("spectrogram file round trip") {
    auto dir = temp_dir();
    Waveform w = tone(500, 0.2, 16000, 0.3);
    Spectrogram s = logmel(w);
    auto path = (dir / "spec.acspec").string();
    save_spectrogram(path, s);
    Spectrogram r = load_spectrogram(path);
    REQUIRE(r.frames() == s.frames());
    REQUIRE(r.mel_bins() == s.mel_bins());
    for (size_t i = 0; i < r.values.size(); ++i)
        CHECK(r.values[i] == static_cast<double>(static_cast<float>(s.values[i])));
}

TEST_CASE("gain of +5 dB multiplies by 10^(5/20)") {
    Waveform w;
    w.sample_rate = 16000;
    w.samples = {0.1};
    Waveform g = apply_augment(w, AugmentKind::GainPlus5dB);
    CHECK_THAT(g.samples[0], Catch::Matchers::WithinAbs(0.17783, 1e-5));
}

TEST_CASE("peak normalization rescales to unit peak and skips silence") {
    Waveform w = tone(200, 0.05, 16000, 0.25);
    Waveform n = apply_augment(w, AugmentKind::PeakNormalize);
    double peak = 0.0;
    for (double s : n.samples) peak = std::max(peak, std::abs(s));
    CHECK_THAT(peak, Catch::Matchers::WithinAbs(1.0, 1e-12));

    Waveform silent;
    silent.sample_rate = 16000;
    silent.samples.assign(100, 0.0);
    Waveform out = apply_augment(silent, AugmentKind::PeakNormalize);
    CHECK(out.samples == silent.samples);
}

TEST_CASE("100 Hz tone through the 3 kHz high-pass loses at least 95% RMS") {
    Waveform w = tone(100, 1.0, 16000, 0.5);
    Waveform f = apply_augment(w, AugmentKind::HighPass3000Hz);
    // skip the transient at the start
    std::vector<double> tail_in(w.samples.begin() + 4000, w.samples.end());
    std::vector<double> tail_out(f.samples.begin() + 4000, f.samples.end());
    CHECK(rms(tail_out) < 0.05 * rms(tail_in));
}

TEST_CASE("5 kHz tone through the 300 Hz low-pass loses at least 95% RMS") {
    Waveform w = tone(5000, 1.0, 16000, 0.5);
    Waveform f = apply_augment(w, AugmentKind::LowPass300Hz);
    std::vector<double> tail_in(w.samples.begin() + 4000, w.samples.end());
    std::vector<double> tail_out(f.samples.begin() + 4000, f.samples.end());
    CHECK(rms(tail_out) < 0.05 * rms(tail_in));
}

TEST_CASE("filters are stable: impulse response decays below 1e-9 within 16000 samples") {
    for (auto kind : {AugmentKind::LowPass300Hz, AugmentKind::HighPass3000Hz}) {
        Waveform imp;
        imp.sample_rate = 16000;
        imp.samples.assign(16001, 0.0);
        imp.samples[0] = 1.0;
        Waveform r = apply_augment(imp, kind);
        CHECK(std::abs(r.samples.back()) < 1e-9);
    }
}

TEST_CASE("augment choice is uniform over 10^4 draws") {
    Rng rng(2024);
    Waveform w = tone(300, 0.01, 16000);
    std::array<int, 4> counts{};
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        auto [out, kind] = augment(w, rng);
        counts[static_cast<size_t>(kind)]++;
    }
    // binomial(n, 1/4): sigma = sqrt(n*p*(1-p)) ~ 43.3
    const double expect = n / 4.0;
    const double sigma = std::sqrt(n * 0.25 * 0.75);
    for (int c : counts) CHECK(std::abs(c - expect) <= 3.0 * sigma);
}
