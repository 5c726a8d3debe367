#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "sonalign/common.hpp"

namespace sonalign {

struct Waveform {
    std::vector<double> samples;  // mono, nominal [-1, 1]
    int sample_rate = 0;

    double duration_seconds() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

enum class WavErrorKind { MalformedHeader, UnsupportedCodec, TruncatedData };

struct WavError : FormatError {
    WavErrorKind kind;
    WavError(WavErrorKind k, const std::string& msg) : FormatError(msg), kind(k) {}
};

namespace detail {

inline uint32_t rd_u32(const std::vector<unsigned char>& b, size_t off) {
    return static_cast<uint32_t>(b[off]) | (static_cast<uint32_t>(b[off + 1]) << 8) |
           (static_cast<uint32_t>(b[off + 2]) << 16) | (static_cast<uint32_t>(b[off + 3]) << 24);
}

inline uint16_t rd_u16(const std::vector<unsigned char>& b, size_t off) {
    return static_cast<uint16_t>(b[off] | (b[off + 1] << 8));
}

}  // namespace detail

// Reads RIFF/WAVE, PCM16 LE or IEEE float32 LE, mono or stereo. Stereo is
// averaged to mono; PCM16 is scaled by 1/32768.
inline Waveform load_wav(const std::string& path) {
    std::vector<unsigned char> b;
    try {
        b = read_file_bytes(path);
    } catch (const IoError&) {
        throw;
    }
    if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
        throw WavError(WavErrorKind::MalformedHeader, "not a RIFF/WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    size_t data_off = 0, data_len = 0;

    size_t off = 12;
    while (off + 8 <= b.size()) {
        const char* id = reinterpret_cast<const char*>(b.data() + off);
        uint32_t len = detail::rd_u32(b, off + 4);
        size_t body = off + 8;
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16 || body + 16 > b.size())
                throw WavError(WavErrorKind::MalformedHeader, "fmt chunk too short: " + path);
            format = detail::rd_u16(b, body);
            channels = detail::rd_u16(b, body + 2);
            rate = detail::rd_u32(b, body + 4);
            bits = detail::rd_u16(b, body + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_off = body;
            data_len = len;
            if (body + len > b.size())
                throw WavError(WavErrorKind::TruncatedData, "data chunk extends past end of file: " + path);
        }
        off = body + len + (len & 1);  // chunks are word-aligned
    }
    if (!have_fmt || data_off == 0)
        throw WavError(WavErrorKind::MalformedHeader, "missing fmt/data chunk: " + path);
    if (channels < 1 || channels > 2 || rate == 0)
        throw WavError(WavErrorKind::UnsupportedCodec,
                       "unsupported channel count or rate: " + std::to_string(channels));

    const bool pcm16 = (format == 1 && bits == 16);
    const bool f32 = (format == 3 && bits == 32);
    if (!pcm16 && !f32)
        throw WavError(WavErrorKind::UnsupportedCodec, "unsupported codec: format tag " + std::to_string(format) +
                                                           ", " + std::to_string(bits) + " bits");

    const size_t bytes_per_sample = pcm16 ? 2 : 4;
    const size_t frame_bytes = bytes_per_sample * channels;
    if (data_len % frame_bytes != 0)
        throw WavError(WavErrorKind::TruncatedData, "data chunk not a whole number of frames: " + path);
    const size_t frames = data_len / frame_bytes;

    Waveform w;
    w.sample_rate = static_cast<int>(rate);
    w.samples.resize(frames);
    for (size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (size_t ch = 0; ch < channels; ++ch) {
            size_t p = data_off + i * frame_bytes + ch * bytes_per_sample;
            if (pcm16) {
                auto v = static_cast<int16_t>(detail::rd_u16(b, p));
                acc += static_cast<double>(v) / 32768.0;
            } else {
                uint32_t u = detail::rd_u32(b, p);
                float f;
                std::memcpy(&f, &u, 4);
                acc += static_cast<double>(f);
            }
        }
        w.samples[i] = acc / channels;
    }
    return w;
}

// PCM16 mono writer (the only format the corpus generator needs).
inline void save_wav_pcm16(const std::string& path, const Waveform& w) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    const uint32_t data_len = static_cast<uint32_t>(w.samples.size() * 2);
    f.write("RIFF", 4);
    write_u32le(f, 36 + data_len);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    write_u32le(f, 16);
    unsigned char fmt[16] = {};
    fmt[0] = 1;  // PCM
    fmt[2] = 1;  // mono
    uint32_t rate = static_cast<uint32_t>(w.sample_rate);
    std::memcpy(fmt + 4, &rate, 4);
    uint32_t byterate = rate * 2;
    std::memcpy(fmt + 8, &byterate, 4);
    fmt[12] = 2;   // block align
    fmt[14] = 16;  // bits
    f.write(reinterpret_cast<const char*>(fmt), 16);
    f.write("data", 4);
    write_u32le(f, data_len);
    for (double s : w.samples) {
        double clamped = std::max(-1.0, std::min(1.0, s));
        auto v = static_cast<int16_t>(std::lround(clamped * 32767.0));
        unsigned char lo = static_cast<unsigned char>(v & 0xff);
        unsigned char hi = static_cast<unsigned char>((v >> 8) & 0xff);
        f.put(static_cast<char>(lo));
        f.put(static_cast<char>(hi));
    }
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace sonalign
