#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sonalign {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy. Every failure surfaces as one of these so callers can map
// them onto exit codes (config/validation -> 1, runtime -> 2).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct RemoteError : Error {
    using Error::Error;
};

// ---- little-endian binary io ----

inline void write_u32le(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32le(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("unexpected end of file reading u32");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32le(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32le(os, u);
}

inline float read_f32le(std::istream& is) {
    uint32_t u = read_u32le(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

inline void write_f64le(std::ostream& os, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64le(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("unexpected end of file reading f64");
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

inline void write_magic(std::ostream& os, const char (&magic)[9]) {
    os.write(magic, 8);  // 8 payload bytes, trailing NUL included in the literal
}

inline void expect_magic(std::istream& is, const char (&magic)[9], const std::string& what) {
    char got[8];
    if (!is.read(got, 8) || std::memcmp(got, magic, 8) != 0)
        throw FormatError("bad magic for " + what);
}

inline std::string read_string(std::istream& is, uint32_t len) {
    std::string s(len, '\0');
    if (len > 0 && !is.read(s.data(), len)) throw FormatError("unexpected end of file reading string");
    return s;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    auto n = static_cast<size_t>(f.tellg());
    f.seekg(0);
    std::vector<unsigned char> out(n);
    if (n > 0 && !f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n)))
        throw IoError("cannot read file: " + path);
    return out;
}

inline std::string read_file_text(const std::string& path) {
    auto b = read_file_bytes(path);
    return std::string(b.begin(), b.end());
}

inline void write_file_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace sonalign
