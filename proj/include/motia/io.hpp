#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "common.hpp"

namespace motia {

// CRC-32 (IEEE, reflected 0xEDB88320), used as the trailer of every binary
// container so truncation and corruption are detected on load.
inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

// Accumulates bytes in memory so the CRC covers exactly what lands on disk.
class BinaryWriter {
public:
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void magic(const char m[4]) { raw(m, 4); }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    void f32_array(const float* p, size_t n) { raw(p, 4 * n); }

    template <typename T>
    void f32_array_cast(const T* p, size_t n) {
        for (size_t i = 0; i < n; ++i) f32(static_cast<float>(p[i]));
    }

    void finish(const std::string& path) {
        uint32_t c = crc32(buf_.data(), buf_.size());
        u32(c);
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open for write: " + path);
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("write failed: " + path);
    }

    const std::vector<uint8_t>& bytes() const { return buf_; }

private:
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<uint8_t> buf_;
};

// Loads the whole file, checks the CRC trailer up front, then reads fields.
class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) {
        std::ifstream in(path, std::ios::binary | std::ios::ate);
        if (!in) throw IoError("cannot open: " + path);
        auto size = static_cast<size_t>(in.tellg());
        if (size < 8) throw IoError("corrupt file (truncated): " + path);
        buf_.resize(size);
        in.seekg(0);
        in.read(reinterpret_cast<char*>(buf_.data()), static_cast<std::streamsize>(size));
        if (!in) throw IoError("read failed: " + path);
        uint32_t stored;
        std::memcpy(&stored, buf_.data() + size - 4, 4);
        if (crc32(buf_.data(), size - 4) != stored)
            throw IoError("corrupt file (CRC mismatch): " + path);
        end_ = size - 4;
    }

    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    float f32() {
        float v;
        raw(&v, 4);
        return v;
    }

    void expect_magic(const char m[4], const std::string& what) {
        char got[4];
        raw(got, 4);
        if (std::memcmp(got, m, 4) != 0) throw IoError("corrupt file (bad magic): " + what);
    }

    std::string str() {
        uint32_t n = u32();
        if (n > remaining()) throw IoError("corrupt file (bad string length)");
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void f32_array(float* p, size_t n) { raw(p, 4 * n); }

    template <typename T>
    void f32_array_cast(T* p, size_t n) {
        for (size_t i = 0; i < n; ++i) p[i] = static_cast<T>(f32());
    }

    size_t remaining() const { return end_ - pos_; }

private:
    void raw(void* p, size_t n) {
        if (pos_ + n > end_) throw IoError("corrupt file (truncated payload)");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::vector<uint8_t> buf_;
    size_t pos_ = 0;
    size_t end_ = 0;
};

}  // namespace motia
