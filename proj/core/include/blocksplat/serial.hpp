#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "blocksplat/errors.hpp"

// Little-endian primitive readers/writers shared by the scene container and
// the wire protocol. All multi-byte values are stored little-endian
// regardless of host order (the byte-by-byte loops make that explicit).

namespace blocksplat::serial {

class Writer {
public:
    void u8(uint8_t v) { buf_.push_back(v); }

    void u16(uint16_t v) {
        buf_.push_back(static_cast<uint8_t>(v));
        buf_.push_back(static_cast<uint8_t>(v >> 8));
    }

    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }

    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }

    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }

    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void bytes(const void* data, size_t n) {
        const auto* p = static_cast<const uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }

    void str(const std::string& s) { bytes(s.data(), s.size()); }

    const std::vector<uint8_t>& data() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }
    size_t size() const { return buf_.size(); }

private:
    std::vector<uint8_t> buf_;
};

class Reader {
public:
    Reader(const uint8_t* data, size_t size, FormatErrorCode on_underrun = FormatErrorCode::TruncatedBuffer)
        : data_(data), size_(size), on_underrun_(on_underrun) {}

    explicit Reader(const std::vector<uint8_t>& buf,
                    FormatErrorCode on_underrun = FormatErrorCode::TruncatedBuffer)
        : Reader(buf.data(), buf.size(), on_underrun) {}

    uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(data_[pos_]) | static_cast<uint16_t>(data_[pos_ + 1]) << 8;
        pos_ += 2;
        return v;
    }

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void bytes(void* out, size_t n) {
        need(n);
        std::memcpy(out, data_ + pos_, n);
        pos_ += n;
    }

    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    void skip(size_t n) {
        need(n);
        pos_ += n;
    }

    size_t remaining() const { return size_ - pos_; }
    size_t position() const { return pos_; }
    bool at_end() const { return pos_ == size_; }

private:
    void need(size_t n) const {
        if (size_ - pos_ < n) throw FormatError(on_underrun_, "truncated input");
    }

    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
    FormatErrorCode on_underrun_;
};

} // namespace blocksplat::serial
