#pragma once

// Little-endian binary readers/writers used by the bank and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "xlm/common.hpp"

namespace xlm {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void bytes(const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }

    void magic(const char tag[4]) { bytes(tag, 4); }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    const std::string& data() const { return buf_; }

    void to_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw persistence_error("cannot open for writing: " + path);
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw persistence_error("short write: " + path);
    }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw persistence_error("cannot open for reading: " + path);
        std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(contents));
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    void bytes(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    void expect_magic(const char tag[4], const std::string& what) {
        char got[4];
        need(4);
        std::memcpy(got, buf_.data() + pos_, 4);
        pos_ += 4;
        if (std::memcmp(got, tag, 4) != 0)
            throw bad_magic_error("bad magic in " + what + ": expected '" + std::string(tag, 4) +
                                  "', found '" + std::string(got, 4) + "'");
    }

    bool at_end() const { return pos_ == buf_.size(); }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size())
            throw truncated_file_error("truncated data: need " + std::to_string(n) + " bytes at offset " +
                                       std::to_string(pos_) + ", have " + std::to_string(buf_.size() - pos_));
    }

    std::string buf_;
    std::size_t pos_ = 0;
};

}  // namespace xlm
