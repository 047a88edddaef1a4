#pragma once

#include "ecll/error.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace ecll {

using Bytes = std::vector<std::uint8_t>;

inline std::uint32_t crc32_of(std::span<const std::uint8_t> data)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for very large buffers.
    std::size_t off = 0;
    while (off < data.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
        crc = ::crc32(crc, data.data() + off, chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

inline std::uint32_t crc32_of(std::string_view text)
{
    return crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// FNV-1a, 64 bit.
class Fnv1a {
public:
    void add(std::string_view s)
    {
        for (unsigned char c : s) {
            h_ ^= c;
            h_ *= 0x100000001b3ULL;
        }
    }
    void add_u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            h_ ^= static_cast<std::uint8_t>(v >> (8 * i));
            h_ *= 0x100000001b3ULL;
        }
    }
    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view text, double& out)
{
    if (text.empty()) {
        return false;
    }
    if (text.front() == '+') {
        text.remove_prefix(1);
    }
    auto res = std::from_chars(text.data(), text.data() + text.size(), out);
    return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

inline std::string to_hex(std::uint64_t v, int width = 16)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(static_cast<std::size_t>(width), '0');
    for (int i = width - 1; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

/// Little-endian append-only encoder.
class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }
    void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void blob(std::span<const std::uint8_t> b)
    {
        u64(b.size());
        raw(b);
    }

    const Bytes& bytes() const& { return out_; }
    Bytes take() && { return std::move(out_); }

private:
    Bytes out_;
};

/// Bounds-checked decoder; any overrun is a corrupt payload.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint8_t u8()
    {
        need(1);
        return in_[pos_++];
    }
    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        }
        return v;
    }
    std::uint64_t u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        }
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str()
    {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::span<const std::uint8_t> raw(std::size_t n)
    {
        need(n);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    Bytes blob()
    {
        const auto n = u64();
        auto s = raw(static_cast<std::size_t>(n));
        return Bytes(s.begin(), s.end());
    }
    /// Element count that must be backed by at least `min_elem_bytes` each.
    std::size_t count(std::size_t min_elem_bytes)
    {
        const auto n = u32();
        if (min_elem_bytes > 0 && n > remaining() / min_elem_bytes) {
            fail(ErrorCode::corrupt_payload, "element count exceeds payload");
        }
        return n;
    }

    std::size_t remaining() const { return in_.size() - pos_; }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const
    {
        if (n > in_.size() - pos_) {
            fail(ErrorCode::corrupt_payload, "truncated payload");
        }
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

} // namespace ecll
