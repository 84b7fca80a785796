#pragma once

// DPT on-disk tensor container.
//
// Layout, all little-endian:
//   bytes 0..3   magic "DPT1"
//   bytes 4..7   zero padding
//   byte  8      rank as u8 (1..4)
//   then         rank extents as u32, each >= 1
//   then         row-major payload as f64, one per element
//
// A dims=[1] tensor is exactly 4+4+1+4+8 = 21 bytes. Readers reject bad
// magic, truncated or oversized payloads, zero extents, and non-finite
// values, each with a distinct code so the CLI can report precisely.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dpn {

class TensorIoError : public std::runtime_error {
public:
    enum class Code {
        io_failure,       // cannot open / read / write the file
        bad_magic,        // first 8 bytes are not "DPT1" + zeros
        bad_header,       // rank or extents outside the allowed range
        payload_mismatch, // file length disagrees with the header
        non_finite,       // payload holds NaN or infinity
    };

    TensorIoError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

inline void put_f64_le(std::string& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

inline double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i]))
            throw TensorIoError(TensorIoError::Code::non_finite,
                                "refusing to write non-finite value at element " + std::to_string(i));
    std::string out;
    out.reserve(9 + 4 * t.rank() + 8 * t.size());
    out += "DPT1";
    out.append(4, '\0');
    out.push_back(char(t.rank()));
    for (std::size_t a = 0; a < t.rank(); ++a) detail::put_u32_le(out, t.dim(a));
    for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64_le(out, t[i]);
    return out;
}

inline void write_tensor(const Tensor& t, const std::filesystem::path& path) {
    const std::string bytes = encode_tensor(t);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw TensorIoError(TensorIoError::Code::io_failure,
                            "cannot open for writing: " + path.string());
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f)
        throw TensorIoError(TensorIoError::Code::io_failure, "short write: " + path.string());
}

inline Tensor decode_tensor(const std::vector<unsigned char>& bytes, const std::string& origin) {
    static const unsigned char magic[8] = {'D', 'P', 'T', '1', 0, 0, 0, 0};
    if (bytes.size() < 9 || std::memcmp(bytes.data(), magic, 8) != 0)
        throw TensorIoError(TensorIoError::Code::bad_magic, "not a DPT tensor: " + origin);
    const std::size_t rank = bytes[8];
    if (rank < 1 || rank > 4)
        throw TensorIoError(TensorIoError::Code::bad_header,
                            "rank must be 1..4, got " + std::to_string(rank) + " in " + origin);
    if (bytes.size() < 9 + 4 * rank)
        throw TensorIoError(TensorIoError::Code::payload_mismatch, "truncated header: " + origin);
    Dims dims(rank);
    std::size_t count = 1;
    for (std::size_t a = 0; a < rank; ++a) {
        dims[a] = detail::get_u32_le(bytes.data() + 9 + 4 * a);
        if (dims[a] == 0)
            throw TensorIoError(TensorIoError::Code::bad_header, "zero extent in " + origin);
        count *= dims[a];
    }
    const std::size_t expect = 9 + 4 * rank + 8 * count;
    if (bytes.size() != expect)
        throw TensorIoError(TensorIoError::Code::payload_mismatch,
                            "payload of " + origin + " is " + std::to_string(bytes.size()) +
                                " bytes, header implies " + std::to_string(expect));
    std::vector<double> data(count);
    const unsigned char* p = bytes.data() + 9 + 4 * rank;
    for (std::size_t i = 0; i < count; ++i, p += 8) {
        data[i] = detail::get_f64_le(p);
        if (!std::isfinite(data[i]))
            throw TensorIoError(TensorIoError::Code::non_finite,
                                "non-finite value at element " + std::to_string(i) + " of " + origin);
    }
    return Tensor(std::move(dims), std::move(data));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw TensorIoError(TensorIoError::Code::io_failure, "cannot open: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (f.bad())
        throw TensorIoError(TensorIoError::Code::io_failure, "read failed: " + path.string());
    return decode_tensor(bytes, path.string());
}

inline void write_label_map(const LabelMap& m, const std::filesystem::path& path) {
    write_tensor(m.to_tensor(), path);
}

inline LabelMap read_label_map(const std::filesystem::path& path) {
    return LabelMap::from_tensor(read_tensor(path));
}

}  // namespace dpn
