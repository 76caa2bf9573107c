#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hairseg/tensor.hpp"

namespace hairseg {

// Little-endian append-only buffer; files are built in memory so checksums
// and atomic writes see the final byte stream.
class BinWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void str(std::string_view s);
    void bytes(const void* data, std::size_t n);

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    std::size_t size() const noexcept { return buf_.size(); }

private:
    std::vector<std::uint8_t> buf_;
};

// Bounds-checked reader; running past the end reports a corrupt payload
// rather than returning partial values.
class BinReader {
public:
    explicit BinReader(const std::vector<std::uint8_t>& data) : data_(&data) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::string str();
    void bytes(void* out, std::size_t n);

    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_->size() - pos_; }

private:
    void need(std::size_t n);
    const std::vector<std::uint8_t>* data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
// write-temp, fsync, rename
void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes);

std::uint32_t crc32(const std::uint8_t* data, std::size_t n);
std::uint64_t fnv1a64(std::string_view s);

// ---- named tensor section ----
// Entries carry either raw f32 tensors (parameters, optimizer moments) or
// u64 rows (structural metadata). The section is a directory of
// (name, dtype, shape, offset) records followed by one contiguous data blob.

enum class Dtype : std::uint8_t { F32 = 0, U64 = 1 };

struct NamedBlob {
    std::string name;
    Dtype dtype = Dtype::F32;
    Shape shape;
    std::vector<float> f32;
    std::vector<std::uint64_t> u64;

    static NamedBlob tensor(std::string name, const TensorT<float>& t);
    static NamedBlob meta(std::string name, std::vector<std::uint64_t> values);

    TensorT<float> to_tensor() const;
};

void write_tensor_section(BinWriter& w, const std::vector<NamedBlob>& blobs);
std::vector<NamedBlob> read_tensor_section(BinReader& r);

// ---- weight file ----
// magic "HSWEIGHT" | u32 version | u64 config_hash | tensor section.
// The config hash identifies what the tensors parameterize; callers verify
// it against their own expectation and report a config mismatch.

inline constexpr std::string_view kWeightMagic = "HSWEIGHT";
inline constexpr std::uint32_t kWeightVersion = 1;

void write_weight_file(const std::string& path, std::uint64_t config_hash,
                       const std::vector<NamedBlob>& blobs);

struct WeightFile {
    std::uint64_t config_hash;
    std::vector<NamedBlob> blobs;
};
WeightFile read_weight_file(const std::string& path);

} // namespace hairseg
