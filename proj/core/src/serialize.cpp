#include "hairseg/serialize.hpp"

#include <array>
#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstring>

#include <fcntl.h>
#include <unistd.h>

#include "hairseg/error.hpp"

namespace hairseg {

void BinWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void BinWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinWriter::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
}

void BinWriter::bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
}

void BinReader::need(std::size_t n) {
    HS_CHECK(pos_ + n <= data_->size(), ErrorKind::Corrupt,
             "truncated payload: need " << n << " bytes at offset " << pos_ << ", have "
                                        << data_->size() - pos_);
}

std::uint8_t BinReader::u8() {
    need(1);
    return (*data_)[pos_++];
}

std::uint32_t BinReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t((*data_)[pos_++]) << (8 * i);
    return v;
}

std::uint64_t BinReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t((*data_)[pos_++]) << (8 * i);
    return v;
}

float BinReader::f32() { return std::bit_cast<float>(u32()); }
double BinReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinReader::str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_->data() + pos_), n);
    pos_ += n;
    return s;
}

void BinReader::bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_->data() + pos_, n);
    pos_ += n;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    HS_CHECK(f != nullptr, ErrorKind::Io, "cannot open " << path << ": " << std::strerror(errno));
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<std::uint8_t> data(size > 0 ? static_cast<std::size_t>(size) : 0);
    const std::size_t got = data.empty() ? 0 : std::fread(data.data(), 1, data.size(), f);
    std::fclose(f);
    HS_CHECK(got == data.size(), ErrorKind::Io, "short read from " << path);
    return data;
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    HS_CHECK(fd >= 0, ErrorKind::Io, "cannot create " << tmp << ": " << std::strerror(errno));
    std::size_t off = 0;
    while (off < bytes.size()) {
        const ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
        if (n < 0) {
            ::close(fd);
            raise(ErrorKind::Io, "write failed for " + tmp + ": " + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
    HS_CHECK(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorKind::Io,
             "rename " << tmp << " -> " << path << " failed: " << std::strerror(errno));
}

std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

NamedBlob NamedBlob::tensor(std::string name, const TensorT<float>& t) {
    NamedBlob b;
    b.name = std::move(name);
    b.dtype = Dtype::F32;
    b.shape = t.shape();
    b.f32 = t.vec();
    return b;
}

NamedBlob NamedBlob::meta(std::string name, std::vector<std::uint64_t> values) {
    NamedBlob b;
    b.name = std::move(name);
    b.dtype = Dtype::U64;
    b.shape = {values.size()};
    b.u64 = std::move(values);
    return b;
}

TensorT<float> NamedBlob::to_tensor() const {
    HS_CHECK(dtype == Dtype::F32, ErrorKind::Corrupt, "blob " << name << " is not an f32 tensor");
    return TensorT<float>(shape, f32);
}

void write_tensor_section(BinWriter& w, const std::vector<NamedBlob>& blobs) {
    w.u32(static_cast<std::uint32_t>(blobs.size()));
    std::uint64_t offset = 0;
    for (const auto& b : blobs) {
        const std::size_t count = shape_numel(b.shape);
        w.str(b.name);
        w.u8(static_cast<std::uint8_t>(b.dtype));
        w.u32(static_cast<std::uint32_t>(b.shape.size()));
        for (std::size_t d : b.shape) w.u64(d);
        w.u64(offset);
        offset += count * (b.dtype == Dtype::F32 ? 4 : 8);
    }
    w.u64(offset); // total data bytes
    for (const auto& b : blobs) {
        if (b.dtype == Dtype::F32) {
            HS_CHECK(b.f32.size() == shape_numel(b.shape), ErrorKind::Contract,
                     "blob " << b.name << " length mismatch");
            for (float v : b.f32) w.f32(v);
        } else {
            HS_CHECK(b.u64.size() == shape_numel(b.shape), ErrorKind::Contract,
                     "blob " << b.name << " length mismatch");
            for (std::uint64_t v : b.u64) w.u64(v);
        }
    }
}

std::vector<NamedBlob> read_tensor_section(BinReader& r) {
    const std::uint32_t count = r.u32();
    struct DirEntry {
        NamedBlob blob;
        std::uint64_t offset;
    };
    std::vector<DirEntry> dir;
    dir.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        DirEntry e;
        e.blob.name = r.str();
        const std::uint8_t dt = r.u8();
        HS_CHECK(dt <= 1, ErrorKind::Corrupt, "unknown dtype code " << int(dt));
        e.blob.dtype = static_cast<Dtype>(dt);
        const std::uint32_t ndim = r.u32();
        HS_CHECK(ndim <= 8, ErrorKind::Corrupt, "implausible rank " << ndim);
        e.blob.shape.resize(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) e.blob.shape[d] = r.u64();
        e.offset = r.u64();
        dir.push_back(std::move(e));
    }
    const std::uint64_t data_bytes = r.u64();
    HS_CHECK(data_bytes <= r.remaining(), ErrorKind::Corrupt,
             "truncated payload: data section declares " << data_bytes << " bytes, have "
                                                         << r.remaining());
    // Payloads are laid out in directory order; offsets are validated against
    // the declared section size so truncation never yields partial tensors.
    std::uint64_t expected_offset = 0;
    std::vector<NamedBlob> out;
    out.reserve(count);
    for (auto& e : dir) {
        const std::size_t n = shape_numel(e.blob.shape);
        const std::size_t width = e.blob.dtype == Dtype::F32 ? 4 : 8;
        HS_CHECK(e.offset == expected_offset && e.offset + n * width <= data_bytes,
                 ErrorKind::Corrupt, "tensor " << e.blob.name << " has a bad data offset");
        expected_offset += n * width;
        if (e.blob.dtype == Dtype::F32) {
            e.blob.f32.resize(n);
            for (std::size_t k = 0; k < n; ++k) e.blob.f32[k] = r.f32();
        } else {
            e.blob.u64.resize(n);
            for (std::size_t k = 0; k < n; ++k) e.blob.u64[k] = r.u64();
        }
        out.push_back(std::move(e.blob));
    }
    HS_CHECK(expected_offset == data_bytes, ErrorKind::Corrupt,
             "data section size mismatch: directory sums to " << expected_offset
                                                              << ", header says " << data_bytes);
    return out;
}

void write_weight_file(const std::string& path, std::uint64_t config_hash,
                       const std::vector<NamedBlob>& blobs) {
    BinWriter w;
    w.bytes(kWeightMagic.data(), kWeightMagic.size());
    w.u32(kWeightVersion);
    w.u64(config_hash);
    write_tensor_section(w, blobs);
    write_file_atomic(path, w.buffer());
}

WeightFile read_weight_file(const std::string& path) {
    const auto data = read_file_bytes(path);
    BinReader r(data);
    char magic[8];
    r.bytes(magic, 8);
    HS_CHECK(std::string_view(magic, 8) == kWeightMagic, ErrorKind::Corrupt,
             path << " is not a weight file (bad magic)");
    const std::uint32_t version = r.u32();
    HS_CHECK(version == kWeightVersion, ErrorKind::VersionMismatch,
             path << " has format version " << version << ", expected " << kWeightVersion);
    WeightFile wf;
    wf.config_hash = r.u64();
    wf.blobs = read_tensor_section(r);
    return wf;
}

} // namespace hairseg
