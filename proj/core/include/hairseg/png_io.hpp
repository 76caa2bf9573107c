#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hairseg {

enum class PngColor { Gray, Rgb };

struct PngImage {
    std::size_t height = 0;
    std::size_t width = 0;
    PngColor color = PngColor::Rgb;
    std::vector<std::uint8_t> pixels; // interleaved rows, 1 or 3 bytes/pixel

    std::size_t channels() const noexcept { return color == PngColor::Rgb ? 3 : 1; }
};

// Decodes any 8/16-bit, palette or gray PNG into the requested layout.
PngImage read_png(const std::string& path, PngColor want);

void write_png(const std::string& path, const PngImage& img);

} // namespace hairseg
