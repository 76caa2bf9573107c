#include "hairseg/png_io.hpp"

#include <png.h>

#include "hairseg/error.hpp"

namespace hairseg {

PngImage read_png(const std::string& path, PngColor want) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        std::string msg = image.message;
        png_image_free(&image);
        raise(ErrorKind::Data, "cannot decode " + path + ": " + msg);
    }
    image.format = want == PngColor::Rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

    PngImage out;
    out.height = image.height;
    out.width = image.width;
    out.color = want;
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        raise(ErrorKind::Data, "cannot decode " + path + ": " + msg);
    }
    return out;
}

void write_png(const std::string& path, const PngImage& img) {
    HS_CHECK_PARAM(img.pixels.size() == img.height * img.width * img.channels(),
                   "write_png: pixel buffer size does not match extents");
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = img.color == PngColor::Rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        raise(ErrorKind::Io, "cannot write " + path + ": " + msg);
    }
}

} // namespace hairseg
