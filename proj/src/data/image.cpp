#include <cmath>
#include <csetjmp>
#include <cstdio>

#include <png.h>

#include "nvs/core/errors.hpp"
#include "nvs/data/image.hpp"

namespace nvs::img {

void write_png(const std::string& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3)
        throw IoError("write_png: unsupported channel count");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng write failure: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(image.height));
    const size_t stride = static_cast<size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(image.pixels.data() + y * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image8 read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open for read: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng read failure: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    const png_byte color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    Image8 out;
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = static_cast<int>(png_get_channels(png, info));
    if (out.channels != 1 && out.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("read_png: unsupported channel count in " + path);
    }
    out.pixels.resize(static_cast<size_t>(out.width) * out.height * out.channels);
    std::vector<png_bytep> rows(static_cast<size_t>(out.height));
    const size_t stride = static_cast<size_t>(out.width) * out.channels;
    for (int y = 0; y < out.height; ++y)
        rows[static_cast<size_t>(y)] = out.pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

Tensor to_float(const Image8& image) {
    Tensor t({image.height, image.width, image.channels});
    const size_t n = image.pixels.size();
    for (size_t i = 0; i < n; ++i) t[static_cast<int64_t>(i)] = image.pixels[i] / 255.f;
    return t;
}

Image8 to_u8(const Tensor& hwc) {
    if (hwc.ndim() != 3) throw ShapeError("to_u8: need [H,W,C]");
    Image8 out;
    out.height = static_cast<int>(hwc.dim(0));
    out.width = static_cast<int>(hwc.dim(1));
    out.channels = static_cast<int>(hwc.dim(2));
    out.pixels.resize(static_cast<size_t>(hwc.numel()));
    for (int64_t i = 0; i < hwc.numel(); ++i) {
        const float v = std::min(1.f, std::max(0.f, hwc[i]));
        out.pixels[static_cast<size_t>(i)] =
            static_cast<uint8_t>(std::lround(v * 255.f));
    }
    return out;
}

Tensor resize_bilinear(const Tensor& hwc, int new_h, int new_w) {
    if (hwc.ndim() != 3) throw ShapeError("resize_bilinear: need [H,W,C]");
    const int h = static_cast<int>(hwc.dim(0));
    const int w = static_cast<int>(hwc.dim(1));
    const int c = static_cast<int>(hwc.dim(2));
    Tensor out({new_h, new_w, c});
    for (int y = 0; y < new_h; ++y) {
        const float sy = (y + 0.5f) * h / new_h - 0.5f;
        const int y0 = std::max(0, std::min(h - 1, static_cast<int>(std::floor(sy))));
        const int y1 = std::min(h - 1, y0 + 1);
        const float fy = std::max(0.f, std::min(1.f, sy - y0));
        for (int x = 0; x < new_w; ++x) {
            const float sx = (x + 0.5f) * w / new_w - 0.5f;
            const int x0 = std::max(0, std::min(w - 1, static_cast<int>(std::floor(sx))));
            const int x1 = std::min(w - 1, x0 + 1);
            const float fx = std::max(0.f, std::min(1.f, sx - x0));
            for (int k = 0; k < c; ++k) {
                const float v00 = hwc.at(y0, x0, k), v01 = hwc.at(y0, x1, k);
                const float v10 = hwc.at(y1, x0, k), v11 = hwc.at(y1, x1, k);
                out.at(y, x, k) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                  fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

Tensor hwc_to_nchw(const Tensor& hwc) {
    if (hwc.ndim() != 3) throw ShapeError("hwc_to_nchw: need [H,W,C]");
    const int64_t h = hwc.dim(0), w = hwc.dim(1), c = hwc.dim(2);
    Tensor out({1, c, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t k = 0; k < c; ++k) out.at(0, k, y, x) = hwc.at(y, x, k);
    return out;
}

Tensor nchw_to_hwc(const Tensor& nchw) {
    if (nchw.ndim() != 4 || nchw.dim(0) != 1) throw ShapeError("nchw_to_hwc: need [1,C,H,W]");
    const int64_t c = nchw.dim(1), h = nchw.dim(2), w = nchw.dim(3);
    Tensor out({h, w, c});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t k = 0; k < c; ++k) out.at(y, x, k) = nchw.at(0, k, y, x);
    return out;
}

}  // namespace nvs::img
