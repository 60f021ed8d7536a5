#include "fewcount/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include <png.h>

#include <cstddef>
extern "C" {
#include <jpeglib.h>
}

#include "fewcount/errors.hpp"

namespace fewcount {

namespace {

std::string lower_ext(const std::string& path) {
    auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

Tensor<uint8_t> planar_from_interleaved(const std::vector<uint8_t>& rgb, int h, int w) {
    Tensor<uint8_t> out(Shape{3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t src = (static_cast<size_t>(y) * w + x) * 3;
            out.at(0, y, x) = rgb[src];
            out.at(1, y, x) = rgb[src + 1];
            out.at(2, y, x) = rgb[src + 2];
        }
    return out;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Tensor<uint8_t> read_png_file(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ValidationError("cannot open image file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng initialisation failed");
    }
    std::vector<uint8_t> rgb;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError("corrupt PNG file: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    rgb.resize(static_cast<size_t>(w) * h * 3);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = rgb.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return planar_from_interleaved(rgb, static_cast<int>(h), static_cast<int>(w));
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jmp;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jmp, 1);
}

Tensor<uint8_t> read_jpeg_file(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ValidationError("cannot open image file: " + path);
    jpeg_decompress_struct cinfo{};
    JpegErrorMgr jerr{};
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jmp)) {
        jpeg_destroy_decompress(&cinfo);
        throw ValidationError("corrupt JPEG file: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    int w = static_cast<int>(cinfo.output_width);
    int h = static_cast<int>(cinfo.output_height);
    std::vector<uint8_t> rgb(static_cast<size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        uint8_t* row = rgb.data() + static_cast<size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return planar_from_interleaved(rgb, h, w);
}

Tensor<uint8_t> read_ppm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open image file: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw ValidationError("unsupported PPM variant in " + path);
    auto next_token = [&]() -> long {
        long v = 0;
        // skip whitespace and '#' comments
        int c = in.get();
        while (c != EOF && (std::isspace(c) || c == '#')) {
            if (c == '#')
                while (c != EOF && c != '\n') c = in.get();
            c = in.get();
        }
        if (c == EOF) throw ValidationError("truncated PPM header in " + path);
        while (c != EOF && std::isdigit(c)) {
            v = v * 10 + (c - '0');
            c = in.get();
        }
        return v;
    };
    long w = next_token();
    long h = next_token();
    long maxval = next_token();
    if (w <= 0 || h <= 0 || maxval != 255)
        throw ValidationError("unsupported PPM header in " + path);
    std::vector<uint8_t> rgb(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(rgb.size()))
        throw ValidationError("truncated PPM data in " + path);
    return planar_from_interleaved(rgb, static_cast<int>(h), static_cast<int>(w));
}

} // namespace

bool has_image_extension(const std::string& filename) {
    std::string e = lower_ext(filename);
    return e == "png" || e == "jpg" || e == "jpeg" || e == "ppm";
}

Tensor<uint8_t> read_image(const std::string& path) {
    std::string e = lower_ext(path);
    if (e == "png") return read_png_file(path);
    if (e == "jpg" || e == "jpeg") return read_jpeg_file(path);
    if (e == "ppm") return read_ppm_file(path);
    throw ValidationError("unsupported image format: " + path);
}

void write_png(const std::string& path, const Tensor<uint8_t>& image) {
    int channels = 0;
    int h = 0, w = 0;
    if (image.rank() == 3 && image.dim(0) == 3) {
        channels = 3;
        h = image.dim(1);
        w = image.dim(2);
    } else if (image.rank() == 2) {
        channels = 1;
        h = image.dim(0);
        w = image.dim(1);
    } else {
        throw ShapeError("write_png: expected (3,H,W) or (H,W), got " + shape_str(image.shape()));
    }
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error("cannot write image file: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng initialisation failed");
    }
    std::vector<uint8_t> row(static_cast<size_t>(w) * channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) {
        if (channels == 3) {
            for (int x = 0; x < w; ++x) {
                row[static_cast<size_t>(x) * 3] = image.at(0, y, x);
                row[static_cast<size_t>(x) * 3 + 1] = image.at(1, y, x);
                row[static_cast<size_t>(x) * 3 + 2] = image.at(2, y, x);
            }
        } else {
            for (int x = 0; x < w; ++x) row[static_cast<size_t>(x)] = image.at(y, x);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace fewcount
