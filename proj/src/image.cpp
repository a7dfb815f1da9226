#include "coherent/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "coherent/common.hpp"

namespace coherent {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::uint8_t* data, std::size_t len) {
    put_u32(out, static_cast<std::uint32_t>(len));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, out.data() + start, static_cast<uInt>(4 + len)));
    put_u32(out, crc);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw IoError("png writer supports 1 or 3 channels, got " + std::to_string(img.channels));
    if (img.width <= 0 || img.height <= 0) throw IoError("png writer: empty image");

    const int bpp = img.channels;
    const std::size_t row_bytes = static_cast<std::size_t>(img.width) * bpp;
    std::vector<std::uint8_t> raw;
    raw.reserve((row_bytes + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter: none
        const std::uint8_t* row = img.pixels.data() + static_cast<std::size_t>(y) * row_bytes;
        raw.insert(raw.end(), row, row + row_bytes);
    }

    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_cap);
    if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png writer: deflate failed for " + path);
    comp.resize(comp_cap);

    std::vector<std::uint8_t> out;
    const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);

    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(img.width >> 24);
    ihdr[1] = static_cast<std::uint8_t>(img.width >> 16);
    ihdr[2] = static_cast<std::uint8_t>(img.width >> 8);
    ihdr[3] = static_cast<std::uint8_t>(img.width);
    ihdr[4] = static_cast<std::uint8_t>(img.height >> 24);
    ihdr[5] = static_cast<std::uint8_t>(img.height >> 16);
    ihdr[6] = static_cast<std::uint8_t>(img.height >> 8);
    ihdr[7] = static_cast<std::uint8_t>(img.height);
    ihdr[8] = 8;                                      // bit depth
    ihdr[9] = (img.channels == 1) ? 0 : 2;            // gray / truecolor
    ihdr[10] = 0;
    ihdr[11] = 0;
    ihdr[12] = 0;                                     // no interlace
    append_chunk(out, "IHDR", ihdr, 13);
    append_chunk(out, "IDAT", comp.data(), comp.size());
    append_chunk(out, "IEND", nullptr, 0);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write: " + path);
}

ImageU8 read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw IoError("not a png file: " + path);

    int width = 0, height = 0, color_type = -1;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    bool seen_iend = false;
    while (pos + 12 <= buf.size() && !seen_iend) {
        const std::uint32_t len = get_u32(&buf[pos]);
        if (pos + 12 + len > buf.size()) throw IoError("truncated png: " + path);
        const char* type = reinterpret_cast<const char*>(&buf[pos + 4]);
        const std::uint8_t* data = &buf[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("bad IHDR: " + path);
            width = static_cast<int>(get_u32(data));
            height = static_cast<int>(get_u32(data + 4));
            const int bit_depth = data[8];
            color_type = data[9];
            const int interlace = data[12];
            if (bit_depth != 8) throw IoError("unsupported png bit depth (want 8): " + path);
            if (interlace != 0) throw IoError("interlaced png unsupported: " + path);
            if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6)
                throw IoError("unsupported png color type " + std::to_string(color_type) + ": " + path);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0 || idat.empty()) throw IoError("malformed png: " + path);

    const int src_ch = (color_type == 0) ? 1 : (color_type == 2) ? 3 : (color_type == 4) ? 2 : 4;
    const std::size_t row_bytes = static_cast<std::size_t>(width) * src_ch;
    std::vector<std::uint8_t> raw((row_bytes + 1) * height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError("png inflate failed: " + path);

    // Undo scanline filters in place.
    std::vector<std::uint8_t> prev(row_bytes, 0);
    std::vector<std::uint8_t> cur(row_bytes);
    const int out_ch = (src_ch >= 3) ? 3 : 1;
    ImageU8 img(width, height, out_ch);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t* line = raw.data() + static_cast<std::size_t>(y) * (row_bytes + 1);
        const int filter = line[0];
        const std::uint8_t* src = line + 1;
        for (std::size_t i = 0; i < row_bytes; ++i) {
            const int x = static_cast<int>(i);
            const int a = (x >= src_ch) ? cur[i - src_ch] : 0;
            const int b = prev[i];
            const int c = (x >= src_ch) ? prev[i - src_ch] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw IoError("bad png filter type: " + path);
            }
            cur[i] = static_cast<std::uint8_t>(v & 0xff);
        }
        for (int x = 0; x < width; ++x)
            for (int ch = 0; ch < out_ch; ++ch)
                img.at(y, x, ch) = cur[static_cast<std::size_t>(x) * src_ch + ch];
        std::swap(prev, cur);
    }
    return img;
}

Tensor image_to_tensor(const ImageU8& img) {
    Tensor t({img.channels, img.height, img.width});
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.at3(c, y, x) = img.at(y, x, c) / 255.0;
    return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
    if (t.rank() != 3) throw ShapeError("tensor_to_image wants rank-3 CHW");
    ImageU8 img(t.dim(2), t.dim(1), t.dim(0));
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double v = std::clamp(t.at3(c, y, x), 0.0, 1.0);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    return img;
}

Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
    if (src.rank() != 3) throw ShapeError("resize_bilinear wants rank-3 CHW");
    const int ch = src.dim(0), in_h = src.dim(1), in_w = src.dim(2);
    if (in_h == out_h && in_w == out_w) return src;
    Tensor dst({ch, out_h, out_w});
    const double sy = static_cast<double>(in_h) / out_h;
    const double sx = static_cast<double>(in_w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - x0;
            for (int c = 0; c < ch; ++c) {
                const double top = src.at3(c, y0, x0) * (1 - wx) + src.at3(c, y0, x1) * wx;
                const double bot = src.at3(c, y1, x0) * (1 - wx) + src.at3(c, y1, x1) * wx;
                dst.at3(c, y, x) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

Tensor mask_from_image(const ImageU8& img) {
    Tensor m({img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            // Average channels, binarize at 0.5.
            int sum = 0;
            for (int c = 0; c < img.channels; ++c) sum += img.at(y, x, c);
            const double v = sum / (255.0 * img.channels);
            m.at2(y, x) = v >= 0.5 ? 1.0 : 0.0;
        }
    return m;
}

ImageU8 mask_to_image(const Tensor& mask) {
    if (mask.rank() != 2) throw ShapeError("mask_to_image wants rank-2");
    ImageU8 img(mask.dim(1), mask.dim(0), 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            img.at(y, x, 0) = mask.at2(y, x) >= 0.5 ? 255 : 0;
    return img;
}

Tensor downsample_area(const Tensor& src, int out_h, int out_w) {
    if (src.rank() != 2) throw ShapeError("downsample_area wants rank-2");
    if (out_h < 1 || out_w < 1) throw ShapeError("downsample_area: output dims must be >= 1");
    const int in_h = src.dim(0), in_w = src.dim(1);
    Tensor dst({out_h, out_w});
    const double cell_h = static_cast<double>(in_h) / out_h;
    const double cell_w = static_cast<double>(in_w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        const double y_lo = oy * cell_h, y_hi = (oy + 1) * cell_h;
        const int py0 = static_cast<int>(std::floor(y_lo));
        const int py1 = std::min(static_cast<int>(std::ceil(y_hi)), in_h);
        for (int ox = 0; ox < out_w; ++ox) {
            const double x_lo = ox * cell_w, x_hi = (ox + 1) * cell_w;
            const int px0 = static_cast<int>(std::floor(x_lo));
            const int px1 = std::min(static_cast<int>(std::ceil(x_hi)), in_w);
            double acc = 0.0;
            for (int py = py0; py < py1; ++py) {
                const double oy_cov = std::min<double>(py + 1, y_hi) - std::max<double>(py, y_lo);
                for (int px = px0; px < px1; ++px) {
                    const double ox_cov = std::min<double>(px + 1, x_hi) - std::max<double>(px, x_lo);
                    acc += oy_cov * ox_cov * src.at2(py, px);
                }
            }
            dst.at2(oy, ox) = acc / (cell_h * cell_w);
        }
    }
    return dst;
}

}  // namespace coherent
