#include "dime/png_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "dime/core/errors.hpp"

namespace dime {
namespace {

constexpr uint8_t kPngMagic[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint32_t read_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void write_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

void write_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    write_u32(out, static_cast<uint32_t>(data.size()));
    size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + type_pos, static_cast<uInt>(4 + data.size()));
    write_u32(out, crc);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

std::vector<uint8_t> zlib_inflate(const uint8_t* data, size_t len, size_t expected) {
    std::vector<uint8_t> out(expected);
    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) throw FormatError("png: inflate init failed");
    zs.next_in = const_cast<Bytef*>(data);
    zs.avail_in = static_cast<uInt>(len);
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    int rc = inflate(&zs, Z_FINISH);
    size_t produced = out.size() - zs.avail_out;
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || produced != expected)
        throw FormatError("png: corrupt or truncated image data");
    return out;
}

std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& data) {
    uLongf bound = compressBound(static_cast<uLong>(data.size()));
    std::vector<uint8_t> out(bound);
    if (compress2(out.data(), &bound, data.data(), static_cast<uLong>(data.size()), 6) != Z_OK)
        throw FormatError("png: deflate failed");
    out.resize(bound);
    return out;
}

}  // namespace

Image decode_png(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngMagic, 8) != 0)
        throw FormatError("not a PNG file");

    size_t pos = 8;
    bool have_ihdr = false;
    uint32_t width = 0, height = 0;
    int bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;

    while (pos + 12 <= bytes.size()) {
        uint32_t len = read_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw FormatError("png: truncated chunk");
        const uint8_t* type = bytes.data() + pos + 4;
        const uint8_t* data = bytes.data() + pos + 8;
        uint32_t crc_stored = read_u32(data + len);
        char tag[5] = {char(type[0]), char(type[1]), char(type[2]), char(type[3]), 0};

        bool critical = (type[0] & 0x20) == 0;
        if (critical) {
            uint32_t crc = crc32(0L, Z_NULL, 0);
            crc = crc32(crc, type, 4 + len);
            if (crc != crc_stored) throw FormatError(std::string("png: bad CRC in ") + tag);
        }

        if (std::strcmp(tag, "IHDR") == 0) {
            if (len != 13) throw FormatError("png: bad IHDR length");
            width = read_u32(data);
            height = read_u32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            int interlace = data[12];
            if (data[10] != 0 || data[11] != 0) throw FormatError("png: unknown compression/filter");
            if (interlace != 0) throw FormatError("png: interlaced images are not supported");
            if (color_type == 0 || color_type == 4)
                throw ChannelError("png: grayscale image, 3 channels required");
            if (color_type == 6) throw ChannelError("png: RGBA image, 3 channels required");
            if (color_type == 3) throw FormatError("png: palette images are not supported");
            if (color_type != 2) throw FormatError("png: unsupported color type");
            if (bit_depth != 8 && bit_depth != 16)
                throw FormatError("png: only 8/16-bit depth supported");
            if (width == 0 || height == 0) throw FormatError("png: empty image");
            have_ihdr = true;
        } else if (std::strcmp(tag, "IDAT") == 0) {
            if (!have_ihdr) throw FormatError("png: IDAT before IHDR");
            idat.insert(idat.end(), data, data + len);
        } else if (std::strcmp(tag, "IEND") == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!have_ihdr || idat.empty()) throw FormatError("png: missing IHDR or IDAT");

    const int bps = bit_depth / 8;          // bytes per sample
    const size_t bpp = 3 * static_cast<size_t>(bps);  // bytes per pixel
    const size_t row_bytes = bpp * width;
    std::vector<uint8_t> raw = zlib_inflate(idat.data(), idat.size(), (row_bytes + 1) * height);

    // Undo per-row filters in place into `pix`.
    std::vector<uint8_t> pix(row_bytes * height);
    for (uint32_t y = 0; y < height; ++y) {
        const uint8_t* src = raw.data() + y * (row_bytes + 1);
        uint8_t filter = src[0];
        ++src;
        uint8_t* dst = pix.data() + y * row_bytes;
        const uint8_t* up = (y > 0) ? pix.data() + (y - 1) * row_bytes : nullptr;
        for (size_t i = 0; i < row_bytes; ++i) {
            int a = i >= bpp ? dst[i - bpp] : 0;
            int b = up ? up[i] : 0;
            int c = (up && i >= bpp) ? up[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw FormatError("png: unknown filter type");
            }
            dst[i] = static_cast<uint8_t>(v & 0xff);
        }
    }

    Array<float> out({static_cast<int>(height), static_cast<int>(width), 3});
    const float scale8 = 1.0f / 255.0f;
    const float scale16 = 1.0f / 65535.0f;
    size_t k = 0;
    for (uint32_t y = 0; y < height; ++y) {
        const uint8_t* row = pix.data() + y * row_bytes;
        for (uint32_t x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                if (bps == 1) {
                    out.v[k++] = row[x * 3 + c] * scale8;
                } else {
                    size_t off = (x * 3 + c) * 2;
                    uint16_t s = static_cast<uint16_t>((row[off] << 8) | row[off + 1]);
                    out.v[k++] = s * scale16;
                }
            }
        }
    }
    return Image::from_array(std::move(out));
}

std::vector<uint8_t> encode_png(const Image& img, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw FormatError("png: only 8/16-bit encode");
    const int H = img.height(), W = img.width();
    const int bps = bit_depth / 8;
    const size_t row_bytes = static_cast<size_t>(W) * 3 * bps;

    std::vector<uint8_t> filtered((row_bytes + 1) * H);
    size_t k = 0;
    for (int y = 0; y < H; ++y) {
        filtered[k++] = 0;  // filter: none
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                float v = img.data.at(y, x, c);
                if (bps == 1) {
                    filtered[k++] = static_cast<uint8_t>(std::lround(v * 255.0f));
                } else {
                    auto s = static_cast<uint16_t>(std::lround(v * 65535.0f));
                    filtered[k++] = static_cast<uint8_t>(s >> 8);
                    filtered[k++] = static_cast<uint8_t>(s & 0xff);
                }
            }
        }
    }

    std::vector<uint8_t> out(kPngMagic, kPngMagic + 8);
    std::vector<uint8_t> ihdr;
    write_u32(ihdr, static_cast<uint32_t>(W));
    write_u32(ihdr, static_cast<uint32_t>(H));
    ihdr.push_back(static_cast<uint8_t>(bit_depth));
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", zlib_deflate(filtered));
    write_chunk(out, "IEND", {});
    return out;
}

Image load_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (!f.good() && !f.eof()) throw IoError("read error on " + path);
    return decode_png(bytes);
}

void save_image(const Image& img, const std::string& path, int bit_depth) {
    std::vector<uint8_t> bytes = encode_png(img, bit_depth);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f.good()) throw IoError("write error on " + path);
}

}  // namespace dime
