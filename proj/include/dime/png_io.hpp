#ifndef DIME_PNG_IO_HPP
#define DIME_PNG_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dime/imaging.hpp"

namespace dime {

// Minimal PNG codec for 8/16-bit truecolor RGB (no interlacing, no
// palette). Anything else is rejected: IoError for unreadable paths,
// FormatError for non-PNG/corrupt/unsupported files, ChannelError for
// grayscale or RGBA inputs.
Image decode_png(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_png(const Image& img, int bit_depth = 8);

Image load_image(const std::string& path);
void save_image(const Image& img, const std::string& path, int bit_depth = 8);

}  // namespace dime

#endif
