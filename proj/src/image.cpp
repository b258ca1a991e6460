#include "gazekit/image.hpp"

#include <cctype>
#include <string>

#include "gazekit/error.hpp"
#include "gazekit/textio.hpp"

namespace gazekit {

namespace {

// Reads the next whitespace-separated header token, skipping # comments.
std::string next_token(const std::string& buf, std::size_t& pos) {
    while (pos < buf.size()) {
        if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])))
        tok.push_back(buf[pos++]);
    return tok;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
    const std::string buf = textio::read_file(path);
    std::size_t pos = 0;
    const std::string magic = next_token(buf, pos);
    Image img;
    if (magic == "P5") {
        img.channels = 1;
    } else if (magic == "P6") {
        img.channels = 3;
    } else {
        throw FormatError(path.string() + ": not a binary PGM/PPM");
    }
    const auto w = textio::parse_int(next_token(buf, pos));
    const auto h = textio::parse_int(next_token(buf, pos));
    const auto maxval = textio::parse_int(next_token(buf, pos));
    if (!w || !h || !maxval || *w <= 0 || *h <= 0 || *maxval <= 0 || *maxval > 255)
        throw FormatError(path.string() + ": bad PNM header");
    ++pos;  // single whitespace after maxval
    img.w = static_cast<int>(*w);
    img.h = static_cast<int>(*h);
    const std::size_t n = static_cast<std::size_t>(img.w) * img.h * img.channels;
    if (buf.size() < pos + n) throw FormatError(path.string() + ": truncated raster");
    img.data.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                    buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
    std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.w) + " " +
                      std::to_string(img.h) + "\n255\n";
    out.append(img.data.begin(), img.data.end());
    textio::write_file(path, out);
}

}  // namespace gazekit
