#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gazekit {

// 8-bit raster, channels interleaved row-major. channels is 1 (PGM) or 3 (PPM).
struct Image {
    int w = 0;
    int h = 0;
    int channels = 1;
    std::vector<std::uint8_t> data;

    std::uint8_t& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
    std::uint8_t at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
};

// Binary P5/P6 with maxval <= 255.
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& img);

}  // namespace gazekit
