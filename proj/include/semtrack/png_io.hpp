#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace semtrack {

struct Png8 {
  int width = 0, height = 0, channels = 0;  // channels: 1 or 3
  std::vector<uint8_t> data;                // row-major, interleaved
};

struct Png16 {
  int width = 0, height = 0;
  std::vector<uint16_t> data;  // single channel
};

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& rgb);
void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& gray);
void write_png_gray16(const std::string& path, int width, int height,
                      const std::vector<uint16_t>& gray);

Png8 read_png8(const std::string& path);    // 8-bit gray or RGB (alpha stripped)
Png16 read_png16(const std::string& path);  // 16-bit single channel

}  // namespace semtrack
