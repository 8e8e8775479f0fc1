#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "wbx/errors.hpp"

namespace wbx {

// Binary PGM (P5), maxval 255.
struct PgmImage {
  int h = 0, w = 0;
  std::vector<uint8_t> pixels;  // row-major

  uint8_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * w + x]; }
  uint8_t& at(int y, int x) { return pixels[static_cast<size_t>(y) * w + x]; }
};

inline void write_pgm(const std::string& path, const PgmImage& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data_error("pgm: cannot open for write: " + path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw data_error("pgm: write failed: " + path);
}

inline PgmImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("pgm: cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw data_error("pgm: not a binary PGM (P5): " + path);
  auto next_int = [&f, &path]() {
    // skip whitespace and '#' comment lines
    for (;;) {
      const int ch = f.peek();
      if (ch == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(ch)) {
        f.get();
      } else {
        break;
      }
    }
    int v = -1;
    f >> v;
    if (!f || v < 0) throw data_error("pgm: malformed header: " + path);
    return v;
  };
  PgmImage img;
  img.w = next_int();
  img.h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw data_error("pgm: unsupported maxval " + std::to_string(maxval));
  f.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<size_t>(img.w) * img.h);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw data_error("pgm: truncated pixel data: " + path);
  return img;
}

}  // namespace wbx
