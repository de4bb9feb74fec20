#include "nowcast/pgm.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace nowcast {

void write_pgm(const std::string& path, const float* plane, int64_t h, int64_t w) {
  if (h < 1 || w < 1) throw std::runtime_error("write_pgm: empty plane");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      float v = plane[y * w + x];
      if (!(v > 0.0f)) v = 0.0f;  // also catches NaN
      if (v > 1.0f) v = 1.0f;
      row[static_cast<size_t>(x)] = static_cast<uint8_t>(std::floor(v * 255.0f + 0.5f));
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  os.flush();
  if (!os) throw std::runtime_error("write failed for " + path);
}

}  // namespace nowcast
