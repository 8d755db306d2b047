#pragma once

// Test-side writer for the 3073-byte-record binary image format. Kept
// independent of the loader so round-trip tests mean something.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace testsupport {

struct CifarRecord {
  uint8_t label = 0;
  // 3 channel planes of 1024 bytes each, row-major 32x32.
  std::vector<uint8_t> pixels = std::vector<uint8_t>(3072, 0);
};

inline void write_cifar10(const std::string& path,
                          const std::vector<CifarRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_cifar10: cannot open " + path);
  for (const auto& rec : records) {
    out.put(static_cast<char>(rec.label));
    out.write(reinterpret_cast<const char*>(rec.pixels.data()),
              static_cast<std::streamsize>(rec.pixels.size()));
  }
}

inline void write_raw(const std::string& path,
                      const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_raw: cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace testsupport
