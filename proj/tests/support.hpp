#pragma once

#include <doctest.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "treecarbon/error.hpp"

#define CHECK_ERROR_KIND(expr, expected_kind)                                   \
  do {                                                                          \
    bool caught_ = false;                                                       \
    try {                                                                       \
      (void)(expr);                                                             \
    } catch (const ::treecarbon::Error& e_) {                                   \
      caught_ = true;                                                           \
      CHECK_MESSAGE(e_.kind() == (expected_kind), "got " << e_.what());         \
    }                                                                           \
    CHECK_MESSAGE(caught_, "expected treecarbon::Error from " #expr);           \
  } while (0)

namespace testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("treecarbon_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Minimal classic-TIFF assembler, independent of the library writer, used to
// build reader fixtures in either byte order.
struct TiffEntry {
  std::uint16_t tag;
  std::uint16_t type;  // 2 ascii, 3 short, 4 long, 12 double
  std::vector<double> values;
  std::string text;
};

inline std::vector<std::uint8_t> assemble_tiff(std::vector<TiffEntry> entries,
                                               const std::vector<std::uint8_t>& pixel_data,
                                               bool big_endian, std::uint16_t data_offset_tag = 273) {
  std::vector<std::uint8_t> out;
  auto put = [&](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) {
      const int shift = big_endian ? 8 * (n - 1 - i) : 8 * i;
      out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
    }
  };
  auto type_size = [](std::uint16_t t) { return t == 2 ? 1 : t == 3 ? 2 : t == 4 ? 4 : 8; };
  auto payload = [&](const TiffEntry& e) {
    std::vector<std::uint8_t> bytes;
    auto put_into = [&](std::uint64_t v, int n) {
      for (int i = 0; i < n; ++i) {
        const int shift = big_endian ? 8 * (n - 1 - i) : 8 * i;
        bytes.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
      }
    };
    if (e.type == 2) {
      bytes.assign(e.text.begin(), e.text.end());
      bytes.push_back(0);
    } else {
      for (double v : e.values) {
        if (e.type == 12) {
          put_into(std::bit_cast<std::uint64_t>(v), 8);
        } else {
          put_into(static_cast<std::uint64_t>(v), type_size(e.type));
        }
      }
    }
    return bytes;
  };
  std::sort(entries.begin(), entries.end(), [](auto& a, auto& b) { return a.tag < b.tag; });
  out.push_back(big_endian ? 'M' : 'I');
  out.push_back(big_endian ? 'M' : 'I');
  put(42, 2);
  put(8, 4);
  const std::size_t ifd_size = 2 + 12 * entries.size() + 4;
  std::size_t cursor = 8 + ifd_size;
  const std::size_t data_offset = cursor;
  cursor += pixel_data.size();
  std::vector<std::vector<std::uint8_t>> payloads;
  std::vector<std::size_t> offsets;
  for (auto& e : entries) {
    if (e.tag == data_offset_tag) e.values = {static_cast<double>(data_offset)};
    payloads.push_back(payload(e));
    if (payloads.back().size() > 4) {
      offsets.push_back(cursor);
      cursor += payloads.back().size();
    } else {
      offsets.push_back(0);
    }
  }
  put(entries.size(), 2);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    put(e.tag, 2);
    put(e.type, 2);
    put(e.type == 2 ? payloads[i].size() : e.values.size(), 4);
    if (payloads[i].size() > 4) {
      put(offsets[i], 4);
    } else {
      // Inline values are left-justified in the 4-byte slot.
      std::vector<std::uint8_t> slot = payloads[i];
      slot.resize(4, 0);
      out.insert(out.end(), slot.begin(), slot.end());
    }
  }
  put(0, 4);
  out.insert(out.end(), pixel_data.begin(), pixel_data.end());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (payloads[i].size() > 4) out.insert(out.end(), payloads[i].begin(), payloads[i].end());
  }
  return out;
}

}  // namespace testing
