#include "diclet/mel.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "diclet/error.hpp"

namespace diclet {
namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(p[i])} << (8 * i);
  return v;
}

struct Header {
  std::uint32_t frames;
  std::uint32_t bands;
};

Header parse_header(const char* bytes, std::size_t size, const std::filesystem::path& path) {
  if (size < kMelHeaderBytes) throw Error("mel file truncated header: " + path.string());
  if (std::memcmp(bytes, kMelMagic, 4) != 0) throw Error("bad mel magic in " + path.string());
  return {get_u32(bytes + 4), get_u32(bytes + 8)};
}

}  // namespace

bool MelSpectrum::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

MelSpectrum read_mel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open mel file: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const Header h = parse_header(bytes.data(), bytes.size(), path);

  const std::size_t count = std::size_t{h.frames} * h.bands;
  const std::size_t payload = bytes.size() - kMelHeaderBytes;
  if (payload != count * 4) {
    throw Error("mel payload length mismatch in " + path.string() + ": header says " +
                std::to_string(h.frames) + "x" + std::to_string(h.bands) + " (" +
                std::to_string(count * 4) + " bytes), found " + std::to_string(payload));
  }

  MelSpectrum mel(h.frames, h.bands);
  const char* p = bytes.data() + kMelHeaderBytes;
  for (std::size_t i = 0; i < count; ++i, p += 4) mel.values[i] = std::bit_cast<float>(get_u32(p));
  return mel;
}

void write_mel(const MelSpectrum& mel, const std::filesystem::path& path) {
  if (mel.values.size() != std::size_t{mel.frames} * mel.bands) {
    throw Error("mel value count does not match frames*bands");
  }
  std::vector<char> out;
  out.reserve(kMelHeaderBytes + mel.values.size() * 4);
  out.insert(out.end(), kMelMagic, kMelMagic + 4);
  put_u32(out, mel.frames);
  put_u32(out, mel.bands);
  for (float v : mel.values) put_u32(out, std::bit_cast<std::uint32_t>(v));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write mel file: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("short write to mel file: " + path.string());
}

std::uint32_t read_mel_frames(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open mel file: " + path.string());
  std::array<char, kMelHeaderBytes> head{};
  in.read(head.data(), head.size());
  return parse_header(head.data(), static_cast<std::size_t>(in.gcount()), path).frames;
}

}  // namespace diclet
