#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace diclet {

/// Frame-major mel spectrum: `values[t * bands + f]`.
struct MelSpectrum {
  std::uint32_t frames = 0;
  std::uint32_t bands = 0;
  std::vector<float> values;

  MelSpectrum() = default;
  MelSpectrum(std::uint32_t frames_, std::uint32_t bands_, float fill = 0.0f)
      : frames(frames_), bands(bands_), values(std::size_t{frames_} * bands_, fill) {}

  float& at(std::size_t t, std::size_t f) { return values[t * bands + f]; }
  float at(std::size_t t, std::size_t f) const { return values[t * bands + f]; }

  std::span<float> frame(std::size_t t) { return {values.data() + t * bands, bands}; }
  std::span<const float> frame(std::size_t t) const {
    return {values.data() + t * bands, bands};
  }

  bool all_finite() const;

  bool operator==(const MelSpectrum&) const = default;
};

// DMEL container: "DMEL", u32 frames, u32 bands, frames*bands f32, all little-endian.
inline constexpr char kMelMagic[4] = {'D', 'M', 'E', 'L'};
inline constexpr std::size_t kMelHeaderBytes = 12;

MelSpectrum read_mel(const std::filesystem::path& path);
void write_mel(const MelSpectrum& mel, const std::filesystem::path& path);

/// Reads only the header; used by manifest validation.
std::uint32_t read_mel_frames(const std::filesystem::path& path);

}  // namespace diclet
