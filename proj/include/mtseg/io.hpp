#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mtseg {

// 3D scalar volume. Voxels are stored x-fastest, then y, then z (NIfTI order);
// axial planes are the z slices.
struct Volume {
  int nx = 0, ny = 0, nz = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm
  std::vector<float> voxels;
  std::string subject_id;
  std::string center_id;

  [[nodiscard]] std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * (y + static_cast<std::size_t>(ny) * z);
  }
  float& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
  [[nodiscard]] float at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
};

// NIfTI-1 single-file volumes (.nii, .nii.gz). Supports the common integer and
// floating datatypes, either byte order, and scl_slope/scl_inter scaling.
// Throws IngestionError (with the path in the message) on missing, truncated or
// malformed files.
[[nodiscard]] Volume load_volume(const std::filesystem::path& path);

// Writes float32 NIfTI-1; gzip-compressed when the name ends in ".gz".
void save_volume(const std::filesystem::path& path, const Volume& v);

// Minimal .npy (format 1.0) support for little-endian float32 and uint8 arrays.
struct NpyArray {
  std::vector<std::size_t> shape;
  std::string dtype;  // "<f4" or "|u1"
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
};

void write_npy(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
               const std::vector<float>& data);
void write_npy(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
               const std::vector<std::uint8_t>& data);
[[nodiscard]] NpyArray read_npy(const std::filesystem::path& path);

}  // namespace mtseg
