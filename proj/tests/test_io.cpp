#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mtseg/error.hpp"
#include "mtseg/io.hpp"

using namespace mtseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mtseg_test_io";
  fs::create_directories(dir);
  return dir / name;
}

Volume ramp_volume() {
  Volume v;
  v.nx = 5;
  v.ny = 4;
  v.nz = 3;
  v.spacing = {0.5, 0.25, 2.5};
  v.voxels.resize(60);
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = static_cast<float>(i) * 0.5f - 3.0f;
  return v;
}

template <class T>
void put_be(std::vector<unsigned char>& buf, std::size_t offset, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[offset + i] = bytes[sizeof(T) - 1 - i];
}

}  // namespace

TEST_CASE("NIfTI round trip, plain and gzipped") {
  const Volume v = ramp_volume();
  for (const char* name : {"ramp.nii", "ramp.nii.gz"}) {
    const fs::path p = scratch(name);
    save_volume(p, v);
    const Volume back = load_volume(p);
    CHECK(back.nx == 5);
    CHECK(back.ny == 4);
    CHECK(back.nz == 3);
    CHECK(back.spacing[0] == doctest::Approx(0.5));
    CHECK(back.spacing[1] == doctest::Approx(0.25));
    CHECK(back.spacing[2] == doctest::Approx(2.5));
    CHECK(back.voxels == v.voxels);
    CHECK(back.at(4, 3, 2) == v.at(4, 3, 2));
  }
}

TEST_CASE("NIfTI big-endian int16 with intensity scaling") {
  std::vector<unsigned char> buf(352 + 2 * 2 * 2 * 1, 0);
  put_be<std::int32_t>(buf, 0, 348);
  const std::int16_t dims[8] = {3, 2, 2, 1, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put_be<std::int16_t>(buf, 40 + 2 * i, dims[i]);
  put_be<std::int16_t>(buf, 70, 4);
  put_be<std::int16_t>(buf, 72, 16);
  const float pixdim[8] = {1, 0.3f, 0.4f, 3.0f, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put_be<float>(buf, 76 + 4 * i, pixdim[i]);
  put_be<float>(buf, 108, 352.0f);
  put_be<float>(buf, 112, 2.0f);
  put_be<float>(buf, 116, 1.0f);
  std::memcpy(buf.data() + 344, "n+1", 4);
  const std::int16_t raw[4] = {-3, 0, 7, 100};
  for (int i = 0; i < 4; ++i) put_be<std::int16_t>(buf, 352 + 2 * i, raw[i]);
  const fs::path p = scratch("be.nii");
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));

  const Volume v = load_volume(p);
  CHECK(v.nx == 2);
  CHECK(v.ny == 2);
  CHECK(v.nz == 1);
  CHECK(v.spacing[0] == doctest::Approx(0.3));
  CHECK(v.voxels == std::vector<float>{-5.0f, 1.0f, 15.0f, 201.0f});
}

TEST_CASE("NIfTI errors name the file") {
  CHECK_THROWS_AS((void)load_volume(scratch("absent.nii.gz")), IngestionError);
  const fs::path full = scratch("full.nii");
  save_volume(full, ramp_volume());
  const fs::path cut = scratch("cut.nii");
  fs::copy_file(full, cut, fs::copy_options::overwrite_existing);
  fs::resize_file(cut, fs::file_size(full) - 10);
  try {
    (void)load_volume(cut);
    FAIL("truncated volume loaded");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("cut.nii") != std::string::npos);
  }
  const fs::path junk = scratch("junk.nii");
  std::ofstream(junk) << "definitely not a nifti header";
  CHECK_THROWS_AS((void)load_volume(junk), IngestionError);
}

TEST_CASE("npy round trip") {
  const std::vector<float> f{1.5f, -2.0f, 3.25f, 0.0f, 7.0f, 8.0f};
  const std::vector<std::uint8_t> u{0, 1, 1, 0, 1, 0};
  write_npy(scratch("a.npy"), {2, 3}, f);
  write_npy(scratch("b.npy"), {3, 2}, u);
  const NpyArray a = read_npy(scratch("a.npy"));
  const NpyArray b = read_npy(scratch("b.npy"));
  CHECK(a.dtype == "<f4");
  CHECK(a.shape == std::vector<std::size_t>{2, 3});
  CHECK(a.f32 == f);
  CHECK(b.dtype == "|u1");
  CHECK(b.shape == std::vector<std::size_t>{3, 2});
  CHECK(b.u8 == u);
  CHECK_THROWS_AS((void)read_npy(scratch("missing.npy")), IngestionError);
}
