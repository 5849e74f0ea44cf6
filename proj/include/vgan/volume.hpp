#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vgan {

// Voxel size of the training data after factor-2 subsampling of 60.7 um scans.
inline constexpr float kDefaultSpacingUm = 121.4f;

struct Shape3 {
  int64_t d1 = 0;  // depth (axial slices)
  int64_t d2 = 0;  // height
  int64_t d3 = 0;  // width

  int64_t voxels() const { return d1 * d2 * d3; }
  bool valid() const { return d1 >= 1 && d2 >= 1 && d3 >= 1; }
  Shape3 scaled_down(int64_t factor) const { return {d1 / factor, d2 / factor, d3 / factor}; }
  std::string str() const;

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

// Dense 3D gray-scale grid, row-major over (d1, d2, d3).
class Volume {
 public:
  Volume() = default;
  explicit Volume(Shape3 shape, float spacing_um = kDefaultSpacingUm);
  Volume(Shape3 shape, std::vector<float> data, float spacing_um = kDefaultSpacingUm);

  const Shape3& shape() const { return shape_; }
  float spacing_um() const { return spacing_um_; }
  void set_spacing_um(float s) { spacing_um_ = s; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& values() const { return data_; }

  size_t index(int64_t i, int64_t j, int64_t k) const {
    return static_cast<size_t>((i * shape_.d2 + j) * shape_.d3 + k);
  }
  float& at(int64_t i, int64_t j, int64_t k) { return data_[index(i, j, k)]; }
  float at(int64_t i, int64_t j, int64_t k) const { return data_[index(i, j, k)]; }

  bool empty() const { return data_.empty(); }
  bool all_finite() const;
  double mean() const;

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Shape3 shape_{};
  float spacing_um_ = kDefaultSpacingUm;
  std::vector<float> data_;
};

struct VolumeHeader {
  Shape3 shape;
  float spacing_um = kDefaultSpacingUm;
  std::string dtype_tag = "f32le";
  std::string provenance = "generated";
};

// .vgan container: one JSON header line, '\n', then little-endian float32 voxels.
std::string encode_volume(const Volume& v, std::string_view provenance = "generated");
Volume decode_volume(std::string_view bytes, VolumeHeader* header = nullptr);

void write_volume(const Volume& v, const std::filesystem::path& path,
                  std::string_view provenance = "generated");
Volume read_volume(const std::filesystem::path& path, VolumeHeader* header = nullptr);

// Sorted list of *.vgan files directly inside dir.
std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& dir);

}  // namespace vgan
