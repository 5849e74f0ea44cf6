#include "vgan/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vgan/errors.hpp"

namespace vgan {

static_assert(std::endian::native == std::endian::little,
              "the .vgan payload is written as raw little-endian float32");

std::string Shape3::str() const {
  std::ostringstream os;
  os << "(" << d1 << "," << d2 << "," << d3 << ")";
  return os.str();
}

Volume::Volume(Shape3 shape, float spacing_um)
    : shape_(shape), spacing_um_(spacing_um) {
  if (!shape.valid()) throw InvariantError("volume shape must be positive, got " + shape.str());
  data_.assign(static_cast<size_t>(shape.voxels()), 0.0f);
}

Volume::Volume(Shape3 shape, std::vector<float> data, float spacing_um)
    : shape_(shape), spacing_um_(spacing_um), data_(std::move(data)) {
  if (!shape.valid()) throw InvariantError("volume shape must be positive, got " + shape.str());
  if (static_cast<int64_t>(data_.size()) != shape.voxels()) {
    throw ShapeError("volume data has " + std::to_string(data_.size()) + " voxels, shape " +
                     shape.str() + " needs " + std::to_string(shape.voxels()));
  }
}

bool Volume::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

double Volume::mean() const {
  if (data_.empty()) return 0.0;
  return std::accumulate(data_.begin(), data_.end(), 0.0) / static_cast<double>(data_.size());
}

std::string encode_volume(const Volume& v, std::string_view provenance) {
  nlohmann::json header = {
      {"format", "vgan"},
      {"version", 1},
      {"shape", {v.shape().d1, v.shape().d2, v.shape().d3}},
      {"spacing_um", v.spacing_um()},
      {"dtype", "f32le"},
      {"provenance", std::string(provenance)},
  };
  std::string out = header.dump();
  out.push_back('\n');
  const size_t offset = out.size();
  out.resize(offset + v.data().size_bytes());
  std::memcpy(out.data() + offset, v.data().data(), v.data().size_bytes());
  return out;
}

Volume decode_volume(std::string_view bytes, VolumeHeader* header_out) {
  const auto newline = bytes.find('\n');
  if (newline == std::string_view::npos) throw FormatError("missing .vgan header line");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("unreadable .vgan header: ") + e.what());
  }

  VolumeHeader h;
  try {
    const auto& shape = header.at("shape");
    if (!shape.is_array() || shape.size() != 3) throw FormatError("header shape must have 3 entries");
    h.shape = {shape[0].get<int64_t>(), shape[1].get<int64_t>(), shape[2].get<int64_t>()};
    h.spacing_um = header.value("spacing_um", kDefaultSpacingUm);
    h.dtype_tag = header.value("dtype", std::string("f32le"));
    h.provenance = header.value("provenance", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid .vgan header: ") + e.what());
  }
  if (h.dtype_tag != "f32le") throw FormatError("unsupported dtype '" + h.dtype_tag + "'");
  if (!h.shape.valid()) throw InvariantError("header shape must be positive, got " + h.shape.str());

  const auto payload = bytes.substr(newline + 1);
  const auto expected = static_cast<size_t>(h.shape.voxels()) * sizeof(float);
  if (payload.size() != expected) {
    throw FormatError("payload holds " + std::to_string(payload.size()) + " bytes, header shape " +
                      h.shape.str() + " needs " + std::to_string(expected));
  }

  std::vector<float> data(static_cast<size_t>(h.shape.voxels()));
  std::memcpy(data.data(), payload.data(), expected);
  if (header_out) *header_out = h;
  return Volume(h.shape, std::move(data), h.spacing_um);
}

void write_volume(const Volume& v, const std::filesystem::path& path, std::string_view provenance) {
  if (v.empty()) throw InvariantError("cannot write an empty volume");
  const auto parent = path.parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw IoError("parent directory does not exist: " + parent.string());
  }
  const std::string bytes = encode_volume(v, provenance);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Volume read_volume(const std::filesystem::path& path, VolumeHeader* header) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_volume(bytes, header);
}

std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".vgan") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace vgan
