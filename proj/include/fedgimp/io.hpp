#pragma once

// On-disk formats.
//
// ri-planes: a complex array of shape S is stored as raw little-endian
//   float64 data holding the real plane followed by the imaginary plane
//   (each row-major over S), plus a JSON sidecar
//   {"shape": S, "dtype": "float64", "layout": "ri-planes"}.
//   Files: <stem>.bin and <stem>.json.
//
// Mask file (.mask): little-endian header
//   char[4] "FGMK" | u32 version=1 | u32 H | u32 W | f64 rate |
//   u8 density (0 variable, 1 uniform) | u8[3] zero | u32 calibration_lines |
//   u64 seed
//   followed by ceil(H*W/8) bytes of the row-major pattern, bit i stored in
//   byte i/8 at bit position i%8 (LSB first).
//
// Archive (.ckpt): char[8] "FGARCH01" | u64 header_bytes | header JSON
//   {"metadata": {...}, "arrays": [{"name","shape","offset"}...]} | float64
//   payload. Offsets count doubles from the start of the payload.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedgimp/imaging.hpp"
#include "fedgimp/params.hpp"

namespace fedgimp::io {

void write_ri_planes(const std::filesystem::path& stem, const std::vector<int>& shape,
                     const std::vector<imaging::cplx>& values);
std::vector<imaging::cplx> read_ri_planes(const std::filesystem::path& stem, std::vector<int>* shape);

void write_image(const std::filesystem::path& stem, const imaging::ComplexImage& image);
imaging::ComplexImage read_image(const std::filesystem::path& stem);
void write_stack(const std::filesystem::path& stem, const imaging::ComplexStack& stack);
imaging::ComplexStack read_stack(const std::filesystem::path& stem);

std::string encode_mask(const imaging::SamplingMask& mask);
imaging::SamplingMask decode_mask(const std::string& bytes);
void write_mask(const std::filesystem::path& path, const imaging::SamplingMask& mask);
imaging::SamplingMask read_mask(const std::filesystem::path& path);

struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  ParamSet arrays;
};

std::string encode_archive(const Archive& archive);
Archive decode_archive(const std::string& bytes);
void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

// Names listed in an encoded archive, without decoding the payload.
std::vector<std::string> archive_manifest(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

}  // namespace fedgimp::io
