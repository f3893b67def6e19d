#pragma once

#include <filesystem>
#include <string_view>

#include "perfkit/types.hpp"

namespace perfkit::io {

namespace fs = std::filesystem;

// CTP4: "CTP4" | u32 version=1 | u32 T,Z,Y,X | f32 dt | f32 payload (t,z,y,x), little-endian.
// VOL3: "VOL3" | u32 version=1 | u32 Z,Y,X | f32 payload (z,y,x), little-endian.
inline constexpr std::uint32_t kFormatVersion = 1;

CtpVolume4D read_ctp4(const fs::path& path);
void write_ctp4(const fs::path& path, const CtpVolume4D& volume);

/// Values are narrowed to f32 on write.
Volume3D read_vol3(const fs::path& path, Unit unit = Unit::Ratio);
void write_vol3(const fs::path& path, const Volume3D& volume);

Volume3D read_mask(const fs::path& path);
void write_mask(const fs::path& path, const Volume3D& mask);

VascularFunction read_curve_csv(const fs::path& path, CurveKind kind = CurveKind::AIF);
void write_curve_csv(const fs::path& path, const VascularFunction& curve);
VascularFunction parse_curve_csv(std::string_view text, CurveKind kind = CurveKind::AIF);
std::string format_curve_csv(const VascularFunction& curve);

std::string read_text(const fs::path& path);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_atomic(const fs::path& path, std::string_view bytes);

}  // namespace perfkit::io
