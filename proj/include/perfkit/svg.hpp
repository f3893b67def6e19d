#pragma once

#include <span>
#include <string>

#include "perfkit/types.hpp"

namespace perfkit::svg {

struct NamedCurve {
    std::string label;
    VascularFunction curve;
};

/// Line chart, one <polyline> per curve; x axis in seconds, y axis in HU.
std::string curve_plot(std::span<const NamedCurve> curves, const std::string& title = "");

/// Grayscale heat map of slice z with a min/max legend.
std::string map_slice(const Volume3D& volume, std::size_t z, const std::string& title = "");

}  // namespace perfkit::svg
