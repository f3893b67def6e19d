#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "perfkit/aifnet.hpp"
#include "perfkit/deconv.hpp"
#include "perfkit/synthgen.hpp"

namespace perfkit {

/// Everything a run needs, read from `key = value` lines. '#' starts a comment.
struct PipelineConfig {
    synth::PhantomConfig phantom;
    aifnet::TrainConfig train;
    deconv::DeconvParams deconv;

    std::uint64_t seed = 0;
    std::size_t aif_layers = aifnet::kDefaultAifLayers;
    std::size_t vof_layers = aifnet::kDefaultVofLayers;
    std::size_t cohort_train = 20;
    std::size_t cohort_validation = 5;
    std::size_t cohort_test = 5;
    double validation_fraction = 0.2;  ///< used when training from a case directory
    double voxel_ml = 0.04;            ///< 2 x 2 x 10 mm
    int threads = 0;                   ///< 0 leaves the runtime default

    void validate() const;
};

/// Throws ValidationError naming the line on unknown or duplicate keys and bad values.
PipelineConfig parse_config(std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, in a fixed order; parse_config(format_config(c)) == c.
std::string format_config(const PipelineConfig& cfg);

/// The recognised keys, in the order format_config writes them.
std::vector<std::string> config_keys();

}  // namespace perfkit
