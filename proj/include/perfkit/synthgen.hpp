#pragma once

#include <cstdint>
#include <optional>

#include "perfkit/types.hpp"

namespace perfkit::synth {

struct GammaVariateParams {
    double amplitude = 730.0;  ///< HU
    double onset_s = 5.0;
    double alpha = 1.5;
    double beta_s = 1.0;
    double baseline_hu = 0.0;

    void validate() const;
};

/// b for t <= t0, b + A (t-t0)^alpha exp(-(t-t0)/beta) after; peak at t0 + alpha*beta.
double gamma_variate(double t_seconds, const GammaVariateParams& p);

enum class ResidueModel : std::uint8_t { Exponential, Boxcar };

struct TissueSpec {
    double flow = 0.01;  ///< 1/s, scale of h
    double mtt_s = 4.0;
    double delay_s = 0.0;  ///< whole number of frames
    ResidueModel residue = ResidueModel::Exponential;
    double noise_sigma_hu = 0.0;
    double baseline_hu = 0.0;
};

/// flow * R(t - delay). The exponential model decays by (1 - dt/mtt) per frame so that
/// its sampled integral is exactly flow * mtt; boxcar is 1 on [0, mtt).
double residue_value(const TissueSpec& spec, double t_seconds, double dt);

/// Discrete indicator-dilution forward model. The AIF baseline is the mean of its
/// first `baseline_frames` samples. Noise (if any) is drawn from `noise_seed`.
VascularFunction convolve_residue(const VascularFunction& aif, const TissueSpec& spec, int baseline_frames = 3,
                                  std::uint64_t noise_seed = 0);

/// Half-open axis-aligned box [z0,z1) x [y0,y1) x [x0,x1).
struct Box {
    std::size_t z0 = 0, y0 = 0, x0 = 0;
    std::size_t z1 = 0, y1 = 0, x1 = 0;

    bool contains(std::size_t z, std::size_t y, std::size_t x) const
    {
        return z >= z0 && z < z1 && y >= y0 && y < y1 && x >= x0 && x < x1;
    }
    bool empty() const { return z0 >= z1 || y0 >= y1 || x0 >= x1; }
    bool intersects(const Box& o) const
    {
        return !empty() && !o.empty() && z0 < o.z1 && o.z0 < z1 && y0 < o.y1 && o.y0 < y1 && x0 < o.x1 && o.x0 < x1;
    }
};

struct RegionSpec {
    double flow = 0.01;
    double mtt_s = 4.0;
    double delay_s = 0.0;
};

struct PhantomConfig {
    Dims3 dims{4, 32, 32};
    std::size_t frames = 40;
    double dt_s = 1.0;

    GammaVariateParams aif{730.0, 5.0, 1.5, 1.0, 40.0};
    double aif_onset_jitter_s = 2.0;  ///< per-seed uniform jitter added to the AIF onset
    double aif_partial_volume = 0.75;
    double vein_scale = 1.3;
    double vein_delay_s = 3.0;

    double tissue_baseline_hu = 35.0;
    double noise_sigma_hu = 1.0;
    ResidueModel residue = ResidueModel::Exponential;
    int baseline_frames = 3;

    RegionSpec healthy{0.01, 4.0, 1.0};
    RegionSpec penumbra{0.006, 6.0, 8.0};
    RegionSpec core{0.002, 8.0, 8.0};
    Box penumbra_box{0, 8, 16, 4, 24, 22};
    Box core_box{0, 8, 22, 4, 24, 30};

    bool random_vessels = true;
    Voxel aif_voxel{1, 16, 6};
    Voxel vof_voxel{2, 4, 12};

    void validate() const;
};

struct Phantom {
    CtpVolume4D ctp;
    VascularFunction true_aif;
    VascularFunction true_vof;
    Voxel aif_voxel;
    Voxel vof_voxel;
    PerfusionMaps truth_maps;
    Volume3D core_mask;
    Volume3D lesion_mask;
    std::uint64_t seed = 0;
};

/// Deterministic in (cfg, seed).
Phantom make_phantom(const PhantomConfig& cfg, std::uint64_t seed);

/// Arterial concentration that drives tissue enhancement: (true_aif - baseline) * vein_scale.
VascularFunction calibrated_arterial_input(const Phantom& p, const PhantomConfig& cfg);

}  // namespace perfkit::synth
