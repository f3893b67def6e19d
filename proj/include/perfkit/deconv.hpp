#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "perfkit/types.hpp"

namespace perfkit::deconv {

struct DeconvParams {
    double lambda_rel = 0.15;  ///< Tikhonov lambda as a fraction of the largest singular value
    int circulant_factor = 2;
    int baseline_frames = 3;
    double tmax_threshold_s = 6.0;
    double rcbf_core_threshold = 0.38;

    void validate() const;
};

/// SVD of the zero-padded circulant convolution matrix built from an AIF.
struct SingularSystem {
    Eigen::MatrixXd matrix;  ///< L x L circulant D
    Eigen::MatrixXd u;
    Eigen::VectorXd s;  ///< descending
    Eigen::MatrixXd v;
    std::size_t frames = 0;  ///< T, the unpadded length
    double dt = 1.0;

    std::size_t padded_length() const { return static_cast<std::size_t>(s.size()); }
};

struct ResidueEstimate {
    std::vector<double> h;  ///< flow-scaled residue, 1/s, length circulant_factor*T
    double dt = 1.0;
};

/// Builds the system from an already baseline-subtracted AIF (length T).
SingularSystem build_circulant_system(std::span<const double> aif_excess, double dt, int circulant_factor);
SingularSystem build_circulant_system(const VascularFunction& aif, const DeconvParams& params);

/// Truncated (L x T) Tikhonov pseudo-inverse V diag(s/(s^2+lambda^2)) U^T; the padded
/// tail of the tissue vector is zero so only the first T columns are kept.
Eigen::MatrixXd regularized_inverse(const SingularSystem& system, double lambda_rel);

ResidueEstimate deconvolve_voxel(const VascularFunction& tissue, const SingularSystem& system,
                                 const DeconvParams& params);

/// AIF excess scaled so its peak-to-baseline matches the VOF's.
VascularFunction recalibrate_aif(const VascularFunction& aif, const VascularFunction& vof, int baseline_frames);

/// Recalibrates the AIF against the VOF, deconvolves every in-mask voxel and fills
/// absolute plus control-normalized maps. Throws on an empty control region.
PerfusionMaps compute_maps(const CtpVolume4D& ctp, const VascularFunction& aif, const VascularFunction& vof,
                           const DeconvParams& params);

struct LesionMasks {
    Volume3D core;
    Volume3D lesion;
};

/// lesion = Tmax > threshold; core = lesion and rCBF < rcbf threshold.
LesionMasks segment_core(const PerfusionMaps& maps, const DeconvParams& params,
                         const std::optional<Volume3D>& brain_mask = std::nullopt);

inline constexpr double kCbfFloor = 1e-12;

}  // namespace perfkit::deconv
