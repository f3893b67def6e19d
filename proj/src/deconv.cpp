#include "perfkit/deconv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/SVD>

#include "perfkit/metrics.hpp"

namespace perfkit::deconv {

namespace {

std::vector<double> baseline_excess(std::span<const double> values, int baseline_frames)
{
    if (baseline_frames < 1 || static_cast<std::size_t>(baseline_frames) > values.size())
        throw ValidationError("baseline_frames out of range for a curve of length " + std::to_string(values.size()));
    const double base = std::accumulate(values.begin(), values.begin() + baseline_frames, 0.0) /
                        static_cast<double>(baseline_frames);
    std::vector<double> out(values.size());
    std::transform(values.begin(), values.end(), out.begin(), [base](double v) { return v - base; });
    return out;
}

}  // namespace

void DeconvParams::validate() const
{
    if (!(lambda_rel > 0.0 && lambda_rel < 1.0))
        throw ValidationError("lambda_rel must lie in (0, 1)");
    if (circulant_factor < 2)
        throw ValidationError("circulant_factor must be >= 2");
    if (baseline_frames < 1)
        throw ValidationError("baseline_frames must be positive");
    if (!(tmax_threshold_s > 0.0))
        throw ValidationError("tmax threshold must be positive");
    if (!(rcbf_core_threshold > 0.0 && rcbf_core_threshold < 1.0))
        throw ValidationError("rCBF core threshold must lie in (0, 1)");
}

SingularSystem build_circulant_system(std::span<const double> aif_excess, double dt, int circulant_factor)
{
    const std::size_t T = aif_excess.size();
    if (T < 2)
        throw ValidationError("AIF needs at least 2 samples");
    if (circulant_factor < 2)
        throw ValidationError("circulant_factor must be >= 2");
    if (std::all_of(aif_excess.begin(), aif_excess.end(), [](double v) { return v == 0.0; }))
        throw ValidationError("AIF is identically zero after baseline subtraction");

    const std::size_t L = static_cast<std::size_t>(circulant_factor) * T;
    Eigen::VectorXd column = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L));
    for (std::size_t i = 0; i < T; ++i)
        column(static_cast<Eigen::Index>(i)) = dt * aif_excess[i];
    // Trapezoidal end weights of the Volterra discretization.
    column(0) *= 0.5;
    column(static_cast<Eigen::Index>(T - 1)) *= 0.5;

    SingularSystem sys;
    sys.frames = T;
    sys.dt = dt;
    sys.matrix.resize(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L));
    for (std::size_t j = 0; j < L; ++j)
        for (std::size_t i = 0; i < L; ++i)
            sys.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                column(static_cast<Eigen::Index>((i + L - j) % L));

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(sys.matrix, Eigen::ComputeFullU | Eigen::ComputeFullV);
    sys.u = svd.matrixU();
    sys.s = svd.singularValues();
    sys.v = svd.matrixV();
    return sys;
}

SingularSystem build_circulant_system(const VascularFunction& aif, const DeconvParams& params)
{
    params.validate();
    const auto excess = baseline_excess(aif.values(), params.baseline_frames);
    return build_circulant_system(excess, aif.dt(), params.circulant_factor);
}

Eigen::MatrixXd regularized_inverse(const SingularSystem& system, double lambda_rel)
{
    const double smax = system.s.size() > 0 ? system.s(0) : 0.0;
    if (!(smax > 0.0))
        throw ValidationError("degenerate singular system (largest singular value is zero)");
    const double lambda = lambda_rel * smax;
    const Eigen::VectorXd filter =
        system.s.array() / (system.s.array().square() + lambda * lambda);
    const auto T = static_cast<Eigen::Index>(system.frames);
    return system.v * filter.asDiagonal() * system.u.topRows(T).transpose();
}

ResidueEstimate deconvolve_voxel(const VascularFunction& tissue, const SingularSystem& system,
                                 const DeconvParams& params)
{
    params.validate();
    if (tissue.size() != system.frames)
        throw ValidationError("tissue curve length " + std::to_string(tissue.size()) + " differs from AIF length " +
                              std::to_string(system.frames));
    const auto excess = baseline_excess(tissue.values(), params.baseline_frames);
    const Eigen::MatrixXd inv = regularized_inverse(system, params.lambda_rel);
    const Eigen::Map<const Eigen::VectorXd> c(excess.data(), static_cast<Eigen::Index>(excess.size()));
    const Eigen::VectorXd h = inv * c;
    return {std::vector<double>(h.data(), h.data() + h.size()), system.dt};
}

VascularFunction recalibrate_aif(const VascularFunction& aif, const VascularFunction& vof, int baseline_frames)
{
    const auto pa = metrics::ptb(aif, baseline_frames);
    const auto pv = metrics::ptb(vof, baseline_frames);
    if (!(pa.ptb > 0.0))
        throw ValidationError("AIF peak-to-baseline must be positive for recalibration");
    if (!(pv.ptb > 0.0))
        throw ValidationError("VOF peak-to-baseline must be positive for recalibration");
    const double scale = pv.ptb / pa.ptb;
    std::vector<double> out(aif.size());
    for (std::size_t i = 0; i < aif.size(); ++i)
        out[i] = pa.baseline + (aif[i] - pa.baseline) * scale;
    return VascularFunction(std::move(out), aif.dt(), aif.kind());
}

PerfusionMaps compute_maps(const CtpVolume4D& ctp, const VascularFunction& aif, const VascularFunction& vof,
                           const DeconvParams& params)
{
    params.validate();
    const std::size_t T = ctp.frames();
    if (aif.size() != T || vof.size() != T)
        throw ValidationError("AIF/VOF length must equal the CTP frame count " + std::to_string(T));
    if (static_cast<std::size_t>(params.baseline_frames) >= T)
        throw ValidationError("baseline_frames must be smaller than the frame count");

    const VascularFunction calibrated = recalibrate_aif(aif, vof, params.baseline_frames);
    const SingularSystem system = build_circulant_system(calibrated, params);
    const Eigen::MatrixXd inv = regularized_inverse(system, params.lambda_rel);

    const Dims3 dims = ctp.dims();
    const std::size_t nvox = dims.size();
    const auto& mask = ctp.brain_mask();
    std::vector<std::size_t> voxels;
    for (std::size_t i = 0; i < nvox; ++i)
        if (in_mask(mask, i))
            voxels.push_back(i);

    Eigen::MatrixXd excess(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(voxels.size()));
    for (std::size_t k = 0; k < voxels.size(); ++k) {
        double base = 0.0;
        for (int t = 0; t < params.baseline_frames; ++t)
            base += ctp.at(static_cast<std::size_t>(t), voxels[k]);
        base /= static_cast<double>(params.baseline_frames);
        for (std::size_t t = 0; t < T; ++t)
            excess(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = ctp.at(t, voxels[k]) - base;
    }
    const Eigen::MatrixXd residues = inv * excess;

    const double dt = ctp.dt();
    std::vector<double> cbf(nvox, 0.0), cbv(nvox, 0.0), mtt(nvox, 0.0), tmax(nvox, 0.0);
    for (std::size_t k = 0; k < voxels.size(); ++k) {
        const auto h = residues.col(static_cast<Eigen::Index>(k));
        Eigen::Index peak = 0;
        const double flow = h.maxCoeff(&peak);
        const std::size_t i = voxels[k];
        cbf[i] = flow;
        tmax[i] = dt * static_cast<double>(peak);
        cbv[i] = dt * h.sum();
        mtt[i] = flow > kCbfFloor ? cbv[i] / flow : 0.0;
    }

    PerfusionMaps maps;
    maps.cbf = Volume3D(dims, std::move(cbf), Unit::Flow);
    maps.cbv = Volume3D(dims, std::move(cbv), Unit::Volume);
    maps.mtt = Volume3D(dims, std::move(mtt), Unit::Seconds);
    maps.tmax = Volume3D(dims, std::move(tmax), Unit::Seconds);
    normalize_maps(maps, mask, params.tmax_threshold_s);
    return maps;
}

LesionMasks segment_core(const PerfusionMaps& maps, const DeconvParams& params, const std::optional<Volume3D>& brain_mask)
{
    params.validate();
    const Dims3 dims = maps.tmax.dims();
    if (maps.rcbf.dims() != dims)
        throw ValidationError("Tmax and rCBF maps differ in dims");
    std::vector<double> core(dims.size(), 0.0), lesion(dims.size(), 0.0);
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (!in_mask(brain_mask, i))
            continue;
        if (maps.tmax[i] > params.tmax_threshold_s) {
            lesion[i] = 1.0;
            if (maps.rcbf[i] < params.rcbf_core_threshold)
                core[i] = 1.0;
        }
    }
    return {Volume3D(dims, std::move(core), Unit::Binary), Volume3D(dims, std::move(lesion), Unit::Binary)};
}

}  // namespace perfkit::deconv
