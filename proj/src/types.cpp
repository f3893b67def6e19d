#include "perfkit/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace perfkit {

std::string to_string(const Dims3& d)
{
    return std::to_string(d.z) + "x" + std::to_string(d.y) + "x" + std::to_string(d.x);
}

std::string to_string(const Voxel& v)
{
    return std::to_string(v.z) + "," + std::to_string(v.y) + "," + std::to_string(v.x);
}

Voxel unravel(const Dims3& dims, std::size_t linear)
{
    Voxel v;
    v.x = linear % dims.x;
    v.y = (linear / dims.x) % dims.y;
    v.z = linear / (dims.x * dims.y);
    return v;
}

bool in_mask(const std::optional<Volume3D>& mask, std::size_t linear)
{
    return !mask || (*mask)[linear] != 0.0;
}

Volume3D::Volume3D(Dims3 dims, std::vector<double> data, Unit unit)
    : dims_(dims), data_(std::move(data)), unit_(unit)
{
    if (dims_.size() == 0)
        throw ValidationError("volume has an empty dimension: " + to_string(dims_));
    if (data_.size() != dims_.size())
        throw ValidationError("volume payload holds " + std::to_string(data_.size()) + " values, dims " +
                              to_string(dims_) + " need " + std::to_string(dims_.size()));
    for (double v : data_) {
        if (!std::isfinite(v))
            throw ValidationError("volume contains a non-finite value");
        if (unit_ == Unit::Binary && v != 0.0 && v != 1.0)
            throw ValidationError("binary volume contains a value outside {0,1}");
    }
}

Volume3D Volume3D::zeros(Dims3 dims, Unit unit)
{
    return Volume3D(dims, std::vector<double>(dims.size(), 0.0), unit);
}

std::size_t Volume3D::count_nonzero() const
{
    return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](double v) { return v != 0.0; }));
}

VascularFunction::VascularFunction(std::vector<double> values, double dt_seconds, CurveKind kind)
    : values_(std::move(values)), dt_(dt_seconds), kind_(kind)
{
    if (values_.size() < 2)
        throw ValidationError("vascular function needs at least 2 samples");
    if (!(dt_ > 0.0) || !std::isfinite(dt_))
        throw ValidationError("vascular function time step must be positive");
    for (double v : values_)
        if (!std::isfinite(v))
            throw ValidationError("vascular function contains a non-finite value");
}

CtpVolume4D::CtpVolume4D(std::size_t frames, Dims3 dims, double dt_seconds, std::vector<float> data,
                         std::optional<Volume3D> brain_mask)
    : frames_(frames), dims_(dims), dt_(dt_seconds), data_(std::move(data)), mask_(std::move(brain_mask))
{
    if (frames_ < 2)
        throw ValidationError("CTP series needs at least 2 frames");
    if (dims_.size() == 0)
        throw ValidationError("CTP series has an empty spatial dimension");
    if (!(dt_ > 0.0) || !std::isfinite(dt_))
        throw ValidationError("CTP time step must be positive");
    if (data_.size() != frames_ * dims_.size())
        throw ValidationError("CTP payload size does not match T*Z*Y*X");
    for (float v : data_)
        if (!std::isfinite(v))
            throw ValidationError("CTP series contains a non-finite value");
    if (mask_) {
        if (mask_->dims() != dims_)
            throw ValidationError("brain mask dims " + to_string(mask_->dims()) + " differ from CTP dims " +
                                  to_string(dims_));
        for (double v : mask_->data())
            if (v != 0.0 && v != 1.0)
                throw ValidationError("brain mask must be binary");
    }
}

std::span<const float> CtpVolume4D::frame(std::size_t t) const
{
    return std::span<const float>(data_).subspan(t * dims_.size(), dims_.size());
}

std::vector<double> CtpVolume4D::curve(std::size_t linear_voxel) const
{
    std::vector<double> out(frames_);
    for (std::size_t t = 0; t < frames_; ++t)
        out[t] = at(t, linear_voxel);
    return out;
}

VascularFunction CtpVolume4D::curve_at(const Voxel& v, CurveKind kind) const
{
    if (v.z >= dims_.z || v.y >= dims_.y || v.x >= dims_.x)
        throw ValidationError("voxel " + to_string(v) + " outside volume " + to_string(dims_));
    return VascularFunction(curve(dims_.index(v.z, v.y, v.x)), dt_, kind);
}

ProbVolume::ProbVolume(Dims3 dims, std::vector<double> probs) : dims_(dims), probs_(std::move(probs))
{
    if (probs_.size() != dims_.size() || probs_.empty())
        throw ValidationError("probability volume size mismatch");
    double sum = 0.0;
    for (double p : probs_) {
        if (!(p >= 0.0) || !std::isfinite(p))
            throw ValidationError("probability volume has a negative or non-finite entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance)
        throw ValidationError("probability volume sums to " + std::to_string(sum));
}

std::size_t ProbVolume::argmax() const
{
    return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

void normalize_maps(PerfusionMaps& maps, const std::optional<Volume3D>& mask, double tmax_threshold_s)
{
    const Dims3 dims = maps.cbf.dims();
    const std::size_t n = dims.size();
    std::array<double, 4> sums{};
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!in_mask(mask, i) || !(maps.tmax[i] < tmax_threshold_s))
            continue;
        sums[0] += maps.cbf[i];
        sums[1] += maps.cbv[i];
        sums[2] += maps.mtt[i];
        sums[3] += maps.tmax[i];
        ++count;
    }
    if (count == 0)
        throw ValidationError("empty control region: no in-mask voxel has Tmax below " +
                              std::to_string(tmax_threshold_s) + " s");
    ControlMeans cm{sums[0] / double(count), sums[1] / double(count), sums[2] / double(count),
                    sums[3] / double(count)};
    const std::array<std::pair<const char*, double>, 4> named{
        {{"CBF", cm.cbf}, {"CBV", cm.cbv}, {"MTT", cm.mtt}, {"Tmax", cm.tmax}}};
    for (const auto& [name, value] : named)
        if (!(value > 0.0))
            throw ValidationError(std::string("control-tissue mean of ") + name + " is not positive");

    auto relative = [&](const Volume3D& abs, double mean) {
        std::vector<double> out(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            if (in_mask(mask, i))
                out[i] = abs[i] / mean;
        return Volume3D(dims, std::move(out), Unit::Ratio);
    };
    maps.rcbf = relative(maps.cbf, cm.cbf);
    maps.rcbv = relative(maps.cbv, cm.cbv);
    maps.rmtt = relative(maps.mtt, cm.mtt);
    maps.rtmax = relative(maps.tmax, cm.tmax);
    maps.control_mean = cm;
}

}  // namespace perfkit
