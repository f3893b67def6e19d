#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace perfkit {

/// Input that violates a documented precondition or invariant.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Filesystem failure (open, write, rename).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad magic, truncation, bad CSV cells).
class FormatError : public IoError {
public:
    using IoError::IoError;
};

struct Dims3 {
    std::size_t z = 0;
    std::size_t y = 0;
    std::size_t x = 0;

    std::size_t size() const { return z * y * x; }
    std::size_t index(std::size_t iz, std::size_t iy, std::size_t ix) const { return (iz * y + iy) * x + ix; }
    bool operator==(const Dims3&) const = default;
};

struct Voxel {
    std::size_t z = 0;
    std::size_t y = 0;
    std::size_t x = 0;
    bool operator==(const Voxel&) const = default;
};

std::string to_string(const Dims3& d);
std::string to_string(const Voxel& v);

enum class Unit : std::uint8_t { HU, Flow, Volume, Seconds, Ratio, Probability, Binary };

/// Z×Y×X scalar volume, x fastest.
class Volume3D {
public:
    Volume3D() = default;
    Volume3D(Dims3 dims, std::vector<double> data, Unit unit = Unit::Ratio);
    static Volume3D zeros(Dims3 dims, Unit unit = Unit::Ratio);

    const Dims3& dims() const { return dims_; }
    Unit unit() const { return unit_; }
    std::span<const double> data() const { return data_; }
    double operator[](std::size_t i) const { return data_[i]; }
    double at(const Voxel& v) const { return data_[dims_.index(v.z, v.y, v.x)]; }
    std::size_t count_nonzero() const;

private:
    Dims3 dims_;
    std::vector<double> data_;
    Unit unit_ = Unit::Ratio;
};

enum class CurveKind : std::uint8_t { AIF = 0, VOF = 1 };

/// A sampled time-attenuation curve in HU.
class VascularFunction {
public:
    VascularFunction() = default;
    VascularFunction(std::vector<double> values, double dt_seconds, CurveKind kind = CurveKind::AIF);

    std::span<const double> values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    double dt() const { return dt_; }
    CurveKind kind() const { return kind_; }
    double operator[](std::size_t i) const { return values_[i]; }

private:
    std::vector<double> values_;
    double dt_ = 1.0;
    CurveKind kind_ = CurveKind::AIF;
};

/// T×Z×Y×X contrast series in HU, stored as f32 with x fastest.
class CtpVolume4D {
public:
    CtpVolume4D() = default;
    CtpVolume4D(std::size_t frames, Dims3 dims, double dt_seconds, std::vector<float> data,
                std::optional<Volume3D> brain_mask = std::nullopt);

    std::size_t frames() const { return frames_; }
    const Dims3& dims() const { return dims_; }
    std::size_t voxels() const { return dims_.size(); }
    double dt() const { return dt_; }
    std::span<const float> data() const { return data_; }
    std::span<const float> frame(std::size_t t) const;
    float at(std::size_t t, std::size_t linear_voxel) const { return data_[t * dims_.size() + linear_voxel]; }
    const std::optional<Volume3D>& brain_mask() const { return mask_; }

    std::vector<double> curve(std::size_t linear_voxel) const;
    VascularFunction curve_at(const Voxel& v, CurveKind kind = CurveKind::AIF) const;

private:
    std::size_t frames_ = 0;
    Dims3 dims_;
    double dt_ = 1.0;
    std::vector<float> data_;
    std::optional<Volume3D> mask_;
};

/// Nonnegative spatial weights summing to one.
class ProbVolume {
public:
    static constexpr double kSumTolerance = 1e-5;

    ProbVolume() = default;
    ProbVolume(Dims3 dims, std::vector<double> probs);

    const Dims3& dims() const { return dims_; }
    std::span<const double> probs() const { return probs_; }
    double operator[](std::size_t i) const { return probs_[i]; }
    std::size_t argmax() const;

private:
    Dims3 dims_;
    std::vector<double> probs_;
};

struct ControlMeans {
    double cbf = 0.0;
    double cbv = 0.0;
    double mtt = 0.0;
    double tmax = 0.0;
};

struct PerfusionMaps {
    Volume3D cbf, cbv, mtt, tmax;
    Volume3D rcbf, rcbv, rmtt, rtmax;
    ControlMeans control_mean;
};

/// Fills the relative maps of `maps` by dividing each absolute map by its mean over
/// control voxels (in-mask voxels with Tmax below `tmax_threshold_s`). Throws if the
/// control region is empty or any control mean is not positive.
void normalize_maps(PerfusionMaps& maps, const std::optional<Volume3D>& mask, double tmax_threshold_s);

Voxel unravel(const Dims3& dims, std::size_t linear);
bool in_mask(const std::optional<Volume3D>& mask, std::size_t linear);

}  // namespace perfkit
