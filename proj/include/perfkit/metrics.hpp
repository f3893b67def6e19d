#pragma once

#include <span>
#include <vector>

#include "perfkit/types.hpp"

namespace perfkit::metrics {

inline constexpr int kDefaultBaselineFrames = 3;

double pearson_r(std::span<const double> a, std::span<const double> b);
/// Pearson on average ranks (ties share their mean rank).
double spearman_r(std::span<const double> a, std::span<const double> b);
std::vector<double> average_ranks(std::span<const double> values);

/// dt * argmax; ties resolve to the earliest sample.
double tpeak(const VascularFunction& f);

struct PeakToBaseline {
    double ptb = 0.0;
    double baseline = 0.0;
};
PeakToBaseline ptb(std::span<const double> values, int baseline_frames = kDefaultBaselineFrames);
inline PeakToBaseline ptb(const VascularFunction& f, int baseline_frames = kDefaultBaselineFrames)
{
    return ptb(f.values(), baseline_frames);
}

struct FwhmResult {
    double fwhm_s = 0.0;
    double left_s = 0.0;
    double right_s = 0.0;
    bool truncated = false;  ///< a crossing was clamped to the record boundary
};
FwhmResult fwhm(const VascularFunction& f, int baseline_frames = kDefaultBaselineFrames);

struct SignalMetrics {
    double tpeak_s = 0.0;
    double fwhm_s = 0.0;
    double ptb_hu = 0.0;
    double baseline_hu = 0.0;
    bool fwhm_truncated = false;
};
SignalMetrics signal_metrics(const VascularFunction& f, int baseline_frames = kDefaultBaselineFrames);

double mse(std::span<const double> a, std::span<const double> b);

double dice(const Volume3D& a, const Volume3D& b);

struct VolumeError {
    double error_ml = 0.0;
    double abs_error_ml = 0.0;
};
VolumeError volume_error(const Volume3D& pred, const Volume3D& truth, double voxel_ml);

/// Mann-Whitney AUC with mid-rank tie correction.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct LesionReport {
    double dice = 0.0;
    double volume_error_ml = 0.0;
    double abs_volume_error_ml = 0.0;
    double pred_volume_ml = 0.0;
    double truth_volume_ml = 0.0;
};
LesionReport lesion_report(const Volume3D& pred, const Volume3D& truth, double voxel_ml);

}  // namespace perfkit::metrics
