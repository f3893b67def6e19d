#include "perfkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace perfkit::metrics {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* what)
{
    if (a.size() != b.size())
        throw ValidationError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
}

void require_binary_pair(const Volume3D& a, const Volume3D& b)
{
    if (a.dims() != b.dims())
        throw ValidationError("mask dims differ: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
    for (const Volume3D* v : {&a, &b})
        for (double x : v->data())
            if (x != 0.0 && x != 1.0)
                throw ValidationError("mask is not binary");
}

}  // namespace

double pearson_r(std::span<const double> a, std::span<const double> b)
{
    require_same_length(a, b, "pearson_r");
    if (a.size() < 2)
        throw ValidationError("pearson_r needs at least 2 samples");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    const double denom = std::sqrt(saa) * std::sqrt(sbb);
    if (!(denom >= 1e-12))
        throw ValidationError("pearson_r: zero-variance input");
    return std::clamp(sab / denom, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values)
{
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]])
            ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            ranks[order[k]] = mid;
        i = j + 1;
    }
    return ranks;
}

double spearman_r(std::span<const double> a, std::span<const double> b)
{
    require_same_length(a, b, "spearman_r");
    if (a.size() < 2)
        throw ValidationError("spearman_r needs at least 2 samples");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    return pearson_r(ra, rb);
}

double tpeak(const VascularFunction& f)
{
    const auto v = f.values();
    const auto it = std::max_element(v.begin(), v.end());
    return f.dt() * static_cast<double>(it - v.begin());
}

PeakToBaseline ptb(std::span<const double> values, int baseline_frames)
{
    if (baseline_frames < 1 || static_cast<std::size_t>(baseline_frames) >= values.size())
        throw ValidationError("baseline_frames must lie in [1, length-1], got " + std::to_string(baseline_frames));
    const double baseline =
        std::accumulate(values.begin(), values.begin() + baseline_frames, 0.0) / static_cast<double>(baseline_frames);
    const double peak = *std::max_element(values.begin(), values.end());
    return {peak - baseline, baseline};
}

FwhmResult fwhm(const VascularFunction& f, int baseline_frames)
{
    const auto [height, baseline] = ptb(f, baseline_frames);
    if (!(height > 0.0))
        throw ValidationError("fwhm undefined for a curve with non-positive peak-to-baseline");
    const auto v = f.values();
    const double dt = f.dt();
    const double level = baseline + 0.5 * height;
    const std::size_t peak = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());

    auto crossing = [&](std::size_t below, std::size_t above) {
        const double frac = (level - v[below]) / (v[above] - v[below]);
        return dt * (static_cast<double>(below) + frac * (static_cast<double>(above) - static_cast<double>(below)));
    };

    FwhmResult r;
    std::size_t i = peak;
    while (i > 0 && !(v[i - 1] < level))
        --i;
    if (i == 0) {
        r.left_s = 0.0;
        r.truncated = true;
    } else {
        r.left_s = crossing(i - 1, i);
    }
    std::size_t j = peak;
    while (j + 1 < v.size() && !(v[j + 1] < level))
        ++j;
    if (j + 1 == v.size()) {
        r.right_s = dt * static_cast<double>(v.size() - 1);
        r.truncated = true;
    } else {
        r.right_s = crossing(j + 1, j);
    }
    r.fwhm_s = r.right_s - r.left_s;
    return r;
}

SignalMetrics signal_metrics(const VascularFunction& f, int baseline_frames)
{
    SignalMetrics m;
    m.tpeak_s = tpeak(f);
    const auto p = ptb(f, baseline_frames);
    m.ptb_hu = p.ptb;
    m.baseline_hu = p.baseline;
    if (p.ptb > 0.0) {
        const auto w = fwhm(f, baseline_frames);
        m.fwhm_s = w.fwhm_s;
        m.fwhm_truncated = w.truncated;
    }
    return m;
}

double mse(std::span<const double> a, std::span<const double> b)
{
    require_same_length(a, b, "mse");
    if (a.empty())
        throw ValidationError("mse of empty vectors");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

double dice(const Volume3D& a, const Volume3D& b)
{
    require_binary_pair(a, b);
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.dims().size(); ++i) {
        const bool ia = a[i] != 0.0;
        const bool ib = b[i] != 0.0;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

VolumeError volume_error(const Volume3D& pred, const Volume3D& truth, double voxel_ml)
{
    require_binary_pair(pred, truth);
    const double diff =
        (static_cast<double>(pred.count_nonzero()) - static_cast<double>(truth.count_nonzero())) * voxel_ml;
    return {diff, std::abs(diff)};
}

double roc_auc(std::span<const double> scores, std::span<const int> labels)
{
    if (scores.size() != labels.size())
        throw ValidationError("roc_auc: scores and labels differ in length");
    std::size_t pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1)
            throw ValidationError("roc_auc: labels must be 0 or 1");
        pos += static_cast<std::size_t>(l);
    }
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0)
        throw ValidationError("roc_auc needs both classes present");
    const auto ranks = average_ranks(scores);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < ranks.size(); ++i)
        if (labels[i] == 1)
            rank_sum += ranks[i];
    const double np = static_cast<double>(pos);
    const double nn = static_cast<double>(neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

LesionReport lesion_report(const Volume3D& pred, const Volume3D& truth, double voxel_ml)
{
    LesionReport r;
    r.dice = dice(pred, truth);
    const auto e = volume_error(pred, truth, voxel_ml);
    r.volume_error_ml = e.error_ml;
    r.abs_volume_error_ml = e.abs_error_ml;
    r.pred_volume_ml = static_cast<double>(pred.count_nonzero()) * voxel_ml;
    r.truth_volume_ml = static_cast<double>(truth.count_nonzero()) * voxel_ml;
    return r;
}

}  // namespace perfkit::metrics
