// Prints one PASS/FAIL line per acceptance criterion; exits 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "perfkit/aifnet.hpp"
#include "perfkit/config.hpp"
#include "perfkit/deconv.hpp"
#include "perfkit/io.hpp"
#include "perfkit/metrics.hpp"
#include "perfkit/pipeline.hpp"
#include "perfkit/synthgen.hpp"

using namespace perfkit;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

CtpVolume4D random_ctp(std::size_t T, Dims3 d, Rng& rng, double lo, double hi)
{
    std::vector<float> data(T * d.size());
    for (auto& v : data)
        v = static_cast<float>(rng.uniform(lo, hi));
    return CtpVolume4D(T, d, 1.0, std::move(data));
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> snapshot(const fs::path& root)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            files[fs::relative(e.path(), root).string()] = slurp(e.path());
    return files;
}

// 1. Reverse-mode gradients against central differences.
Verdict gradient_check()
{
    const auto t0 = Clock::now();
    const auto model = aifnet::AifNetModel::create(2, 6, CurveKind::AIF, 101);
    Rng rng(102);
    const auto x = random_ctp(6, {2, 8, 8}, rng, 0.0, 100.0);
    std::vector<double> yv(6);
    for (auto& v : yv)
        v = rng.uniform(0.0, 100.0);
    const VascularFunction y(yv, 1.0);
    const auto g = aifnet::gradients(model, x, y);

    struct Ref {
        std::size_t layer, index;
        bool bias;
    };
    std::vector<Ref> all;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        for (std::size_t i = 0; i < model.layers[l].weights.size(); ++i)
            all.push_back({l, i, false});
        for (std::size_t i = 0; i < model.layers[l].bias.size(); ++i)
            all.push_back({l, i, true});
    }
    const double h = 1e-4;
    double worst = 0.0;
    const int samples = 50;
    for (int k = 0; k < samples; ++k) {
        const auto& r = all[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(all.size()) - 1))];
        auto plus = model, minus = model;
        (r.bias ? plus.layers[r.layer].bias : plus.layers[r.layer].weights)[r.index] += h;
        (r.bias ? minus.layers[r.layer].bias : minus.layers[r.layer].weights)[r.index] -= h;
        const double fd = (aifnet::pearson_loss(y, aifnet::forward(plus, x).curve) -
                           aifnet::pearson_loss(y, aifnet::forward(minus, x).curve)) /
                          (2.0 * h);
        const double an = (r.bias ? g.grads.bias : g.grads.weights)[r.layer][r.index];
        const double scale = std::max(std::abs(fd), std::abs(an));
        if (scale > 0.0)
            worst = std::max(worst, std::abs(fd - an) / scale);
    }
    const double t = seconds_since(t0);
    return {worst <= 1e-4 && t < 120.0,
            "params=" + std::to_string(samples) + " max_rel_err=" + fmt("%.3e", worst) + " time_s=" + fmt("%.1f", t)};
}

// 2. Probability volume normalization and the weighted-average degenerate cases.
Verdict probability_contract()
{
    const auto model = aifnet::AifNetModel::create(2, 6, CurveKind::AIF, 201);
    Rng rng(202);
    double worst_sum = 0.0, min_p = 1.0;
    for (int k = 0; k < 100; ++k) {
        const auto p = aifnet::forward(model, random_ctp(6, {2, 6, 7}, rng, -50.0, 400.0)).pvol;
        double sum = 0.0;
        for (double v : p.probs()) {
            sum += v;
            min_p = std::min(min_p, v);
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
    const auto x = random_ctp(6, {2, 6, 7}, rng, -50.0, 400.0);
    const std::size_t V = x.voxels();
    std::vector<double> onehot(V, 0.0);
    onehot[37] = 1.0;
    const auto c = aifnet::weighted_curve(x, onehot);
    bool exact = true;
    for (std::size_t t = 0; t < x.frames(); ++t)
        exact = exact && c[t] == static_cast<double>(x.at(t, 37));
    const auto u = aifnet::weighted_curve(x, std::vector<double>(V, 1.0 / static_cast<double>(V)));
    double mean_err = 0.0;
    for (std::size_t t = 0; t < x.frames(); ++t) {
        double m = 0.0;
        for (std::size_t v = 0; v < V; ++v)
            m += x.at(t, v);
        m /= static_cast<double>(V);
        mean_err = std::max(mean_err, std::abs(u[t] - m));
    }
    return {min_p >= 0.0 && worst_sum <= 1e-5 && exact && mean_err <= 1e-9,
            "min_p=" + fmt("%.3e", min_p) + " max_sum_err=" + fmt("%.3e", worst_sum) +
                " onehot_exact=" + (exact ? "true" : "false") + " uniform_err=" + fmt("%.3e", mean_err)};
}

// 3. Pearson loss cases.
Verdict pearson_suite()
{
    const std::vector<double> y{1, 3, 2, 8, 4, 4, 0};
    std::vector<double> neg(y.size()), aff(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        neg[i] = 50.0 - 2.0 * y[i];
        aff[i] = 3.0 * y[i] + 7.0;
    }
    const double self = aifnet::pearson_loss(y, y);
    const double opposite = aifnet::pearson_loss(y, neg);
    const double affine = aifnet::pearson_loss(y, aff);
    bool zero_error = false;
    try {
        aifnet::pearson_loss(y, std::vector<double>(y.size(), 4.0));
    } catch (const ValidationError&) {
        zero_error = true;
    }
    const bool ok = std::abs(self + 1.0) <= 1e-9 && std::abs(opposite - 1.0) <= 1e-9 &&
                    std::abs(affine + 1.0) <= 1e-9 && zero_error;
    return {ok, "self=" + fmt("%.12f", self) + " negated=" + fmt("%.12f", opposite) +
                    " affine=" + fmt("%.12f", affine) + " zero_variance_error=" + (zero_error ? "true" : "false")};
}

// 4. Deconvolution of noiseless synthetic voxels against their known residues.
Verdict deconvolution_oracle()
{
    const auto t0 = Clock::now();
    const synth::PhantomConfig pc;
    const std::size_t T = 60;
    std::vector<double> a(T);
    for (std::size_t i = 0; i < T; ++i)
        a[i] = synth::gamma_variate(static_cast<double>(i), pc.aif);
    const VascularFunction aif(a, 1.0);
    deconv::DeconvParams params;
    params.lambda_rel = 0.05;
    const auto sys = deconv::build_circulant_system(aif, params);

    double flow_err = 0.0, cbv_err = 0.0, tmax_err = 0.0;
    int voxels = 0;
    for (auto model : {synth::ResidueModel::Exponential, synth::ResidueModel::Boxcar})
        for (double mtt : {2.0, 3.0, 4.0, 6.0, 8.0})
            for (double delay : {0.0, 1.0, 2.0, 3.0, 4.0}) {
                synth::TissueSpec s;
                s.flow = 0.004 + 0.001 * (voxels % 9);
                s.mtt_s = mtt;
                s.delay_s = delay;
                s.residue = model;
                s.baseline_hu = 35.0;
                const auto r = deconv::deconvolve_voxel(synth::convolve_residue(aif, s), sys, params);
                const auto peak = std::max_element(r.h.begin(), r.h.end());
                double cbv = 0.0;
                for (double h : r.h)
                    cbv += h * r.dt;
                // A boxcar peaks on its whole plateau: the error is the distance to the
                // nearest sample where the true residue attains its maximum.
                std::vector<double> truth(T);
                for (std::size_t i = 0; i < T; ++i)
                    truth[i] = synth::residue_value(s, static_cast<double>(i), 1.0);
                const double top = *std::max_element(truth.begin(), truth.end());
                const double tmax = r.dt * static_cast<double>(peak - r.h.begin());
                double nearest = 1e9;
                for (std::size_t i = 0; i < T; ++i)
                    if (truth[i] == top)
                        nearest = std::min(nearest, std::abs(tmax - static_cast<double>(i)));
                flow_err = std::max(flow_err, std::abs(*peak - s.flow) / s.flow);
                cbv_err = std::max(cbv_err, std::abs(cbv - s.flow * mtt) / (s.flow * mtt));
                tmax_err = std::max(tmax_err, nearest);
                ++voxels;
            }
    const double t = seconds_since(t0);
    return {flow_err <= 0.05 && cbv_err <= 0.05 && tmax_err <= 1.0 && t < 60.0,
            "voxels=" + std::to_string(voxels) + " max_flow_err=" + fmt("%.4f", flow_err) +
                " max_cbv_err=" + fmt("%.4f", cbv_err) + " max_tmax_err_frames=" + fmt("%.0f", tmax_err) +
                " time_s=" + fmt("%.2f", t)};
}

VascularFunction scale_excess(const VascularFunction& f, double s)
{
    const double b = metrics::ptb(f).baseline;
    std::vector<double> v(f.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = b + s * (f[i] - b);
    return VascularFunction(v, f.dt(), f.kind());
}

// 5. Relative maps do not depend on the vascular-function amplitude.
Verdict scale_invariance()
{
    const auto ph = synth::make_phantom(synth::PhantomConfig{}, 501);
    const deconv::DeconvParams params;
    const auto ref = deconv::compute_maps(ph.ctp, ph.true_aif, ph.true_vof, params);
    double worst = 0.0, cbf_ratio = 0.0;
    for (double s : {0.5, 2.0}) {
        const auto m =
            deconv::compute_maps(ph.ctp, scale_excess(ph.true_aif, s), scale_excess(ph.true_vof, s), params);
        const std::pair<const Volume3D*, const Volume3D*> pairs[] = {
            {&ref.rcbf, &m.rcbf}, {&ref.rcbv, &m.rcbv}, {&ref.rmtt, &m.rmtt}, {&ref.rtmax, &m.rtmax}};
        for (const auto& [a, b] : pairs)
            for (std::size_t i = 0; i < a->dims().size(); ++i) {
                const double d = std::abs((*a)[i] - (*b)[i]);
                worst = std::max(worst, (*a)[i] == 0.0 ? d : d / std::abs((*a)[i]));
            }
        if (s == 2.0)
            cbf_ratio = m.control_mean.cbf / ref.control_mean.cbf;
    }
    return {worst <= 1e-9,
            "max_rel_diff=" + fmt("%.3e", worst) + " control_cbf_ratio_at_2x=" + fmt("%.6f", cbf_ratio)};
}

// 6. Core segmentation on the default phantom without noise.
Verdict lesion_rule()
{
    synth::PhantomConfig cfg;
    cfg.noise_sigma_hu = 0.0;
    const auto ph = synth::make_phantom(cfg, 601);
    deconv::DeconvParams params;
    params.rcbf_core_threshold = 0.38;
    params.tmax_threshold_s = 6.0;
    const auto maps = deconv::compute_maps(ph.ctp, ph.true_aif, ph.true_vof, params);
    const auto masks = deconv::segment_core(maps, params, ph.ctp.brain_mask());
    const double d = metrics::dice(masks.core, ph.core_mask);
    return {d >= 0.95, "dice=" + fmt("%.4f", d) + " core_voxels=" +
                           std::to_string(masks.core.count_nonzero()) + "/" +
                           std::to_string(ph.core_mask.count_nonzero())};
}

// 7. Desk-scale learning with default settings.
Verdict desk_learning()
{
    const auto t0 = Clock::now();
    const PipelineConfig cfg;
    std::vector<synth::Phantom> phantoms;
    std::vector<aifnet::Sample> data;
    for (std::size_t i = 0; i < 30; ++i) {
        phantoms.push_back(synth::make_phantom(cfg.phantom, derive_seed(cfg.seed, 0xC0407, i)));
        data.push_back({phantoms.back().ctp, phantoms.back().true_aif});
    }
    aifnet::Split split;
    for (std::size_t i = 0; i < 20; ++i)
        split.train.push_back(i);
    for (std::size_t i = 20; i < 25; ++i)
        split.validation.push_back(i);
    auto tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, 0xA1F);
    const auto result = aifnet::train(data, split, tc, 3, CurveKind::AIF);

    double r_sum = 0.0;
    int near = 0;
    std::string per_case;
    for (std::size_t i = 25; i < 30; ++i) {
        const auto& ph = phantoms[i];
        const auto p = aifnet::predict(result.model, ph.ctp);
        const double r = metrics::pearson_r(p.curve.values(), ph.true_aif.values());
        const auto am = unravel(ph.ctp.dims(), p.pvol.argmax());
        const auto dz = std::abs(static_cast<long>(am.z) - static_cast<long>(ph.aif_voxel.z));
        const auto dy = std::abs(static_cast<long>(am.y) - static_cast<long>(ph.aif_voxel.y));
        const auto dx = std::abs(static_cast<long>(am.x) - static_cast<long>(ph.aif_voxel.x));
        if (std::max({dz, dy, dx}) <= 1)
            ++near;
        r_sum += r;
        per_case += " " + fmt("%.4f", r);
    }
    const double mean_r = r_sum / 5.0;
    const double t = seconds_since(t0);
    return {mean_r >= 0.95 && near >= 4 && t <= 1800.0,
            "mean_r=" + fmt("%.4f", mean_r) + " r=[" + per_case.substr(1) + "] argmax_within_1=" +
                std::to_string(near) + "/5 epochs=" + std::to_string(result.history.size()) +
                " best_epoch=" + std::to_string(result.best_epoch) + " time_s=" + fmt("%.0f", t)};
}

// 8. VOF recalibration on constructed two-candidate volumes.
Verdict vof_recalibration()
{
    Rng rng(801);
    double worst = 0.0, idem = 0.0;
    for (int k = 0; k < 50; ++k) {
        const Dims3 d{1, 2, 3};
        const std::size_t T = 12, V = d.size();
        const double base = rng.uniform(20.0, 60.0);
        std::vector<double> ptbs(V, 0.0);
        ptbs[0] = rng.uniform(100.0, 400.0);
        ptbs[1] = rng.uniform(100.0, 400.0);
        std::vector<float> data(T * V);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t v = 0; v < V; ++v) {
                const double shape = t == 6 ? 1.0 : (t == 5 || t == 7 ? 0.5 : 0.0);
                data[t * V + v] = static_cast<float>(base + ptbs[v] * shape);
            }
        const CtpVolume4D x(T, d, 1.0, data);
        std::vector<double> p(V, 0.0);
        p[0] = rng.uniform(0.05, 0.6);
        p[1] = rng.uniform(0.05, 0.95 - p[0]);
        const double rest = (1.0 - p[0] - p[1]) / static_cast<double>(V - 2);
        for (std::size_t v = 2; v < V; ++v)
            p[v] = rest;
        const ProbVolume pvol(d, p);
        std::vector<double> hat(T);
        for (std::size_t t = 0; t < T; ++t)
            hat[t] = 40.0 + (t == 6 ? 150.0 : (t == 5 || t == 7 ? 75.0 : 0.0));
        const VascularFunction vof_hat(hat, 1.0, CurveKind::VOF);

        // Oracle: raw PTB of the candidate with the larger probability-weighted PTB.
        const std::size_t pick = ptbs[0] * p[0] >= ptbs[1] * p[1] ? 0 : 1;
        const double target = metrics::ptb(x.curve_at(unravel(d, pick)).values()).ptb;
        const auto out = aifnet::recalibrate_vof(vof_hat, pvol, x);
        worst = std::max(worst, std::abs(metrics::ptb(out).ptb - target));
        const auto again = aifnet::recalibrate_vof(out, pvol, x);
        for (std::size_t t = 0; t < T; ++t)
            idem = std::max(idem, std::abs(again[t] - out[t]));
    }
    return {worst <= 1e-9 && idem <= 1e-9,
            "cases=50 max_ptb_err=" + fmt("%.3e", worst) + " idempotence_err=" + fmt("%.3e", idem)};
}

// 9. Augmentation keeps the label equal to the transformed arterial voxel curve.
Verdict augmentation_consistency()
{
    synth::PhantomConfig cfg;
    cfg.noise_sigma_hu = 0.0;
    const auto ph = synth::make_phantom(cfg, 901);
    const aifnet::TrainConfig tc;
    Rng rng(902);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto draw = aifnet::draw_augmentation(rng, tc);
        const auto [x, y] = aifnet::apply_augmentation(ph.ctp, ph.true_aif, draw, tc.baseline_frames);
        const double r = metrics::pearson_r(y.values(), x.curve_at(ph.aif_voxel).values());
        worst = std::max(worst, std::abs(1.0 - r));
    }
    return {worst <= 1e-9, "draws=100 max_abs(1-r)=" + fmt("%.3e", worst)};
}

// 10. Metric examples.
Verdict metric_suite()
{
    std::vector<std::string> failed;
    auto expect = [&](bool ok, const char* name) {
        if (!ok)
            failed.push_back(name);
    };
    auto vf = [](std::vector<double> v, double dt = 1.0) { return VascularFunction(std::move(v), dt); };
    auto mask = [](std::size_t n, std::size_t from, std::size_t to) {
        std::vector<double> d(n, 0.0);
        for (std::size_t i = from; i < to; ++i)
            d[i] = 1.0;
        return Volume3D({1, 1, n}, d, Unit::Binary);
    };
    const std::vector<double> a{1, 4, 2, 8, 5};
    expect(std::abs(metrics::pearson_r(a, a) - 1.0) <= 1e-12, "pearson_self");
    expect(std::abs(metrics::spearman_r(std::vector<double>{1, 2, 3}, std::vector<double>{10, 100, 1000}) - 1.0) <=
               1e-12,
           "spearman_monotone");
    expect(metrics::tpeak(vf({5, 10, 80, 30})) == 2.0, "tpeak");
    expect(metrics::tpeak(vf({1, 7, 7, 1}, 2.0)) == 2.0, "tpeak_tie_earliest");
    const auto p = metrics::ptb(vf({40, 40, 40, 120, 190, 90}), 3);
    expect(p.ptb == 150.0 && p.baseline == 40.0, "ptb");
    const auto w = metrics::fwhm(vf({0, 0, 50, 100, 50, 0, 0}), 2);
    expect(w.fwhm_s == 2.0 && w.left_s == 2.0 && w.right_s == 4.0, "fwhm");
    expect(metrics::mse(std::vector<double>{3, 4, 5}, std::vector<double>{1, 2, 3}) == 4.0, "mse");
    const auto big = mask(40, 0, 30), small = mask(40, 0, 20);
    expect(metrics::dice(big, big) == 1.0, "dice_self");
    expect(std::abs(metrics::dice(big, small) - 0.8) <= 1e-15, "dice_partial");
    expect(metrics::dice(mask(40, 0, 10), mask(40, 20, 30)) == 0.0, "dice_disjoint");
    expect(metrics::volume_error(big, small, 1.0).error_ml == 10.0, "volume_error");
    const std::vector<int> labels{0, 0, 0, 1, 1};
    expect(metrics::roc_auc(std::vector<double>{1, 2, 3, 4, 5}, labels) == 1.0, "auc_perfect");
    expect(metrics::roc_auc(std::vector<double>{7, 7, 7, 7, 7}, labels) == 0.5, "auc_ties");
    std::string names;
    for (const auto& f : failed)
        names += (names.empty() ? "" : ",") + f;
    return {failed.empty(), "examples=13 failed=" + std::to_string(failed.size()) + (names.empty() ? "" : " [" + names + "]")};
}

// 11. Byte-identical outputs from repeated runs.
Verdict determinism()
{
    const auto root = fs::temp_directory_path() / "perfkit_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);

    const PipelineConfig base;
    const auto& pc = base.phantom;
    for (const char* run : {"a", "b"}) {
        const auto ph = synth::make_phantom(pc, 1101);
        fs::create_directories(root / "synth" / run);
        pipeline::write_phantom_case(root / "synth" / run, ph, base);
    }
    const bool synth_same = snapshot(root / "synth" / "a") == snapshot(root / "synth" / "b");

    std::vector<aifnet::Sample> data;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto ph = synth::make_phantom(pc, 1110 + i);
        data.push_back({ph.ctp, ph.true_aif});
    }
    aifnet::TrainConfig tc;
    tc.max_epochs = 2;
    tc.patience = 2;
    tc.seed = 1120;
    for (const char* run : {"a.anet", "b.anet"})
        aifnet::save_model(root / run, aifnet::train(data, {{0, 1, 2}, {3}}, tc, 2, CurveKind::AIF).model);
    const bool train_same = slurp(root / "a.anet") == slurp(root / "b.anet");

    auto cfg = parse_config("cohort_train = 2\ncohort_validation = 1\ncohort_test = 1\n"
                            "aif_layers = 1\nvof_layers = 1\nmax_epochs = 2\npatience = 2\n");
    cfg.seed = 1130;
    pipeline::end_to_end(cfg, root / "e2e_a");
    pipeline::end_to_end(cfg, root / "e2e_b");
    const bool e2e_same = snapshot(root / "e2e_a") == snapshot(root / "e2e_b");
    fs::remove_all(root);
    auto word = [](bool b) { return b ? "identical" : "DIFFERENT"; };
    return {synth_same && train_same && e2e_same,
            std::string("synth=") + word(synth_same) + " train=" + word(train_same) + " end_to_end=" + word(e2e_same)};
}

}  // namespace

int main(int argc, char** argv)
{
    struct Criterion {
        const char* id;
        const char* name;
        std::function<Verdict()> run;
    };
    const std::vector<Criterion> criteria = {
        {"AC1", "gradient_check", gradient_check},
        {"AC2", "probability_contract", probability_contract},
        {"AC3", "pearson_loss", pearson_suite},
        {"AC4", "deconvolution_oracle", deconvolution_oracle},
        {"AC5", "aif_scale_invariance", scale_invariance},
        {"AC6", "lesion_rule", lesion_rule},
        {"AC7", "desk_learning", desk_learning},
        {"AC8", "vof_recalibration", vof_recalibration},
        {"AC9", "augmentation_consistency", augmentation_consistency},
        {"AC10", "metric_suite", metric_suite},
        {"AC11", "determinism", determinism},
    };
    // Optional arguments select criteria by id, e.g. `perfkit_acceptance AC1 AC4`.
    std::vector<std::string> only(argv + 1, argv + argc);
    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end())
            continue;
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += v.pass ? 0 : 1;
        std::printf("%s %s %s %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
