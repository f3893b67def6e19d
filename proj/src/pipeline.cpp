#include "perfkit/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "perfkit/io.hpp"
#include "perfkit/metrics.hpp"
#include "perfkit/random.hpp"
#include "perfkit/svg.hpp"

namespace perfkit::pipeline {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string shortest(double v)
{
    if (std::isnan(v))
        return "";
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

Unit map_unit(std::string_view name)
{
    if (name == "cbf")
        return Unit::Flow;
    if (name == "cbv")
        return Unit::Volume;
    if (name == "mtt" || name == "tmax")
        return Unit::Seconds;
    return Unit::Ratio;
}

const Volume3D& map_ref(const PerfusionMaps& m, std::string_view name)
{
    if (name == "cbf") return m.cbf;
    if (name == "cbv") return m.cbv;
    if (name == "mtt") return m.mtt;
    if (name == "tmax") return m.tmax;
    if (name == "rcbf") return m.rcbf;
    if (name == "rcbv") return m.rcbv;
    if (name == "rmtt") return m.rmtt;
    return m.rtmax;
}

Volume3D& map_ref(PerfusionMaps& m, std::string_view name)
{
    return const_cast<Volume3D&>(map_ref(static_cast<const PerfusionMaps&>(m), name));
}

nlohmann::ordered_json voxel_json(const Voxel& v)
{
    return {v.z, v.y, v.x};
}

// Runs f and maps a degenerate-input ValidationError to NaN.
template <class F>
double or_nan(F&& f)
{
    try {
        return f();
    } catch (const ValidationError&) {
        return kNaN;
    }
}

std::vector<double> masked(const Volume3D& v, const std::optional<Volume3D>& mask)
{
    std::vector<double> out;
    for (std::size_t i = 0; i < v.dims().size(); ++i)
        if (in_mask(mask, i))
            out.push_back(v[i]);
    return out;
}

double percentile(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string case_name(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03zu", i);
    return buf;
}

void log_event(const Logger& log, std::string_view level, const std::string& record)
{
    if (log)
        log(level, record);
}

}  // namespace

void write_phantom_case(const fs::path& dir, const synth::Phantom& phantom, const PipelineConfig& cfg)
{
    fs::create_directories(dir);
    io::write_ctp4(dir / "ctp.ctp4", phantom.ctp);
    if (phantom.ctp.brain_mask())
        io::write_mask(dir / "brain_mask.vol3", *phantom.ctp.brain_mask());
    io::write_curve_csv(dir / "aif.csv", phantom.true_aif);
    io::write_curve_csv(dir / "vof.csv", phantom.true_vof);
    write_maps(dir, phantom.truth_maps, {phantom.core_mask, phantom.lesion_mask}, cfg.voxel_ml);

    nlohmann::ordered_json m;
    m["seed"] = phantom.seed;
    m["dims"] = {phantom.ctp.dims().z, phantom.ctp.dims().y, phantom.ctp.dims().x};
    m["frames"] = phantom.ctp.frames();
    m["dt_s"] = phantom.ctp.dt();
    m["aif_voxel"] = voxel_json(phantom.aif_voxel);
    m["vof_voxel"] = voxel_json(phantom.vof_voxel);
    m["core_voxels"] = phantom.core_mask.count_nonzero();
    m["lesion_voxels"] = phantom.lesion_mask.count_nonzero();
    m["files"] = {"ctp.ctp4", "brain_mask.vol3", "aif.csv", "vof.csv", "cbf.vol3", "cbv.vol3", "mtt.vol3",
                  "tmax.vol3", "rcbf.vol3", "rcbv.vol3", "rmtt.vol3", "rtmax.vol3", "core_mask.vol3",
                  "lesion_mask.vol3", "summary.csv"};
    io::write_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

void write_maps(const fs::path& dir, const PerfusionMaps& maps, const deconv::LesionMasks& masks, double voxel_ml)
{
    fs::create_directories(dir);
    for (const char* name : kMapNames)
        io::write_vol3(dir / (std::string(name) + ".vol3"), map_ref(maps, name));
    io::write_mask(dir / "core_mask.vol3", masks.core);
    io::write_mask(dir / "lesion_mask.vol3", masks.lesion);

    const auto core = masks.core.count_nonzero();
    const auto lesion = masks.lesion.count_nonzero();
    std::string csv = "control_cbf,control_cbv,control_mtt,control_tmax,core_voxels,core_ml,lesion_voxels,lesion_ml\n";
    csv += shortest(maps.control_mean.cbf) + "," + shortest(maps.control_mean.cbv) + "," +
           shortest(maps.control_mean.mtt) + "," + shortest(maps.control_mean.tmax) + "," + std::to_string(core) +
           "," + shortest(static_cast<double>(core) * voxel_ml) + "," + std::to_string(lesion) + "," +
           shortest(static_cast<double>(lesion) * voxel_ml) + "\n";
    io::write_atomic(dir / "summary.csv", csv);
}

PerfusionMaps read_maps(const fs::path& dir)
{
    PerfusionMaps maps;
    for (const char* name : kMapNames)
        map_ref(maps, name) = io::read_vol3(dir / (std::string(name) + ".vol3"), map_unit(name));
    const Dims3 d = maps.cbf.dims();
    for (const char* name : kMapNames)
        if (map_ref(maps, name).dims() != d)
            throw FormatError("map " + std::string(name) + " in " + dir.string() + " differs in dims");
    return maps;
}

deconv::LesionMasks read_masks(const fs::path& dir)
{
    return {io::read_mask(dir / "core_mask.vol3"), io::read_mask(dir / "lesion_mask.vol3")};
}

std::optional<Volume3D> read_optional_mask(const fs::path& path)
{
    if (!fs::exists(path))
        return std::nullopt;
    return io::read_mask(path);
}

CtpVolume4D read_case_ctp(const fs::path& dir)
{
    auto ctp = io::read_ctp4(dir / "ctp.ctp4");
    if (auto mask = read_optional_mask(dir / "brain_mask.vol3")) {
        const auto data = ctp.data();
        return CtpVolume4D(ctp.frames(), ctp.dims(), ctp.dt(), std::vector<float>(data.begin(), data.end()),
                           std::move(mask));
    }
    return ctp;
}

std::vector<fs::path> list_cases(const fs::path& root)
{
    if (!fs::is_directory(root))
        throw IoError("not a directory: " + root.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "ctp.ctp4"))
            out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

aifnet::Split split_cases(std::size_t n, double validation_fraction, std::uint64_t seed)
{
    if (n < 2)
        throw ValidationError("training needs at least 2 cases, found " + std::to_string(n));
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ValidationError("validation_fraction must lie in (0, 1)");
    const auto nval = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n))), 1, n - 1);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0x5B1));
    rng.shuffle(order.begin(), order.end());
    aifnet::Split split;
    split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(nval));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(nval), order.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.train.begin(), split.train.end());
    return split;
}

void write_history_csv(const fs::path& path, const std::vector<aifnet::EpochRecord>& history)
{
    std::string csv = "epoch,train_loss,validation_loss\n";
    for (const auto& r : history)
        csv += std::to_string(r.epoch) + "," + shortest(r.train_loss) + "," + shortest(r.validation_loss) + "\n";
    io::write_atomic(path, csv);
}

CaseView read_case_view(const fs::path& dir)
{
    CaseView v;
    if (fs::exists(dir / "aif.csv"))
        v.aif = io::read_curve_csv(dir / "aif.csv", CurveKind::AIF);
    if (fs::exists(dir / "vof.csv"))
        v.vof = io::read_curve_csv(dir / "vof.csv", CurveKind::VOF);
    v.maps = read_maps(dir);
    v.masks = read_masks(dir);
    return v;
}

const std::vector<std::string>& report_columns()
{
    static const std::vector<std::string> cols = {
        "aif_r",           "aif_tpeak_err_s",       "aif_fwhm_err_s",
        "aif_ptb_err_hu",  "aif_mse",               "vof_r",
        "vof_tpeak_err_s", "vof_fwhm_err_s",        "vof_ptb_err_hu",
        "vof_mse",         "rcbf_r",                "rcbv_r",
        "rmtt_rho",        "rtmax_rho",             "core_dice",
        "core_volume_error_ml", "core_abs_volume_error_ml", "core_pred_ml",
        "core_truth_ml",   "lesion_dice",           "lesion_volume_error_ml",
        "lesion_abs_volume_error_ml", "lesion_pred_ml", "lesion_truth_ml",
        "core_auc",        "core_volume_r",         "lesion_volume_r",
    };
    return cols;
}

ReportRow compare_case(const std::string& pair, const std::string& name, const CaseView& pred, const CaseView& ref,
                       const deconv::LesionMasks& truth_masks, const std::optional<Volume3D>& brain_mask,
                       double voxel_ml)
{
    ReportRow row{pair, name, {}};
    auto& v = row.values;

    auto signal = [&](const std::optional<VascularFunction>& p, const std::optional<VascularFunction>& r) {
        if (!p || !r || p->size() != r->size()) {
            v.insert(v.end(), 5, kNaN);
            return;
        }
        v.push_back(or_nan([&] { return metrics::pearson_r(p->values(), r->values()); }));
        v.push_back(metrics::tpeak(*p) - metrics::tpeak(*r));
        v.push_back(or_nan([&] { return metrics::fwhm(*p).fwhm_s - metrics::fwhm(*r).fwhm_s; }));
        v.push_back(or_nan([&] { return metrics::ptb(*p).ptb - metrics::ptb(*r).ptb; }));
        v.push_back(metrics::mse(p->values(), r->values()));
    };
    signal(pred.aif, ref.aif);
    signal(pred.vof, ref.vof);

    if (pred.maps.rcbf.dims() != ref.maps.rcbf.dims())
        throw ValidationError("case " + name + ": predicted and reference maps differ in dims");
    auto corr = [&](const Volume3D& a, const Volume3D& b, bool rank) {
        const auto x = masked(a, brain_mask);
        const auto y = masked(b, brain_mask);
        return or_nan([&] { return rank ? metrics::spearman_r(x, y) : metrics::pearson_r(x, y); });
    };
    v.push_back(corr(pred.maps.rcbf, ref.maps.rcbf, false));
    v.push_back(corr(pred.maps.rcbv, ref.maps.rcbv, false));
    v.push_back(corr(pred.maps.rmtt, ref.maps.rmtt, true));
    v.push_back(corr(pred.maps.rtmax, ref.maps.rtmax, true));

    auto lesion = [&](const Volume3D& p, const Volume3D& t) {
        const auto rep = metrics::lesion_report(p, t, voxel_ml);
        v.insert(v.end(),
                 {rep.dice, rep.volume_error_ml, rep.abs_volume_error_ml, rep.pred_volume_ml, rep.truth_volume_ml});
    };
    lesion(pred.masks.core, truth_masks.core);
    lesion(pred.masks.lesion, truth_masks.lesion);

    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < truth_masks.core.dims().size(); ++i) {
        if (!in_mask(brain_mask, i))
            continue;
        scores.push_back(1.0 - pred.maps.rcbf[i]);
        labels.push_back(truth_masks.core[i] > 0.5 ? 1 : 0);
    }
    v.push_back(or_nan([&] { return metrics::roc_auc(scores, labels); }));
    v.push_back(kNaN);
    v.push_back(kNaN);
    return row;
}

std::string format_report(const std::vector<ReportRow>& rows)
{
    const auto& cols = report_columns();
    std::string out = "pair,case";
    for (const auto& c : cols)
        out += "," + c;
    out += "\n";
    auto emit = [&](const std::string& pair, const std::string& name, const std::vector<double>& values) {
        out += pair + "," + name;
        for (double x : values)
            out += "," + shortest(x);
        out += "\n";
    };
    for (const auto& r : rows) {
        if (r.values.size() != cols.size())
            throw ValidationError("report row has " + std::to_string(r.values.size()) + " values, expected " +
                                  std::to_string(cols.size()));
        emit(r.pair, r.case_name, r.values);
    }

    const auto col_index = [&](std::string_view name) {
        return static_cast<std::size_t>(std::find(cols.begin(), cols.end(), name) - cols.begin());
    };
    std::vector<std::string> pairs;
    for (const auto& r : rows)
        if (std::find(pairs.begin(), pairs.end(), r.pair) == pairs.end())
            pairs.push_back(r.pair);

    for (const auto& pair : pairs) {
        std::vector<const ReportRow*> group;
        for (const auto& r : rows)
            if (r.pair == pair)
                group.push_back(&r);
        auto column = [&](std::size_t c) {
            std::vector<double> x;
            for (const auto* r : group)
                if (std::isfinite(r->values[c]))
                    x.push_back(r->values[c]);
            return x;
        };
        auto volume_r = [&](std::string_view pred_col, std::string_view truth_col) {
            std::vector<double> p, t;
            for (const auto* r : group) {
                p.push_back(r->values[col_index(pred_col)]);
                t.push_back(r->values[col_index(truth_col)]);
            }
            return or_nan([&] { return metrics::pearson_r(p, t); });
        };
        const double core_r = volume_r("core_pred_ml", "core_truth_ml");
        const double lesion_r = volume_r("lesion_pred_ml", "lesion_truth_ml");

        std::vector<double> mean(cols.size()), sd(cols.size()), p5(cols.size()), p95(cols.size());
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const auto x = column(c);
            if (x.empty()) {
                mean[c] = sd[c] = p5[c] = p95[c] = kNaN;
                continue;
            }
            const double n = static_cast<double>(x.size());
            mean[c] = std::accumulate(x.begin(), x.end(), 0.0) / n;
            double ss = 0.0;
            for (double xi : x)
                ss += (xi - mean[c]) * (xi - mean[c]);
            sd[c] = x.size() > 1 ? std::sqrt(ss / (n - 1.0)) : kNaN;
            p5[c] = percentile(x, 0.05);
            p95[c] = percentile(x, 0.95);
        }
        for (auto* stats : {&mean, &sd, &p5, &p95}) {
            (*stats)[col_index("core_volume_r")] = core_r;
            (*stats)[col_index("lesion_volume_r")] = lesion_r;
        }
        emit(pair, "mean", mean);
        emit(pair, "std", sd);
        emit(pair, "p5", p5);
        emit(pair, "p95", p95);
    }
    return out;
}

EndToEndResult end_to_end(const PipelineConfig& cfg, const fs::path& out, const Logger& log)
{
    cfg.validate();
    if (cfg.cohort_test < 1)
        throw ValidationError("end-to-end run needs cohort_test >= 1");

    fs::create_directories(out);
    const fs::path staging = out / ".staging";
    fs::remove_all(staging);
    fs::create_directories(staging);

    try {
        EndToEndResult result;
        const std::size_t n_train = cfg.cohort_train, n_val = cfg.cohort_validation, n_test = cfg.cohort_test;
        const std::size_t total = n_train + n_val + n_test;

        std::vector<synth::Phantom> cohort;
        cohort.reserve(total);
        for (std::size_t i = 0; i < total; ++i) {
            cohort.push_back(synth::make_phantom(cfg.phantom, derive_seed(cfg.seed, 0xC0407, i)));
            write_phantom_case(staging / "cohort" / case_name(i), cohort.back(), cfg);
        }
        log_event(log, "INFO", "stage=synth cases=" + std::to_string(total));

        aifnet::Split split;
        for (std::size_t i = 0; i < n_train; ++i)
            split.train.push_back(i);
        for (std::size_t i = n_train; i < n_train + n_val; ++i)
            split.validation.push_back(i);

        auto train_kind = [&](CurveKind kind) {
            std::vector<aifnet::Sample> samples;
            for (std::size_t i = 0; i < n_train + n_val; ++i)
                samples.push_back({cohort[i].ctp, kind == CurveKind::AIF ? cohort[i].true_aif : cohort[i].true_vof});
            aifnet::TrainConfig tc = cfg.train;
            tc.seed = derive_seed(cfg.seed, kind == CurveKind::AIF ? 0xA1F : 0x70F);
            const std::string label = kind == CurveKind::AIF ? "aif" : "vof";
            const std::size_t layers = kind == CurveKind::AIF ? cfg.aif_layers : cfg.vof_layers;
            auto res = aifnet::train(samples, split, tc, layers, kind, [&](const aifnet::EpochRecord& r) {
                log_event(log, "INFO",
                          "stage=train kind=" + label + " epoch=" + std::to_string(r.epoch) +
                              " train_loss=" + shortest(r.train_loss) + " validation_loss=" +
                              shortest(r.validation_loss));
            });
            fs::create_directories(staging / "models");
            aifnet::save_model(staging / "models" / (label + ".anet"), res.model);
            write_history_csv(staging / "models" / (label + "_history.csv"), res.history);
            log_event(log, "INFO",
                      "stage=train kind=" + label + " best_epoch=" + std::to_string(res.best_epoch) +
                          " best_validation_loss=" + shortest(res.best_validation_loss));
            return res;
        };
        result.aif_training = train_kind(CurveKind::AIF);
        result.vof_training = train_kind(CurveKind::VOF);

        for (std::size_t i = n_train + n_val; i < total; ++i) {
            const auto& ph = cohort[i];
            const std::string name = case_name(i);
            const auto aif_hat = aifnet::predict(result.aif_training.model, ph.ctp);
            const auto vof_raw = aifnet::predict(result.vof_training.model, ph.ctp);
            const auto vof_hat =
                aifnet::recalibrate_vof(vof_raw.curve, vof_raw.pvol, ph.ctp, cfg.train.baseline_frames);

            CaseView pred, ref;
            pred.aif = aif_hat.curve;
            pred.vof = vof_hat;
            pred.maps = deconv::compute_maps(ph.ctp, aif_hat.curve, vof_hat, cfg.deconv);
            pred.masks = deconv::segment_core(pred.maps, cfg.deconv, ph.ctp.brain_mask());
            ref.aif = ph.true_aif;
            ref.vof = ph.true_vof;
            ref.maps = deconv::compute_maps(ph.ctp, ph.true_aif, ph.true_vof, cfg.deconv);
            ref.masks = deconv::segment_core(ref.maps, cfg.deconv, ph.ctp.brain_mask());

            const fs::path pdir = staging / "predicted" / name;
            write_maps(pdir, pred.maps, pred.masks, cfg.voxel_ml);
            io::write_curve_csv(pdir / "aif.csv", *pred.aif);
            io::write_curve_csv(pdir / "vof.csv", *pred.vof);
            io::write_vol3(pdir / "aif_pvol.vol3",
                           Volume3D(ph.ctp.dims(), {aif_hat.pvol.probs().begin(), aif_hat.pvol.probs().end()},
                                    Unit::Probability));
            io::write_vol3(pdir / "vof_pvol.vol3",
                           Volume3D(ph.ctp.dims(), {vof_raw.pvol.probs().begin(), vof_raw.pvol.probs().end()},
                                    Unit::Probability));
            const fs::path rdir = staging / "reference" / name;
            write_maps(rdir, ref.maps, ref.masks, cfg.voxel_ml);
            io::write_curve_csv(rdir / "aif.csv", *ref.aif);
            io::write_curve_csv(rdir / "vof.csv", *ref.vof);

            fs::create_directories(staging / "plots");
            const std::vector<svg::NamedCurve> aifs = {{"true AIF", ph.true_aif}, {"predicted AIF", *pred.aif}};
            io::write_atomic(staging / "plots" / (name + "_aif.svg"), svg::curve_plot(aifs, name + " AIF"));
            const std::vector<svg::NamedCurve> vofs = {{"true VOF", ph.true_vof}, {"predicted VOF", *pred.vof}};
            io::write_atomic(staging / "plots" / (name + "_vof.svg"), svg::curve_plot(vofs, name + " VOF"));

            const deconv::LesionMasks truth{ph.core_mask, ph.lesion_mask};
            result.rows.push_back(
                compare_case("predicted", name, pred, ref, truth, ph.ctp.brain_mask(), cfg.voxel_ml));
            result.rows.push_back(
                compare_case("reference", name, ref, ref, truth, ph.ctp.brain_mask(), cfg.voxel_ml));
            const auto& row = result.rows[result.rows.size() - 2];
            log_event(log, "INFO",
                      "stage=evaluate case=" + name + " aif_r=" + shortest(row.values[0]) +
                          " core_dice=" + shortest(row.values[14]));
        }

        io::write_atomic(staging / "report.csv", format_report(result.rows));
        io::write_atomic(staging / "config.conf", format_config(cfg));

        for (const auto& entry : fs::directory_iterator(staging)) {
            const fs::path target = out / entry.path().filename();
            fs::remove_all(target);
            fs::rename(entry.path(), target);
        }
        fs::remove_all(staging);
        log_event(log, "INFO", "stage=done out=" + out.string());
        return result;
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
}

}  // namespace perfkit::pipeline
