#include "perfkit/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <iostream>
#include <optional>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "perfkit/config.hpp"
#include "perfkit/io.hpp"
#include "perfkit/pipeline.hpp"
#include "perfkit/svg.hpp"

namespace perfkit::cli {

namespace {

namespace fs = std::filesystem;

class Log {
public:
    explicit Log(std::ostream& err) : err_(err) {}

    void operator()(std::string_view level, const std::string& record) const
    {
        if (!quiet || level != "INFO")
            err_ << level << ' ' << record << '\n';
    }

    bool quiet = false;

private:
    std::ostream& err_;
};

std::string one_line(std::string s)
{
    for (char& c : s)
        if (c == '\n' || c == '\r')
            c = ' ';
    return s;
}

std::string quoted(const std::string& s)
{
    std::string out = "\"";
    for (char c : one_line(s)) {
        if (c == '"' || c == '\\')
            out += '\\';
        out += c;
    }
    return out + "\"";
}

std::string num(double v)
{
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

void apply_threads(int threads)
{
    if (threads <= 0) {
        if (const char* env = std::getenv("PERFKIT_THREADS")) {
            const std::string_view s(env);
            int n = 0;
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
            if (ec != std::errc() || p != s.data() + s.size() || n < 1)
                throw ValidationError("PERFKIT_THREADS must be a positive integer, got '" + std::string(s) + "'");
            threads = n;
        }
    }
    if (threads > 0)
        Eigen::setNbThreads(threads);
}

CurveKind parse_kind(const std::string& s)
{
    if (s == "aif")
        return CurveKind::AIF;
    if (s == "vof")
        return CurveKind::VOF;
    throw ValidationError("--kind must be aif or vof, got '" + s + "'");
}

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    bool quiet = false;

    // synth
    std::size_t count = 1;
    // train
    std::string data, kind = "aif", history;
    std::optional<std::size_t> layers;
    // predict
    std::string model, ctp, out_curve, out_pvol, mask;
    bool recalibrate_vof = false;
    // deconvolve / segment
    std::string aif, vof, maps;
    std::optional<double> lambda_rel, tmax_thresh, rcbf_thresh, voxel_ml;
    // evaluate
    std::string pred, truth;
    // plot
    std::vector<std::string> curves, labels;
    std::string map;
    std::size_t slice = 0;

    std::string out;
};

PipelineConfig resolve_config(const Options& o)
{
    PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    if (o.seed)
        cfg.seed = *o.seed;
    if (o.lambda_rel)
        cfg.deconv.lambda_rel = *o.lambda_rel;
    if (o.tmax_thresh)
        cfg.deconv.tmax_threshold_s = *o.tmax_thresh;
    if (o.rcbf_thresh)
        cfg.deconv.rcbf_core_threshold = *o.rcbf_thresh;
    if (o.voxel_ml)
        cfg.voxel_ml = *o.voxel_ml;
    if (o.threads > 0)
        cfg.threads = o.threads;
    cfg.validate();
    return cfg;
}

int cmd_synth(const Options& o, const Log& log)
{
    const auto cfg = resolve_config(o);
    if (o.count < 1)
        throw ValidationError("--count must be positive");
    const fs::path out(o.out);
    if (o.count == 1) {
        const auto ph = synth::make_phantom(cfg.phantom, cfg.seed);
        pipeline::write_phantom_case(out, ph, cfg);
        log("INFO", "cmd=synth out=" + out.string() + " seed=" + std::to_string(cfg.seed) +
                        " aif_voxel=" + to_string(ph.aif_voxel) + " vof_voxel=" + to_string(ph.vof_voxel));
        return 0;
    }
    for (std::size_t i = 0; i < o.count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "case_%03zu", i);
        const auto ph = synth::make_phantom(cfg.phantom, derive_seed(cfg.seed, 0xC0407, i));
        pipeline::write_phantom_case(out / name, ph, cfg);
        log("INFO", "cmd=synth case=" + std::string(name) + " seed=" + std::to_string(ph.seed));
    }
    return 0;
}

int cmd_train(const Options& o, const Log& log)
{
    const auto cfg = resolve_config(o);
    const CurveKind kind = parse_kind(o.kind);
    const auto cases = pipeline::list_cases(o.data);
    std::vector<aifnet::Sample> samples;
    for (const auto& dir : cases) {
        const char* label = kind == CurveKind::AIF ? "aif.csv" : "vof.csv";
        samples.push_back({pipeline::read_case_ctp(dir), io::read_curve_csv(dir / label, kind)});
    }
    const auto split = pipeline::split_cases(samples.size(), cfg.validation_fraction, cfg.seed);
    aifnet::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, kind == CurveKind::AIF ? 0xA1F : 0x70F);
    const std::size_t layers = o.layers.value_or(kind == CurveKind::AIF ? cfg.aif_layers : cfg.vof_layers);
    log("INFO", "cmd=train kind=" + o.kind + " cases=" + std::to_string(samples.size()) +
                    " train=" + std::to_string(split.train.size()) +
                    " validation=" + std::to_string(split.validation.size()) + " layers=" + std::to_string(layers));
    const auto res = aifnet::train(samples, split, tc, layers, kind, [&](const aifnet::EpochRecord& r) {
        log("INFO", "cmd=train epoch=" + std::to_string(r.epoch) + " train_loss=" + num(r.train_loss) +
                        " validation_loss=" + num(r.validation_loss));
    });
    aifnet::save_model(o.out, res.model);
    if (!o.history.empty())
        pipeline::write_history_csv(o.history, res.history);
    log("INFO", "cmd=train out=" + o.out + " best_epoch=" + std::to_string(res.best_epoch) +
                    " best_validation_loss=" + num(res.best_validation_loss));
    return 0;
}

CtpVolume4D load_ctp(const std::string& path, const std::string& mask)
{
    auto ctp = io::read_ctp4(path);
    if (mask.empty())
        return ctp;
    const auto data = ctp.data();
    return CtpVolume4D(ctp.frames(), ctp.dims(), ctp.dt(), std::vector<float>(data.begin(), data.end()),
                       io::read_mask(mask));
}

int cmd_predict(const Options& o, const Log& log)
{
    const auto cfg = resolve_config(o);
    const auto model = aifnet::load_model(o.model);
    if (o.recalibrate_vof && model.kind != CurveKind::VOF)
        throw ValidationError("--recalibrate-vof needs a VOF model");
    const auto ctp = load_ctp(o.ctp, o.mask);
    const auto pred = aifnet::predict(model, ctp);
    const auto curve = o.recalibrate_vof
                           ? aifnet::recalibrate_vof(pred.curve, pred.pvol, ctp, cfg.train.baseline_frames)
                           : pred.curve;
    io::write_curve_csv(o.out_curve, curve);
    if (!o.out_pvol.empty())
        io::write_vol3(o.out_pvol, Volume3D(ctp.dims(), {pred.pvol.probs().begin(), pred.pvol.probs().end()},
                                            Unit::Probability));
    log("INFO", "cmd=predict out=" + o.out_curve + " argmax=" + to_string(unravel(ctp.dims(), pred.pvol.argmax())) +
                    " pmax=" + num(pred.pvol[pred.pvol.argmax()]));
    return 0;
}

int cmd_deconvolve(const Options& o, const Log& log)
{
    const auto cfg = resolve_config(o);
    const auto ctp = load_ctp(o.ctp, o.mask);
    const auto aif = io::read_curve_csv(o.aif, CurveKind::AIF);
    const auto vof = io::read_curve_csv(o.vof, CurveKind::VOF);
    const auto maps = deconv::compute_maps(ctp, aif, vof, cfg.deconv);
    const auto masks = deconv::segment_core(maps, cfg.deconv, ctp.brain_mask());
    pipeline::write_maps(o.out, maps, masks, cfg.voxel_ml);
    log("INFO", "cmd=deconvolve out=" + o.out + " core_ml=" + num(masks.core.count_nonzero() * cfg.voxel_ml) +
                    " lesion_ml=" + num(masks.lesion.count_nonzero() * cfg.voxel_ml));
    return 0;
}

int cmd_segment(const Options& o, const Log& log)
{
    const auto cfg = resolve_config(o);
    const auto maps = pipeline::read_maps(o.maps);
    const auto mask = o.mask.empty() ? pipeline::read_optional_mask(fs::path(o.maps) / "brain_mask.vol3")
                                     : std::optional<Volume3D>(io::read_mask(o.mask));
    const auto masks = deconv::segment_core(maps, cfg.deconv, mask);
    fs::create_directories(o.out);
    io::write_mask(fs::path(o.out) / "core_mask.vol3", masks.core);
    io::write_mask(fs::path(o.out) / "lesion_mask.vol3", masks.lesion);
    const auto core = masks.core.count_nonzero(), lesion = masks.lesion.count_nonzero();
    io::write_atomic(fs::path(o.out) / "segment.csv",
                     "core_voxels,core_ml,lesion_voxels,lesion_ml\n" + std::to_string(core) + "," +
                         num(static_cast<double>(core) * cfg.voxel_ml) + "," + std::to_string(lesion) + "," +
                         num(static_cast<double>(lesion) * cfg.voxel_ml) + "\n");
    log("INFO", "cmd=segment out=" + o.out + " core_voxels=" + std::to_string(core) +
                    " lesion_voxels=" + std::to_string(lesion));
    return 0;
}

int cmd_evaluate(const Options& o, const Log& log)
{
    const auto cfg = resolve_config(o);
    const fs::path pred(o.pred), truth(o.truth);
    std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> cases;
    if (fs::exists(pred / "rcbf.vol3")) {
        cases.push_back({pred.filename().string(), {pred, truth}});
    } else {
        if (!fs::is_directory(pred))
            throw IoError("not a directory: " + pred.string());
        std::vector<fs::path> dirs;
        for (const auto& e : fs::directory_iterator(pred))
            if (e.is_directory() && fs::exists(e.path() / "rcbf.vol3"))
                dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs)
            cases.push_back({d.filename().string(), {d, truth / d.filename()}});
        if (cases.empty())
            throw IoError("no map directories under " + pred.string());
    }
    std::vector<pipeline::ReportRow> rows;
    for (const auto& [name, dirs] : cases) {
        const auto p = pipeline::read_case_view(dirs.first);
        const auto t = pipeline::read_case_view(dirs.second);
        const auto mask = o.mask.empty() ? pipeline::read_optional_mask(dirs.second / "brain_mask.vol3")
                                         : std::optional<Volume3D>(io::read_mask(o.mask));
        rows.push_back(pipeline::compare_case("predicted", name, p, t, t.masks, mask, cfg.voxel_ml));
    }
    io::write_atomic(o.out, pipeline::format_report(rows));
    log("INFO", "cmd=evaluate out=" + o.out + " cases=" + std::to_string(rows.size()));
    return 0;
}

int cmd_plot(const Options& o, const Log& log)
{
    if (o.curves.empty() == o.map.empty())
        throw ValidationError("plot needs either --curve (repeatable) or --map");
    std::string doc;
    if (!o.curves.empty()) {
        if (!o.labels.empty() && o.labels.size() != o.curves.size())
            throw ValidationError("--label must be given once per --curve");
        std::vector<svg::NamedCurve> curves;
        for (std::size_t i = 0; i < o.curves.size(); ++i)
            curves.push_back({o.labels.empty() ? fs::path(o.curves[i]).stem().string() : o.labels[i],
                              io::read_curve_csv(o.curves[i])});
        doc = svg::curve_plot(curves);
    } else {
        doc = svg::map_slice(io::read_vol3(o.map), o.slice, fs::path(o.map).stem().string() + " z=" +
                                                                 std::to_string(o.slice));
    }
    io::write_atomic(o.out, doc);
    log("INFO", "cmd=plot out=" + o.out);
    return 0;
}

int cmd_pipeline(const Options& o, const Log& log)
{
    const auto cfg = resolve_config(o);
    apply_threads(cfg.threads);
    pipeline::end_to_end(cfg, o.out, [&](std::string_view level, const std::string& rec) { log(level, rec); });
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    Options o;
    Log log(err);

    CLI::App app{"CT perfusion toolkit: phantoms, vascular-function network, deconvolution"};
    app.name("perfkit");
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--threads", o.threads, "worker threads (falls back to PERFKIT_THREADS)");
    app.add_flag("--quiet", o.quiet, "suppress INFO log records");

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "key = value configuration file")->check(CLI::ExistingFile);
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic phantom (or a cohort with --count)");
    add_common(synth);
    synth->add_option("--seed", o.seed, "phantom seed");
    synth->add_option("--count", o.count, "number of phantoms");
    synth->add_option("--out", o.out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a vascular-function network on case directories");
    add_common(train);
    train->add_option("--data", o.data, "directory of cases (ctp.ctp4 + aif.csv/vof.csv)")->required();
    train->add_option("--kind", o.kind, "aif or vof");
    train->add_option("--layers", o.layers, "feature layer count K");
    train->add_option("--seed", o.seed, "training seed");
    train->add_option("--history", o.history, "per-epoch loss CSV");
    train->add_option("--out", o.out, "model file")->required();

    auto* predict = app.add_subcommand("predict", "predict a vascular function from a CTP series");
    add_common(predict);
    predict->add_option("--model", o.model, "model file")->required();
    predict->add_option("--ctp", o.ctp, "CTP4 series")->required();
    predict->add_option("--mask", o.mask, "brain mask VOL3");
    predict->add_option("--out-curve", o.out_curve, "curve CSV")->required();
    predict->add_option("--out-pvol", o.out_pvol, "probability volume VOL3");
    predict->add_flag("--recalibrate-vof", o.recalibrate_vof, "rescale a VOF prediction to its source voxel PTB");

    auto* dec = app.add_subcommand("deconvolve", "compute perfusion maps and lesion masks");
    add_common(dec);
    dec->add_option("--ctp", o.ctp, "CTP4 series")->required();
    dec->add_option("--aif", o.aif, "AIF curve CSV")->required();
    dec->add_option("--vof", o.vof, "VOF curve CSV")->required();
    dec->add_option("--mask", o.mask, "brain mask VOL3");
    dec->add_option("--lambda-rel", o.lambda_rel, "Tikhonov lambda relative to the largest singular value");
    dec->add_option("--tmax-thresh", o.tmax_thresh, "Tmax threshold in seconds");
    dec->add_option("--rcbf-thresh", o.rcbf_thresh, "rCBF core threshold");
    dec->add_option("--voxel-ml", o.voxel_ml, "voxel volume in ml");
    dec->add_option("--out", o.out, "output directory")->required();

    auto* seg = app.add_subcommand("segment", "threshold maps into core and lesion masks");
    add_common(seg);
    seg->add_option("--maps", o.maps, "directory with tmax.vol3 and rcbf.vol3")->required();
    seg->add_option("--mask", o.mask, "brain mask VOL3");
    seg->add_option("--tmax-thresh", o.tmax_thresh, "Tmax threshold in seconds");
    seg->add_option("--rcbf-thresh", o.rcbf_thresh, "rCBF core threshold");
    seg->add_option("--voxel-ml", o.voxel_ml, "voxel volume in ml");
    seg->add_option("--out", o.out, "output directory")->required();

    auto* eval = app.add_subcommand("evaluate", "compare predicted maps and curves against a reference");
    add_common(eval);
    eval->add_option("--pred", o.pred, "map directory or directory of case map directories")->required();
    eval->add_option("--truth", o.truth, "matching reference directory")->required();
    eval->add_option("--mask", o.mask, "brain mask VOL3");
    eval->add_option("--voxel-ml", o.voxel_ml, "voxel volume in ml");
    eval->add_option("--out", o.out, "report CSV")->required();

    auto* plot = app.add_subcommand("plot", "render curves or a map slice as SVG");
    plot->add_option("--curve", o.curves, "curve CSV (repeatable)");
    plot->add_option("--label", o.labels, "legend label per curve");
    plot->add_option("--map", o.map, "VOL3 map");
    plot->add_option("--slice", o.slice, "z slice of --map");
    plot->add_option("--out", o.out, "SVG file")->required();

    auto* pipe = app.add_subcommand("pipeline", "end-to-end run on a synthetic cohort");
    add_common(pipe);
    pipe->add_option("--seed", o.seed, "cohort and training seed");
    pipe->add_option("--out", o.out, "output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "ERROR " << one_line(e.what()) << '\n';
        err << app.help();
        return 1;
    }

    log.quiet = o.quiet;
    try {
        apply_threads(o.threads);
        if (*synth)
            return cmd_synth(o, log);
        if (*train)
            return cmd_train(o, log);
        if (*predict)
            return cmd_predict(o, log);
        if (*dec)
            return cmd_deconvolve(o, log);
        if (*seg)
            return cmd_segment(o, log);
        if (*eval)
            return cmd_evaluate(o, log);
        if (*plot)
            return cmd_plot(o, log);
        if (*pipe)
            return cmd_pipeline(o, log);
    } catch (const IoError& e) {
        err << "ERROR kind=io message=" << quoted(e.what()) << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        err << "ERROR kind=io message=" << quoted(e.what()) << '\n';
        return 2;
    } catch (const ValidationError& e) {
        err << "ERROR kind=validation message=" << quoted(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "ERROR kind=internal message=" << quoted(e.what()) << '\n';
        return 1;
    }
    return 1;
}

int run(int argc, char** argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i)
        args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace perfkit::cli
