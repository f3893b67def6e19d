#include "perfkit/synthgen.hpp"

#include <cmath>
#include <numeric>

#include "perfkit/deconv.hpp"
#include "perfkit/random.hpp"

namespace perfkit::synth {

namespace {

bool whole_frames(double seconds, double dt)
{
    const double k = seconds / dt;
    return seconds >= 0.0 && std::abs(k - std::round(k)) < 1e-9;
}

void require_finite(double v, const char* name)
{
    if (!std::isfinite(v))
        throw ValidationError(std::string("non-finite parameter: ") + name);
}

void check_box(const Box& b, const Dims3& d, const char* name)
{
    if (b.empty())
        throw ValidationError(std::string(name) + " box is empty");
    if (b.z1 > d.z || b.y1 > d.y || b.x1 > d.x)
        throw ValidationError(std::string(name) + " box exceeds the volume " + to_string(d));
}

// Tmax of the analytic residue: both models peak at their onset.
double truth_tmax(const RegionSpec& r)
{
    return r.delay_s;
}

}  // namespace

void GammaVariateParams::validate() const
{
    for (auto [v, name] : {std::pair{amplitude, "amplitude"}, {onset_s, "onset"}, {alpha, "alpha"},
                           {beta_s, "beta"}, {baseline_hu, "baseline"}})
        require_finite(v, name);
    if (amplitude < 0.0 || alpha <= 0.0 || beta_s <= 0.0 || onset_s < 0.0)
        throw ValidationError("gamma variate needs A >= 0, alpha > 0, beta > 0, t0 >= 0");
}

double gamma_variate(double t, const GammaVariateParams& p)
{
    p.validate();
    require_finite(t, "t");
    if (t <= p.onset_s)
        return p.baseline_hu;
    const double s = t - p.onset_s;
    return p.baseline_hu + p.amplitude * std::pow(s, p.alpha) * std::exp(-s / p.beta_s);
}

double residue_value(const TissueSpec& spec, double t, double dt)
{
    const double s = t - spec.delay_s;
    if (s < 0.0)
        return 0.0;
    switch (spec.residue) {
    case ResidueModel::Exponential:
        // Per-frame survival 1 - dt/mtt: dt * sum(h) equals flow * mtt on the grid.
        return spec.flow * std::pow(1.0 - dt / spec.mtt_s, s / dt);
    case ResidueModel::Boxcar:
        return s < spec.mtt_s ? spec.flow : 0.0;
    }
    return 0.0;
}

VascularFunction convolve_residue(const VascularFunction& aif, const TissueSpec& spec, int baseline_frames,
                                  std::uint64_t noise_seed)
{
    for (auto [v, name] : {std::pair{spec.flow, "flow"}, {spec.mtt_s, "mtt"}, {spec.delay_s, "delay"},
                           {spec.noise_sigma_hu, "noise_sigma"}, {spec.baseline_hu, "baseline"}})
        require_finite(v, name);
    if (spec.flow < 0.0 || spec.mtt_s <= 0.0 || spec.noise_sigma_hu < 0.0)
        throw ValidationError("tissue spec needs flow >= 0, mtt > 0, noise_sigma >= 0");
    const double dt = aif.dt();
    if (spec.residue == ResidueModel::Exponential && spec.mtt_s < dt)
        throw ValidationError("exponential residue needs mtt >= dt");
    if (!whole_frames(spec.delay_s, dt))
        throw ValidationError("tissue delay must be a nonnegative whole number of frames");
    const std::size_t n = aif.size();
    if (baseline_frames < 1 || static_cast<std::size_t>(baseline_frames) > n)
        throw ValidationError("baseline_frames out of range for the AIF");

    const auto a = aif.values();
    const double aif_base =
        std::accumulate(a.begin(), a.begin() + baseline_frames, 0.0) / static_cast<double>(baseline_frames);
    std::vector<double> h(n);
    for (std::size_t j = 0; j < n; ++j)
        h[j] = residue_value(spec, static_cast<double>(j) * dt, dt);

    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j)
            acc += (a[i - j] - aif_base) * h[j];
        out[i] = spec.baseline_hu + dt * acc;
    }
    if (spec.noise_sigma_hu > 0.0) {
        Rng rng(noise_seed);
        for (auto& v : out)
            v += spec.noise_sigma_hu * rng.normal();
    }
    return VascularFunction(std::move(out), dt, aif.kind());
}

void PhantomConfig::validate() const
{
    if (dims.size() == 0)
        throw ValidationError("phantom dims must be positive");
    if (frames < 2 || !(dt_s > 0.0))
        throw ValidationError("phantom needs frames >= 2 and dt > 0");
    aif.validate();
    if (baseline_frames < 1 || static_cast<std::size_t>(baseline_frames) >= frames)
        throw ValidationError("baseline_frames must lie in [1, frames-1]");
    if (aif_onset_jitter_s < 0.0 || aif.onset_s - aif_onset_jitter_s < 0.0)
        throw ValidationError("AIF onset jitter must be nonnegative and keep the onset >= 0");
    if (!(aif_partial_volume > 0.0) || !(vein_scale > 0.0) || vein_delay_s < 0.0)
        throw ValidationError("partial volume and vein scale must be positive, vein delay nonnegative");
    if (noise_sigma_hu < 0.0)
        throw ValidationError("noise sigma must be nonnegative");

    check_box(penumbra_box, dims, "penumbra");
    check_box(core_box, dims, "core");
    if (penumbra_box.intersects(core_box))
        throw ValidationError("penumbra and core regions overlap");

    for (const auto* r : {&healthy, &penumbra, &core}) {
        if (r->flow < 0.0 || !(r->mtt_s > 0.0))
            throw ValidationError("region flow must be >= 0 and mtt > 0");
        if (!whole_frames(r->delay_s, dt_s))
            throw ValidationError("region delays must be whole numbers of frames");
        if (residue == ResidueModel::Exponential && r->mtt_s < dt_s)
            throw ValidationError("exponential residue needs mtt >= dt in every region");
    }
    if (!(healthy.flow > 0.0))
        throw ValidationError("healthy flow must be positive");
    const double tmax_limit = deconv::DeconvParams{}.tmax_threshold_s;
    const double rcbf_limit = deconv::DeconvParams{}.rcbf_core_threshold;
    if (!(truth_tmax(healthy) < tmax_limit) || !(truth_tmax(healthy) > 0.0))
        throw ValidationError("healthy region needs 0 < Tmax < " + std::to_string(tmax_limit) + " s");
    if (!(truth_tmax(penumbra) > tmax_limit) || !(penumbra.flow >= rcbf_limit * healthy.flow))
        throw ValidationError("penumbra needs Tmax > threshold and rCBF >= core threshold");
    if (!(truth_tmax(core) > tmax_limit) || !(core.flow < rcbf_limit * healthy.flow))
        throw ValidationError("core needs Tmax > threshold and rCBF below the core threshold");

    if (!random_vessels) {
        for (const auto* v : {&aif_voxel, &vof_voxel}) {
            if (v->z >= dims.z || v->y >= dims.y || v->x >= dims.x)
                throw ValidationError("vessel voxel outside the volume");
            if (penumbra_box.contains(v->z, v->y, v->x) || core_box.contains(v->z, v->y, v->x))
                throw ValidationError("vessel voxels must lie in healthy tissue");
        }
        if (aif_voxel == vof_voxel)
            throw ValidationError("arterial and venous voxels coincide");
    }
}

VascularFunction calibrated_arterial_input(const Phantom& p, const PhantomConfig& cfg)
{
    const auto a = p.true_aif.values();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = cfg.aif.baseline_hu + (a[i] - cfg.aif.baseline_hu) * cfg.vein_scale;
    return VascularFunction(std::move(out), p.true_aif.dt(), CurveKind::AIF);
}

Phantom make_phantom(const PhantomConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    const Dims3 d = cfg.dims;
    const std::size_t nvox = d.size();
    const std::size_t T = cfg.frames;
    const double dt = cfg.dt_s;

    auto region_of = [&](std::size_t z, std::size_t y, std::size_t x) -> int {
        if (cfg.core_box.contains(z, y, x))
            return 2;
        if (cfg.penumbra_box.contains(z, y, x))
            return 1;
        return 0;
    };

    Rng layout(derive_seed(seed, 0xA1F));
    GammaVariateParams arterial = cfg.aif;
    arterial.onset_s += layout.uniform(-cfg.aif_onset_jitter_s, cfg.aif_onset_jitter_s);

    Voxel aif_vox = cfg.aif_voxel;
    Voxel vof_vox = cfg.vof_voxel;
    if (cfg.random_vessels) {
        std::vector<std::size_t> healthy;
        for (std::size_t i = 0; i < nvox; ++i) {
            const Voxel v = unravel(d, i);
            if (region_of(v.z, v.y, v.x) == 0)
                healthy.push_back(i);
        }
        if (healthy.size() < 2)
            throw ValidationError("healthy region too small to place vessels");
        aif_vox = unravel(d, healthy[static_cast<std::size_t>(layout.uniform_int(0, std::int64_t(healthy.size()) - 1))]);
        std::vector<std::size_t> far;
        for (std::size_t i : healthy) {
            const Voxel v = unravel(d, i);
            const auto dy = v.y > aif_vox.y ? v.y - aif_vox.y : aif_vox.y - v.y;
            const auto dx = v.x > aif_vox.x ? v.x - aif_vox.x : aif_vox.x - v.x;
            if (std::max(dy, dx) >= 3)
                far.push_back(i);
        }
        if (far.empty())
            throw ValidationError("no room to place the venous voxel away from the artery");
        vof_vox = unravel(d, far[static_cast<std::size_t>(layout.uniform_int(0, std::int64_t(far.size()) - 1))]);
    }
    const std::size_t aif_lin = d.index(aif_vox.z, aif_vox.y, aif_vox.x);
    const std::size_t vof_lin = d.index(vof_vox.z, vof_vox.y, vof_vox.x);

    // Stored curves are f32; truth curves are their exact f32 values.
    std::vector<double> aif_curve(T), vof_curve(T);
    for (std::size_t t = 0; t < T; ++t) {
        const double time = static_cast<double>(t) * dt;
        const double excess = gamma_variate(time, arterial) - arterial.baseline_hu;
        aif_curve[t] = static_cast<float>(arterial.baseline_hu + cfg.aif_partial_volume * excess);
        const double vexcess = gamma_variate(std::max(0.0, time - cfg.vein_delay_s), arterial) - arterial.baseline_hu;
        vof_curve[t] = static_cast<float>(arterial.baseline_hu + cfg.vein_scale * cfg.aif_partial_volume * vexcess);
    }

    Phantom ph;
    ph.seed = seed;
    ph.aif_voxel = aif_vox;
    ph.vof_voxel = vof_vox;
    ph.true_aif = VascularFunction(aif_curve, dt, CurveKind::AIF);
    ph.true_vof = VascularFunction(vof_curve, dt, CurveKind::VOF);
    const VascularFunction inflow = calibrated_arterial_input(ph, cfg);

    std::vector<float> data(T * nvox);
    std::vector<double> cbf(nvox, 0.0), cbv(nvox, 0.0), mtt(nvox, 0.0), tmax(nvox, 0.0);
    std::vector<double> brain(nvox, 0.0), core(nvox, 0.0), lesion(nvox, 0.0);

    for (std::size_t i = 0; i < nvox; ++i) {
        const Voxel v = unravel(d, i);
        std::vector<double> curve;
        if (i == aif_lin) {
            curve = aif_curve;
        } else if (i == vof_lin) {
            curve = vof_curve;
        } else {
            const int region = region_of(v.z, v.y, v.x);
            const RegionSpec& r = region == 2 ? cfg.core : region == 1 ? cfg.penumbra : cfg.healthy;
            TissueSpec spec{r.flow, r.mtt_s, r.delay_s, cfg.residue, 0.0, cfg.tissue_baseline_hu};
            const auto tissue = convolve_residue(inflow, spec, cfg.baseline_frames);
            curve.assign(tissue.values().begin(), tissue.values().end());
            cbf[i] = r.flow;
            mtt[i] = r.mtt_s;
            cbv[i] = r.flow * r.mtt_s;
            tmax[i] = truth_tmax(r);
            brain[i] = 1.0;
            core[i] = region == 2 ? 1.0 : 0.0;
            lesion[i] = region != 0 ? 1.0 : 0.0;
        }
        if (cfg.noise_sigma_hu > 0.0) {
            Rng noise(derive_seed(seed, v.z, v.y, v.x));
            for (auto& c : curve)
                c += cfg.noise_sigma_hu * noise.normal();
        }
        for (std::size_t t = 0; t < T; ++t)
            data[t * nvox + i] = static_cast<float>(curve[t]);
    }

    Volume3D brain_mask(d, brain, Unit::Binary);
    ph.ctp = CtpVolume4D(T, d, dt, std::move(data), brain_mask);
    ph.truth_maps.cbf = Volume3D(d, std::move(cbf), Unit::Flow);
    ph.truth_maps.cbv = Volume3D(d, std::move(cbv), Unit::Volume);
    ph.truth_maps.mtt = Volume3D(d, std::move(mtt), Unit::Seconds);
    ph.truth_maps.tmax = Volume3D(d, std::move(tmax), Unit::Seconds);
    normalize_maps(ph.truth_maps, brain_mask, deconv::DeconvParams{}.tmax_threshold_s);
    ph.core_mask = Volume3D(d, std::move(core), Unit::Binary);
    ph.lesion_mask = Volume3D(d, std::move(lesion), Unit::Binary);
    return ph;
}

}  // namespace perfkit::synth
