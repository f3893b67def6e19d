#include "perfkit/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "perfkit/io.hpp"

namespace perfkit {

namespace {

std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(std::string_view v)
{
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
        throw ValidationError("expected a finite number, got '" + std::string(v) + "'");
    return out;
}

template <class Int>
Int parse_int(std::string_view v)
{
    Int out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ValidationError("expected an integer, got '" + std::string(v) + "'");
    return out;
}

bool parse_bool(std::string_view v)
{
    if (v == "true")
        return true;
    if (v == "false")
        return false;
    throw ValidationError("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> parse_list(std::string_view v, std::size_t n)
{
    std::vector<std::size_t> out;
    while (true) {
        const auto comma = v.find(',');
        out.push_back(parse_int<std::size_t>(trim(v.substr(0, comma))));
        if (comma == std::string_view::npos)
            break;
        v.remove_prefix(comma + 1);
    }
    if (out.size() != n)
        throw ValidationError("expected " + std::to_string(n) + " comma-separated integers");
    return out;
}

std::string fmt_double(double v)
{
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

struct Key {
    std::function<void(PipelineConfig&, std::string_view)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

template <class Member>
Key real(Member member)
{
    return {[member](PipelineConfig& c, std::string_view v) { std::invoke(member, c) = parse_double(v); },
            [member](const PipelineConfig& c) { return fmt_double(std::invoke(member, c)); }};
}

template <class Int, class Member>
Key integer(Member member)
{
    return {[member](PipelineConfig& c, std::string_view v) { std::invoke(member, c) = parse_int<Int>(v); },
            [member](const PipelineConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

Key box(synth::Box synth::PhantomConfig::* member)
{
    return {[member](PipelineConfig& c, std::string_view v) {
                const auto n = parse_list(v, 6);
                c.phantom.*member = synth::Box{n[0], n[1], n[2], n[3], n[4], n[5]};
            },
            [member](const PipelineConfig& c) {
                const auto& b = c.phantom.*member;
                std::ostringstream os;
                os << b.z0 << ',' << b.y0 << ',' << b.x0 << ',' << b.z1 << ',' << b.y1 << ',' << b.x1;
                return os.str();
            }};
}

Key voxel(Voxel synth::PhantomConfig::* member)
{
    return {[member](PipelineConfig& c, std::string_view v) {
                const auto n = parse_list(v, 3);
                c.phantom.*member = Voxel{n[0], n[1], n[2]};
            },
            [member](const PipelineConfig& c) {
                const auto& p = c.phantom.*member;
                return std::to_string(p.z) + ',' + std::to_string(p.y) + ',' + std::to_string(p.x);
            }};
}

// Ordered registry; the vector order is the format order.
const std::vector<std::pair<std::string, Key>>& registry()
{
    using P = PipelineConfig;
    static const std::vector<std::pair<std::string, Key>> keys = {
        {"seed", integer<std::uint64_t>(&P::seed)},
        {"threads", integer<int>(&P::threads)},
        {"voxel_ml", real(&P::voxel_ml)},
        {"cohort_train", integer<std::size_t>(&P::cohort_train)},
        {"cohort_validation", integer<std::size_t>(&P::cohort_validation)},
        {"cohort_test", integer<std::size_t>(&P::cohort_test)},
        {"validation_fraction", real(&P::validation_fraction)},
        {"aif_layers", integer<std::size_t>(&P::aif_layers)},
        {"vof_layers", integer<std::size_t>(&P::vof_layers)},

        {"dim_z", integer<std::size_t>([](auto& c) -> auto& { return c.phantom.dims.z; })},
        {"dim_y", integer<std::size_t>([](auto& c) -> auto& { return c.phantom.dims.y; })},
        {"dim_x", integer<std::size_t>([](auto& c) -> auto& { return c.phantom.dims.x; })},
        {"frames", integer<std::size_t>([](auto& c) -> auto& { return c.phantom.frames; })},
        {"dt_s", real([](auto& c) -> auto& { return c.phantom.dt_s; })},
        {"aif_amplitude", real([](auto& c) -> auto& { return c.phantom.aif.amplitude; })},
        {"aif_onset_s", real([](auto& c) -> auto& { return c.phantom.aif.onset_s; })},
        {"aif_alpha", real([](auto& c) -> auto& { return c.phantom.aif.alpha; })},
        {"aif_beta_s", real([](auto& c) -> auto& { return c.phantom.aif.beta_s; })},
        {"blood_baseline_hu", real([](auto& c) -> auto& { return c.phantom.aif.baseline_hu; })},
        {"aif_onset_jitter_s", real([](auto& c) -> auto& { return c.phantom.aif_onset_jitter_s; })},
        {"aif_partial_volume", real([](auto& c) -> auto& { return c.phantom.aif_partial_volume; })},
        {"vein_scale", real([](auto& c) -> auto& { return c.phantom.vein_scale; })},
        {"vein_delay_s", real([](auto& c) -> auto& { return c.phantom.vein_delay_s; })},
        {"tissue_baseline_hu", real([](auto& c) -> auto& { return c.phantom.tissue_baseline_hu; })},
        {"noise_sigma_hu", real([](auto& c) -> auto& { return c.phantom.noise_sigma_hu; })},
        {"residue_model",
         {[](P& c, std::string_view v) {
              if (v == "exponential")
                  c.phantom.residue = synth::ResidueModel::Exponential;
              else if (v == "boxcar")
                  c.phantom.residue = synth::ResidueModel::Boxcar;
              else
                  throw ValidationError("residue_model must be exponential or boxcar");
          },
          [](const P& c) {
              return std::string(c.phantom.residue == synth::ResidueModel::Boxcar ? "boxcar" : "exponential");
          }}},
        {"healthy_flow", real([](auto& c) -> auto& { return c.phantom.healthy.flow; })},
        {"healthy_mtt_s", real([](auto& c) -> auto& { return c.phantom.healthy.mtt_s; })},
        {"healthy_delay_s", real([](auto& c) -> auto& { return c.phantom.healthy.delay_s; })},
        {"penumbra_flow", real([](auto& c) -> auto& { return c.phantom.penumbra.flow; })},
        {"penumbra_mtt_s", real([](auto& c) -> auto& { return c.phantom.penumbra.mtt_s; })},
        {"penumbra_delay_s", real([](auto& c) -> auto& { return c.phantom.penumbra.delay_s; })},
        {"core_flow", real([](auto& c) -> auto& { return c.phantom.core.flow; })},
        {"core_mtt_s", real([](auto& c) -> auto& { return c.phantom.core.mtt_s; })},
        {"core_delay_s", real([](auto& c) -> auto& { return c.phantom.core.delay_s; })},
        {"penumbra_box", box(&synth::PhantomConfig::penumbra_box)},
        {"core_box", box(&synth::PhantomConfig::core_box)},
        {"vessel_placement",
         {[](P& c, std::string_view v) {
              if (v == "random")
                  c.phantom.random_vessels = true;
              else if (v == "fixed")
                  c.phantom.random_vessels = false;
              else
                  throw ValidationError("vessel_placement must be random or fixed");
          },
          [](const P& c) { return std::string(c.phantom.random_vessels ? "random" : "fixed"); }}},
        {"aif_voxel", voxel(&synth::PhantomConfig::aif_voxel)},
        {"vof_voxel", voxel(&synth::PhantomConfig::vof_voxel)},
        {"baseline_frames",
         {[](P& c, std::string_view v) {
              const int n = parse_int<int>(v);
              c.phantom.baseline_frames = n;
              c.train.baseline_frames = n;
              c.deconv.baseline_frames = n;
          },
          [](const P& c) { return std::to_string(c.phantom.baseline_frames); }}},

        {"learning_rate", real([](auto& c) -> auto& { return c.train.learning_rate; })},
        {"momentum", real([](auto& c) -> auto& { return c.train.momentum; })},
        {"max_epochs", integer<int>([](auto& c) -> auto& { return c.train.max_epochs; })},
        {"patience", integer<int>([](auto& c) -> auto& { return c.train.patience; })},
        {"shift_max_frames", integer<int>([](auto& c) -> auto& { return c.train.shift_max_frames; })},
        {"scale_low", real([](auto& c) -> auto& { return c.train.scale_low; })},
        {"scale_high", real([](auto& c) -> auto& { return c.train.scale_high; })},
        {"clip_norm", real([](auto& c) -> auto& { return c.train.clip_norm; })},
        {"augment",
         {[](P& c, std::string_view v) { c.train.augment = parse_bool(v); },
          [](const P& c) { return std::string(c.train.augment ? "true" : "false"); }}},

        {"lambda_rel", real([](auto& c) -> auto& { return c.deconv.lambda_rel; })},
        {"circulant_factor", integer<int>([](auto& c) -> auto& { return c.deconv.circulant_factor; })},
        {"tmax_threshold_s", real([](auto& c) -> auto& { return c.deconv.tmax_threshold_s; })},
        {"rcbf_core_threshold", real([](auto& c) -> auto& { return c.deconv.rcbf_core_threshold; })},
    };
    return keys;
}

}  // namespace

void PipelineConfig::validate() const
{
    phantom.validate();
    train.validate();
    deconv.validate();
    if (aif_layers < 1 || vof_layers < 1)
        throw ValidationError("aif_layers and vof_layers must be positive");
    if (aif_layers > 12 || vof_layers > 12)
        throw ValidationError("layer counts above 12 are not supported");
    if (cohort_train < 1 || cohort_validation < 1)
        throw ValidationError("cohort_train and cohort_validation must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ValidationError("validation_fraction must lie in (0, 1)");
    if (!(voxel_ml > 0.0))
        throw ValidationError("voxel_ml must be positive");
    if (threads < 0)
        throw ValidationError("threads must be nonnegative");
    if (static_cast<std::size_t>(train.shift_max_frames) >= phantom.frames)
        throw ValidationError("shift_max_frames must be smaller than frames");
}

PipelineConfig parse_config(std::string_view text)
{
    const auto& keys = registry();
    std::map<std::string_view, const Key*> lookup;
    for (const auto& [name, key] : keys)
        lookup.emplace(name, &key);

    PipelineConfig cfg;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        const std::string where = "config line " + std::to_string(line_no) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ValidationError(where + "expected 'key = value'");
        const auto name = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto it = lookup.find(name);
        if (it == lookup.end())
            throw ValidationError(where + "unknown key '" + std::string(name) + "'");
        if (!seen.emplace(name).second)
            throw ValidationError(where + "duplicate key '" + std::string(name) + "'");
        try {
            it->second->set(cfg, value);
        } catch (const ValidationError& e) {
            throw ValidationError(where + std::string(name) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path)
{
    return parse_config(io::read_text(path));
}

std::string format_config(const PipelineConfig& cfg)
{
    std::string out;
    for (const auto& [name, key] : registry())
        out += name + " = " + key.get(cfg) + "\n";
    return out;
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> out;
    for (const auto& [name, key] : registry())
        out.push_back(name);
    return out;
}

}  // namespace perfkit
