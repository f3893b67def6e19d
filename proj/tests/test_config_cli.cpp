#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "perfkit/cli.hpp"
#include "perfkit/config.hpp"
#include "perfkit/io.hpp"
#include "test_util.hpp"

using namespace perfkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = 0;
    std::string out, err;
};

Outcome run_cli(const std::vector<std::string>& args)
{
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Relative path -> bytes for every regular file under `root`.
std::map<std::string, std::string> snapshot(const fs::path& root)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            files[fs::relative(e.path(), root).string()] = slurp(e.path());
    return files;
}

std::size_t count_of(const std::string& text, const std::string& needle)
{
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1))
        ++n;
    return n;
}

constexpr const char* kTinyPipeline = R"(# small cohort for tests
cohort_train = 2
cohort_validation = 1
cohort_test = 1
aif_layers = 1
vof_layers = 1
max_epochs = 2
patience = 2
dim_y = 16
dim_x = 16
penumbra_box = 0, 4, 4, 4, 12, 9
core_box = 0, 4, 9, 4, 12, 13
)";

}  // namespace

TEST_SUITE("cli")
{
    TEST_CASE("config parsing")
    {
        const auto c = parse_config("seed = 9\n# comment\n  learning_rate = 0.002  # trailing\n\nresidue_model = boxcar\n");
        CHECK(c.seed == 9);
        CHECK(c.train.learning_rate == 0.002);
        CHECK(c.phantom.residue == synth::ResidueModel::Boxcar);

        const auto b = parse_config("baseline_frames = 4\n");
        CHECK(b.train.baseline_frames == 4);
        CHECK(b.deconv.baseline_frames == 4);

        CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), ValidationError);
        CHECK_THROWS_AS(parse_config("seed = 1\nseed = 2\n"), ValidationError);
        CHECK_THROWS_AS(parse_config("seed 1\n"), ValidationError);
        CHECK_THROWS_AS(parse_config("momentum = 1.5\n"), ValidationError);
        CHECK_THROWS_AS(parse_config("max_epochs = many\n"), ValidationError);
        try {
            parse_config("seed = 1\n\nbogus = 2\n");
            FAIL("expected an error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }

    TEST_CASE("config round trip covers every key")
    {
        auto c = parse_config(kTinyPipeline);
        c.train.learning_rate = 0.0123456789;
        c.phantom.noise_sigma_hu = 1.0 / 3.0;
        const auto text = format_config(c);
        CHECK(format_config(parse_config(text)) == text);
        for (const auto& key : config_keys())
            CHECK(text.find(key + " = ") != std::string::npos);
    }

    TEST_CASE("usage errors exit 1")
    {
        CHECK(run_cli({"frobnicate"}).code == 1);
        CHECK(run_cli({}).code == 1);
        CHECK(run_cli({"synth", "--out", "x", "--bogus"}).code == 1);
        CHECK(run_cli({"--help"}).code == 0);

        TempDir tmp;
        const auto r = run_cli({"deconvolve", "--ctp", (tmp / "a.ctp4").string(), "--vof",
                                (tmp / "v.csv").string(), "--out", (tmp / "o").string()});
        CHECK(r.code == 1);
        CHECK(r.err.find("--aif") != std::string::npos);
    }

    TEST_CASE("missing inputs exit 2 with one diagnostic line")
    {
        TempDir tmp;
        const auto r = run_cli({"deconvolve", "--ctp", (tmp / "a.ctp4").string(), "--aif", (tmp / "a.csv").string(),
                                "--vof", (tmp / "v.csv").string(), "--out", (tmp / "o").string()});
        CHECK(r.code == 2);
        CHECK(count_of(r.err, "\n") == 1);
        CHECK(r.err.rfind("ERROR kind=io", 0) == 0);
        CHECK_FALSE(fs::exists(tmp / "o"));
    }

    TEST_CASE("synth is byte identical across runs")
    {
        TempDir tmp;
        CHECK(run_cli({"--quiet", "synth", "--seed", "7", "--out", (tmp / "a").string()}).code == 0);
        CHECK(run_cli({"--quiet", "synth", "--seed", "7", "--out", (tmp / "b").string()}).code == 0);
        const auto a = snapshot(tmp / "a");
        CHECK(a.count("ctp.ctp4") == 1);
        CHECK(a.count("aif.csv") == 1);
        CHECK(a.count("manifest.json") == 1);
        CHECK(a == snapshot(tmp / "b"));
        CHECK(run_cli({"--quiet", "synth", "--seed", "8", "--out", (tmp / "c").string()}).code == 0);
        CHECK(a != snapshot(tmp / "c"));
    }

    TEST_CASE("deconvolve, segment and plot on a synthetic case")
    {
        TempDir tmp;
        const auto c = tmp / "case";
        REQUIRE(run_cli({"--quiet", "synth", "--seed", "3", "--out", c.string()}).code == 0);
        const auto maps = tmp / "maps";
        REQUIRE(run_cli({"--quiet", "deconvolve", "--ctp", (c / "ctp.ctp4").string(), "--aif", (c / "aif.csv").string(),
                         "--vof", (c / "vof.csv").string(), "--mask", (c / "brain_mask.vol3").string(), "--out",
                         maps.string()})
                    .code == 0);
        for (const char* name : {"cbf", "cbv", "mtt", "tmax", "rcbf", "rcbv", "rmtt", "rtmax"})
            CHECK(fs::exists(maps / (std::string(name) + ".vol3")));
        CHECK(fs::exists(maps / "core_mask.vol3"));
        CHECK(fs::exists(maps / "summary.csv"));

        const auto seg = tmp / "seg";
        CHECK(run_cli({"--quiet", "segment", "--maps", maps.string(), "--mask", (c / "brain_mask.vol3").string(),
                       "--out", seg.string()})
                  .code == 0);
        CHECK(slurp(seg / "core_mask.vol3") == slurp(maps / "core_mask.vol3"));

        const auto svg = tmp / "curves.svg";
        CHECK(run_cli({"plot", "--curve", (c / "aif.csv").string(), "--curve", (c / "vof.csv").string(), "--out",
                       svg.string()})
                  .code == 0);
        const auto text = slurp(svg);
        CHECK(text.find("<svg") != std::string::npos);
        CHECK(text.find("</svg>") != std::string::npos);
        CHECK(count_of(text, "<polyline") == 2);
        CHECK(text.find("time (s)") != std::string::npos);

        const auto one = tmp / "one.svg";
        CHECK(run_cli({"plot", "--curve", (c / "aif.csv").string(), "--out", one.string()}).code == 0);
        CHECK(count_of(slurp(one), "<polyline") == 1);

        CHECK(run_cli({"plot", "--map", (maps / "tmax.vol3").string(), "--slice", "1", "--out",
                       (tmp / "tmax.svg").string()})
                  .code == 0);
        CHECK(run_cli({"plot", "--map", (maps / "tmax.vol3").string(), "--slice", "99", "--out",
                       (tmp / "bad.svg").string()})
                  .code == 1);
    }

    TEST_CASE("small end-to-end run is reproducible and self-consistent")
    {
        TempDir tmp;
        std::ofstream(tmp / "tiny.conf") << kTinyPipeline;
        const auto conf = (tmp / "tiny.conf").string();
        REQUIRE(run_cli({"--quiet", "pipeline", "--config", conf, "--out", (tmp / "a").string()}).code == 0);
        REQUIRE(run_cli({"--quiet", "pipeline", "--config", conf, "--out", (tmp / "b").string()}).code == 0);
        const auto a = snapshot(tmp / "a");
        CHECK(a == snapshot(tmp / "b"));
        CHECK_FALSE(fs::exists(tmp / "a" / ".staging"));
        REQUIRE(a.count("report.csv") == 1);

        std::istringstream report(a.at("report.csv"));
        std::string header, row;
        std::getline(report, header);
        CHECK(header.find("rmtt_rho") != std::string::npos);
        CHECK(header.find("rtmax_rho") != std::string::npos);
        CHECK(header.find("core_auc") != std::string::npos);
        bool saw_reference = false;
        while (std::getline(report, row)) {
            if (row.rfind("reference,case_", 0) != 0)
                continue;
            saw_reference = true;
            // aif_r is the first metric column; the true pair reproduces itself.
            const auto first = row.find(',', row.find(',') + 1);
            const auto second = row.find(',', first + 1);
            CHECK(std::stod(row.substr(first + 1, second - first - 1)) == doctest::Approx(1.0).epsilon(1e-12));
        }
        CHECK(saw_reference);
    }
}
