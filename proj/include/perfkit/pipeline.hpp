#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "perfkit/aifnet.hpp"
#include "perfkit/config.hpp"
#include "perfkit/deconv.hpp"
#include "perfkit/synthgen.hpp"

namespace perfkit::pipeline {

namespace fs = std::filesystem;

/// Receives one `key=value ...` record per event.
using Logger = std::function<void(std::string_view level, const std::string& record)>;

// Case directory layout:
//   ctp.ctp4, brain_mask.vol3, aif.csv, vof.csv, manifest.json,
//   cbf/cbv/mtt/tmax/rcbf/rcbv/rmtt/rtmax .vol3, core_mask.vol3, lesion_mask.vol3
// Synthetic cases hold ground truth in the map files; deconvolution output uses the
// same map names plus summary.csv.
inline constexpr const char* kMapNames[] = {"cbf", "cbv", "mtt", "tmax", "rcbf", "rcbv", "rmtt", "rtmax"};

void write_phantom_case(const fs::path& dir, const synth::Phantom& phantom, const PipelineConfig& cfg);

/// Maps, masks and a one-row summary (control means, lesion volumes in ml).
void write_maps(const fs::path& dir, const PerfusionMaps& maps, const deconv::LesionMasks& masks, double voxel_ml);
PerfusionMaps read_maps(const fs::path& dir);
deconv::LesionMasks read_masks(const fs::path& dir);

/// ctp.ctp4 with brain_mask.vol3 attached when present.
CtpVolume4D read_case_ctp(const fs::path& dir);
std::optional<Volume3D> read_optional_mask(const fs::path& path);

/// Subdirectories containing ctp.ctp4, sorted by name.
std::vector<fs::path> list_cases(const fs::path& root);

/// Seeded split of n cases; the validation share is round(n * fraction), at least one.
aifnet::Split split_cases(std::size_t n, double validation_fraction, std::uint64_t seed);

void write_history_csv(const fs::path& path, const std::vector<aifnet::EpochRecord>& history);

struct CaseView {
    std::optional<VascularFunction> aif;
    std::optional<VascularFunction> vof;
    PerfusionMaps maps;
    deconv::LesionMasks masks;
};

CaseView read_case_view(const fs::path& dir);

/// Column order of comparison rows. Signal errors are prediction minus reference.
const std::vector<std::string>& report_columns();

struct ReportRow {
    std::string pair;
    std::string case_name;
    std::vector<double> values;  ///< aligned with report_columns(); NaN renders as an empty cell
};

/// Signal and map sections compare `pred` against `ref`; lesion metrics and the core AUC
/// (score 1 - rCBF) compare `pred`'s masks against `truth_masks`.
ReportRow compare_case(const std::string& pair, const std::string& case_name, const CaseView& pred,
                       const CaseView& ref, const deconv::LesionMasks& truth_masks,
                       const std::optional<Volume3D>& brain_mask, double voxel_ml);

/// Per-case rows followed by mean/std/p5/p95 rows per pair. The volume correlation
/// columns are only filled in summary rows.
std::string format_report(const std::vector<ReportRow>& rows);

struct EndToEndResult {
    std::vector<ReportRow> rows;
    aifnet::TrainResult aif_training;
    aifnet::TrainResult vof_training;
};

/// synth -> train (AIF and VOF) -> predict + VOF recalibration -> deconvolve with the
/// predicted and the true pair -> segment -> evaluate. Writes into `out` through a
/// staging directory that is removed on failure.
EndToEndResult end_to_end(const PipelineConfig& cfg, const fs::path& out, const Logger& log = {});

}  // namespace perfkit::pipeline
