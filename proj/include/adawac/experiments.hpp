// Experiment protocols shared by the CLI and the acceptance suite: warm-start
// anchoring, per-mode training runs with resume, the duality-gap sweep, and
// the method-comparison evaluation.
#pragma once

#include <filesystem>

#include "adawac/analysis.hpp"
#include "adawac/config.hpp"
#include "adawac/runio.hpp"

namespace adawac::exp {

/// Plain-CE SGD warm start from zeros; the "pretrained initialization"
/// anchor for projection balls.
Vector warm_start(const model::Model& model, const std::vector<LabeledImage>& data,
                  long long iterations, Scalar eta, std::uint64_t seed);

struct ResolvedInit {
  Vector theta_init;
  std::optional<opt::Projection> projection;
};

/// Tag-free consistency-weight calibration at an anchor parameter: thresholds
/// the (bimodal, post-collapse) per-sample CE at its widest sorted gap, then
/// sweeps lambda so that ac = lambda * rho reproduces that split best.
Scalar calibrate_lambda(const Vector& ce_at_anchor, const Vector& rho_at_anchor);

/// Projection center / initial iterate per the config's projection mode:
/// theta_star uses the planted parameter, init uses the warm-start anchor
/// (or zeros when warmstart_iterations = 0).
ResolvedInit resolve_init(const cfg::ExperimentConfig& config, const model::Model& model,
                          const synth::Dataset& trainset);

struct TrainOutcome {
  bool skipped = false;        // run already complete, left untouched
  long long resumed_from = 0;  // 0 = fresh run
  opt::RunRecord record;
};

/// Runs (or resumes, or skips) one baseline mode into out_dir/<mode>/.
TrainOutcome train_mode(const cfg::ExperimentConfig& config, opt::BaselineMode mode,
                        const synth::Dataset& trainset, const std::filesystem::path& out_dir,
                        const std::string& config_text, bool force);

/// Training subset and its held-out complement (full set for kFull).
struct Split {
  synth::Dataset train;
  std::vector<Sample> heldout;
};
Split split_dataset(const synth::Dataset& dataset, synth::SubsetMode mode, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Duality-gap sweep.

struct GapPoint {
  long long t = 0;
  std::uint64_t seed = 0;
  Scalar gap = 0.0;
  Scalar bound = 0.0;
  Scalar c_theta = 0.0;
  Scalar c_b = 0.0;
};

/// One sweep point: estimate constants on ball probes, set the recommended
/// learning rate, run the solver, evaluate the duality gap of the averaged
/// iterates.
GapPoint gap_point(const cfg::ExperimentConfig& config, const model::Model& model,
                   const std::vector<LabeledImage>& data, const ResolvedInit& init,
                   long long iterations, std::uint64_t seed);

/// Full sweep over config.sweep, parallel across points (max_threads <= 0
/// reads hardware concurrency). Requires convex_linear and a projection.
std::vector<GapPoint> gap_curve(const cfg::ExperimentConfig& config,
                                const synth::Dataset& dataset, int max_threads);

std::string gap_curve_csv(const std::vector<GapPoint>& points);

// ---------------------------------------------------------------------------
// Method comparison.

struct EvalResult {
  std::vector<std::pair<int, std::pair<Scalar, Scalar>>> per_class;  // class -> (dsc, hd95)
  Scalar mean_fg_dsc = 0.0;
  Scalar mean_hd95 = 0.0;
  int num_samples = 0;
};

/// Scores a parameter on the dense samples of `heldout` with per-class
/// argmax masks; sentinel HD95 values are excluded from averages.
EvalResult evaluate_dense(const model::Model& model, const Vector& theta,
                          const std::vector<Sample>& heldout, const cfg::EvalConfig& eval);

struct CompareRow {
  opt::BaselineMode mode;
  std::string subset;
  int heldout_dense = 0;
  Scalar mean_fg_dsc = 0.0;
  Scalar mean_hd95 = 0.0;
  Scalar separation_accuracy = 0.0;
  Scalar separation_margin = 0.0;
};

/// Builds the comparison table from finished run directories under out_dir;
/// missing runs are reported by name.
std::vector<CompareRow> compare(const cfg::ExperimentConfig& config,
                                const synth::Dataset& dataset,
                                const std::filesystem::path& out_dir);

std::string compare_csv(const std::vector<CompareRow>& rows);

const char* subset_name(synth::SubsetMode mode);

}  // namespace adawac::exp
