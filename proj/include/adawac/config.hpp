// Experiment configuration: a strict key = value file with [sections],
// schema-versioned, unknown keys rejected with line context.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adawac/metrics.hpp"
#include "adawac/optimizer.hpp"
#include "adawac/synth.hpp"

namespace adawac::cfg {

enum class ProjectionMode { kNone, kThetaStar, kInit };

struct EvalConfig {
  synth::SubsetMode subset = synth::SubsetMode::kFull;
  metrics::DscConvention dsc_convention = metrics::DscConvention::kCorrected;
  metrics::Hd95EmptyConvention hd95_empty = metrics::Hd95EmptyConvention::kPaperZero;
};

struct SweepConfig {
  std::vector<long long> t_values;
  std::vector<std::uint64_t> seeds;
};

struct ExperimentConfig {
  synth::MixtureSpec mixture;
  model::ModelSpec model;
  opt::TrainConfig train;  // projection filled in by the experiment driver
  ProjectionMode projection_mode = ProjectionMode::kNone;
  Scalar gamma = 2.0;
  std::vector<opt::BaselineMode> modes;  // train/compare mode matrix
  long long warmstart_iterations = 0;    // plain-CE SGD warm start for init/center
  Scalar warmstart_eta = 0.05;
  Scalar init_displacement = 0.0;        // start gap runs at this fraction of gamma from center
  EvalConfig eval;
  std::optional<SweepConfig> sweep;
  std::string dataset_path;
  std::string output_dir = "runs/out";
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// The parsed file's canonical text (used for run-directory content hashes).
std::string canonical_text(const ExperimentConfig& config);

}  // namespace adawac::cfg
