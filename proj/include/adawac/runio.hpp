// On-disk run artifacts: checkpoint JSON, Fig-3-style trace CSVs, and run
// directory management (config copy, content hash, resume discovery).
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "adawac/config.hpp"
#include "adawac/optimizer.hpp"
#include "adawac/synth.hpp"

namespace adawac::runio {

std::string checkpoint_to_json(const opt::Checkpoint& ckpt);
opt::Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const opt::Checkpoint& ckpt, const std::filesystem::path& path);
opt::Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr const char* kTraceHeader =
    "epoch,sample_id,volume_id,slice_index,tag,ce,ac,beta";

/// CSV rows (no header) for the trace block, ordered by (epoch, sample_id);
/// floats at 9 significant digits.
std::string trace_rows_csv(const opt::TraceBlock& traces, const std::vector<Sample>& samples);

struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path config_copy() const { return dir / "config.ini"; }
  std::filesystem::path hash_file() const { return dir / "hash.txt"; }
  std::filesystem::path trace() const { return dir / "trace.csv"; }
  std::filesystem::path final_checkpoint() const { return dir / "checkpoint_final.json"; }
  std::filesystem::path run_summary() const { return dir / "run.json"; }
  std::filesystem::path checkpoint_at(long long iteration) const {
    return dir / ("checkpoint_" + std::to_string(iteration) + ".json");
  }
};

/// Content hash tying a run directory to its config text and dataset bytes.
std::string run_content_hash(const std::string& config_text, const std::string& dataset_bytes);

/// The resumable checkpoint with the largest iteration below `iterations`,
/// if the directory belongs to this content hash.
std::optional<opt::Checkpoint> find_resume_point(const RunPaths& paths, const std::string& hash,
                                                 long long iterations);

/// True when the directory holds a finished run for this hash and T.
bool run_is_complete(const RunPaths& paths, const std::string& hash, long long iterations);

/// Writes/updates all artifacts of a finished or resumed run segment.
void write_run_artifacts(const RunPaths& paths, const opt::RunRecord& record,
                         const std::vector<Sample>& samples, const std::string& config_text,
                         const std::string& hash, bool append_traces);

}  // namespace adawac::runio
