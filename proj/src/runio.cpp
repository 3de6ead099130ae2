#include "adawac/runio.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace adawac::runio {
namespace {

using nlohmann::json;

json vec_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vector vec_from(const json& arr) {
  Vector v(arr.size());
  Index i = 0;
  for (const auto& e : arr) v(i++) = e.get<double>();
  return v;
}

}  // namespace

std::string checkpoint_to_json(const opt::Checkpoint& ckpt) {
  json doc;
  doc["version"] = 1;
  doc["iteration"] = ckpt.iteration;
  doc["theta"] = vec_json(ckpt.theta);
  doc["beta"] = vec_json(ckpt.beta);
  doc["theta_sum"] = vec_json(ckpt.theta_sum);
  doc["beta_sum"] = vec_json(ckpt.beta_sum);
  if (ckpt.iteration > 0) {
    doc["theta_bar"] = vec_json(ckpt.theta_bar());
    doc["beta_bar"] = vec_json(ckpt.beta_bar());
  }
  if (ckpt.velocity.size() > 0) doc["velocity"] = vec_json(ckpt.velocity);
  doc["rng_state"] = ckpt.rng_state;
  doc["config_hash"] = ckpt.hash;
  return doc.dump();
}

opt::Checkpoint checkpoint_from_json(const std::string& text) {
  json doc = json::parse(text);
  if (!doc.contains("version") || doc["version"].get<int>() != 1) {
    throw ConfigError("checkpoint: unsupported schema version");
  }
  opt::Checkpoint ckpt;
  ckpt.iteration = doc.at("iteration").get<long long>();
  ckpt.theta = vec_from(doc.at("theta"));
  ckpt.beta = vec_from(doc.at("beta"));
  ckpt.theta_sum = vec_from(doc.at("theta_sum"));
  ckpt.beta_sum = vec_from(doc.at("beta_sum"));
  if (doc.contains("velocity")) ckpt.velocity = vec_from(doc["velocity"]);
  ckpt.rng_state = doc.at("rng_state").get<std::string>();
  ckpt.hash = doc.at("config_hash").get<std::string>();
  return ckpt;
}

void save_checkpoint(const opt::Checkpoint& ckpt, const std::filesystem::path& path) {
  atomic_write_file(path, checkpoint_to_json(ckpt));
}

opt::Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_file(path));
}

std::string trace_rows_csv(const opt::TraceBlock& traces, const std::vector<Sample>& samples) {
  const Index n = traces.ce.cols();
  if (static_cast<std::size_t>(n) != samples.size()) {
    throw DimensionError("trace csv: sample metadata count != trace width");
  }
  std::ostringstream out;
  for (std::size_t row = 0; row < traces.epochs.size(); ++row) {
    const auto r = static_cast<Index>(row);
    for (Index i = 0; i < n; ++i) {
      const Sample& s = samples[static_cast<std::size_t>(i)];
      out << traces.epochs[row] << ',' << i << ',' << s.volume_id << ',' << s.slice_index << ','
          << to_string(s.tag) << ',' << format_sig(traces.ce(r, i), 9) << ','
          << format_sig(traces.ac(r, i), 9) << ',' << format_sig(traces.beta(r, i), 9) << '\n';
    }
  }
  return out.str();
}

std::string run_content_hash(const std::string& config_text, const std::string& dataset_bytes) {
  return to_hex(fnv1a64(config_text + "\x1f" + to_hex(fnv1a64(dataset_bytes))));
}

std::optional<opt::Checkpoint> find_resume_point(const RunPaths& paths, const std::string& hash,
                                                 long long iterations) {
  namespace fs = std::filesystem;
  if (!fs::exists(paths.hash_file()) || read_file(paths.hash_file()) != hash) return std::nullopt;
  std::optional<opt::Checkpoint> best;
  auto consider = [&](const fs::path& p) {
    if (!fs::exists(p)) return;
    opt::Checkpoint ckpt = load_checkpoint(p);
    if (ckpt.iteration >= iterations) return;
    if (!best || ckpt.iteration > best->iteration) best = std::move(ckpt);
  };
  consider(paths.final_checkpoint());
  if (fs::exists(paths.dir)) {
    for (const auto& entry : fs::directory_iterator(paths.dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("checkpoint_", 0) == 0 && name != "checkpoint_final.json") {
        consider(entry.path());
      }
    }
  }
  return best;
}

bool run_is_complete(const RunPaths& paths, const std::string& hash, long long iterations) {
  namespace fs = std::filesystem;
  if (!fs::exists(paths.hash_file()) || !fs::exists(paths.final_checkpoint())) return false;
  if (read_file(paths.hash_file()) != hash) return false;
  return load_checkpoint(paths.final_checkpoint()).iteration == iterations;
}

void write_run_artifacts(const RunPaths& paths, const opt::RunRecord& record,
                         const std::vector<Sample>& samples, const std::string& config_text,
                         const std::string& hash, bool append_traces) {
  namespace fs = std::filesystem;
  fs::create_directories(paths.dir);
  atomic_write_file(paths.config_copy(), config_text);
  atomic_write_file(paths.hash_file(), hash);

  std::string existing;
  if (append_traces && fs::exists(paths.trace())) {
    existing = read_file(paths.trace());
  } else {
    existing = std::string(kTraceHeader) + "\n";
  }
  atomic_write_file(paths.trace(), existing + trace_rows_csv(record.traces, samples));

  for (const opt::Checkpoint& ckpt : record.checkpoints) {
    if (ckpt.iteration == record.iterations) {
      save_checkpoint(ckpt, paths.final_checkpoint());
    } else {
      save_checkpoint(ckpt, paths.checkpoint_at(ckpt.iteration));
    }
  }

  json summary;
  summary["iterations"] = record.iterations;
  summary["config_hash"] = hash;
  summary["max_sample_grad_norm"] = record.grad_stats.max_sample_grad_norm;
  summary["max_sample_loss"] = record.grad_stats.max_sample_loss;
  summary["beta_bar_mean"] = record.beta_bar.size() > 0 ? record.beta_bar.mean() : 0.0;
  atomic_write_file(paths.run_summary(), summary.dump(2) + "\n");
}

}  // namespace adawac::runio
