// Experiment harness CLI: dataset generation, training for every baseline
// mode, duality-gap sweeps, method comparison, gradient checking, and trace
// export.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "adawac/experiments.hpp"

namespace fs = std::filesystem;
using namespace adawac;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericError = 3;

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::int64_t seed = -1;
  bool force = false;
};

cfg::ExperimentConfig load_with_overrides(const CommonArgs& args) {
  cfg::ExperimentConfig config = cfg::load_config(args.config_path);
  if (args.seed >= 0) {
    config.mixture.seed = static_cast<std::uint64_t>(args.seed);
    config.train.seed = static_cast<std::uint64_t>(args.seed);
  }
  if (!args.out.empty()) config.output_dir = args.out;
  return config;
}

int sweep_threads() {
  if (const char* env = std::getenv("WAC_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  return 0;  // auto
}

synth::Dataset load_dataset(const cfg::ExperimentConfig& config) {
  if (config.dataset_path.empty()) {
    throw ConfigError("config: [data] dataset path is required for this subcommand");
  }
  if (!fs::exists(config.dataset_path)) {
    throw ConfigError("dataset file not found: " + config.dataset_path +
                      " (run the generate subcommand first)");
  }
  return synth::load(config.dataset_path);
}

int cmd_generate(const CommonArgs& args) {
  const cfg::ExperimentConfig config = load_with_overrides(args);
  fs::path out = args.out.empty()
                     ? (config.dataset_path.empty()
                            ? fs::path(config.output_dir) / "dataset.json"
                            : fs::path(config.dataset_path))
                     : fs::path(args.out);
  const synth::Dataset dataset = config.mixture.track == synth::Track::kPlanted
                                     ? synth::generate(config.mixture, config.model)
                                     : synth::generate(config.mixture);
  synth::save(dataset, out);
  std::cout << "wrote " << dataset.size() << " samples (dense fraction "
            << format_sig(dataset.dense_fraction(), 4) << ") to " << out.string() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const cfg::ExperimentConfig config = load_with_overrides(args);
  const synth::Dataset dataset = load_dataset(config);
  const exp::Split split = exp::split_dataset(dataset, config.eval.subset, config.mixture.seed);
  const std::string config_text = cfg::canonical_text(config);
  for (const opt::BaselineMode mode : config.modes) {
    const exp::TrainOutcome outcome =
        exp::train_mode(config, mode, split.train, config.output_dir, config_text, args.force);
    if (outcome.skipped) {
      std::cout << opt::to_string(mode) << ": up to date, skipped (use --force to re-run)\n";
    } else if (outcome.resumed_from > 0) {
      std::cout << opt::to_string(mode) << ": resumed from iteration " << outcome.resumed_from
                << ", finished " << outcome.record.iterations << "\n";
    } else {
      std::cout << opt::to_string(mode) << ": finished " << outcome.record.iterations
                << " iterations\n";
    }
  }
  return 0;
}

int cmd_gap_curve(const CommonArgs& args) {
  const cfg::ExperimentConfig config = load_with_overrides(args);
  const synth::Dataset dataset = load_dataset(config);
  const auto points = exp::gap_curve(config, dataset, sweep_threads());
  const fs::path out = fs::path(config.output_dir) / "gap_curve.csv";
  atomic_write_file(out, exp::gap_curve_csv(points));
  std::cout << "wrote " << points.size() << " sweep points to " << out.string() << "\n";
  return 0;
}

int cmd_compare(const CommonArgs& args) {
  const cfg::ExperimentConfig config = load_with_overrides(args);
  const synth::Dataset dataset = load_dataset(config);
  const auto rows = exp::compare(config, dataset, config.output_dir);
  const fs::path out = fs::path(config.output_dir) / "compare.csv";
  atomic_write_file(out, exp::compare_csv(rows));
  std::cout << exp::compare_csv(rows);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_gradcheck(std::int64_t seed_arg) {
  const std::uint64_t seed = seed_arg >= 0 ? static_cast<std::uint64_t>(seed_arg) : 20240u;
  Rng rng(seed);
  int failures = 0;
  for (const auto family : {model::Family::kConvexLinear, model::Family::kMlp}) {
    model::ModelSpec spec;
    spec.family = family;
    spec.height = 6;
    spec.width = 6;
    spec.num_classes = 3;
    spec.latent_dim = 5;
    spec.decoder_seed = 11;
    const model::Model m = model::make_model(spec);
    const Index dim = model::param_dim(spec);

    for (const char* loss : {"ce", "ac", "dice"}) {
      Scalar worst = 0.0;
      for (int trial = 0; trial < 5; ++trial) {
        Vector theta(dim);
        for (Index i = 0; i < dim; ++i) theta(i) = 0.4 * normal01(rng);
        LabeledImage sample;
        sample.x.resize(spec.pixels());
        for (Index i = 0; i < sample.x.size(); ++i) sample.x(i) = normal01(rng);
        sample.y.resize(spec.pixels());
        for (Index i = 0; i < sample.y.size(); ++i) {
          sample.y(i) = static_cast<int>(uniform_index(rng, spec.num_classes));
        }
        const auto a1 = aug::make_op(1, false, spec.height, spec.width);
        const auto a2 = aug::make_op(2, true, spec.height, spec.width);
        model::LossProbe probe;
        probe.sample = &sample;
        probe.x = &sample.x;
        probe.a1 = &a1;
        probe.a2 = &a2;
        if (std::string(loss) == "ce") {
          probe.kind = model::LossProbe::Kind::kCe;
        } else if (std::string(loss) == "ac") {
          probe.kind = model::LossProbe::Kind::kAc;
          probe.metric = LatentMetric::kSquaredEuclidean;
        } else {
          probe.kind = model::LossProbe::Kind::kDice;
        }
        worst = std::max(worst, model::finite_diff_check(m, theta, probe, 1e-6));
      }
      const bool ok = worst < 1e-4;
      failures += !ok;
      std::cout << (family == model::Family::kConvexLinear ? "convex_linear" : "mlp") << " "
                << loss << ": max rel err " << format_sig(worst, 3) << (ok ? "  ok" : "  FAIL")
                << "\n";
    }
  }
  return failures == 0 ? 0 : 1;
}

int cmd_export_traces(const CommonArgs& args) {
  const cfg::ExperimentConfig config = load_with_overrides(args);
  const fs::path out_dir =
      args.out.empty() ? fs::path(config.output_dir) / "traces" : fs::path(args.out);
  int exported = 0;
  for (const opt::BaselineMode mode : config.modes) {
    const runio::RunPaths paths{fs::path(config.output_dir) / opt::to_string(mode)};
    if (!fs::exists(paths.trace())) continue;
    const std::string content = read_file(paths.trace());
    if (content.rfind(runio::kTraceHeader, 0) != 0) {
      throw ConfigError("trace file has an unexpected header: " + paths.trace().string());
    }
    atomic_write_file(out_dir / (std::string("traces_") + opt::to_string(mode) + ".csv"),
                      content);
    ++exported;
  }
  if (exported == 0) {
    throw ConfigError("export-traces: no trace files found under " + config.output_dir);
  }
  std::cout << "exported " << exported << " trace file(s) to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted augmentation-consistency training and analysis harness"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub, bool with_force) {
    sub->add_option("--config", args.config_path, "experiment config file")->required();
    sub->add_option("--out", args.out, "output path override");
    sub->add_option("--seed", args.seed, "seed override for mixture and training");
    if (with_force) sub->add_flag("--force", args.force, "discard existing run artifacts");
  };

  auto* generate = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(generate, false);
  auto* train = app.add_subcommand("train", "train the configured modes");
  add_common(train, true);
  auto* gap = app.add_subcommand("gap-curve", "duality-gap sweep over T and seeds");
  add_common(gap, false);
  auto* compare = app.add_subcommand("compare", "score trained modes on held-out dense samples");
  add_common(compare, false);
  auto* exportt = app.add_subcommand("export-traces", "re-export per-run trace CSVs");
  add_common(exportt, false);
  std::int64_t gradcheck_seed = -1;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--seed", gradcheck_seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(args);
    if (train->parsed()) return cmd_train(args);
    if (gap->parsed()) return cmd_gap_curve(args);
    if (compare->parsed()) return cmd_compare(args);
    if (exportt->parsed()) return cmd_export_traces(args);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumericError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
