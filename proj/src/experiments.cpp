#include "adawac/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace adawac::exp {

Vector warm_start(const model::Model& model, const std::vector<LabeledImage>& data,
                  long long iterations, Scalar eta, std::uint64_t seed) {
  opt::TrainConfig config;
  config.mode = opt::BaselineMode::kErm;
  config.eta_theta = eta;
  config.iterations = iterations;
  config.seed = seed;
  config.log_every_epochs = 0;
  return opt::run(model, data, config).theta_final;
}

ResolvedInit resolve_init(const cfg::ExperimentConfig& config, const model::Model& model,
                          const synth::Dataset& trainset) {
  ResolvedInit out;
  Vector center;
  switch (config.projection_mode) {
    case cfg::ProjectionMode::kThetaStar:
      if (!trainset.theta_star) {
        throw ConfigError("projection = theta_star requires a planted dataset");
      }
      center = *trainset.theta_star;
      break;
    case cfg::ProjectionMode::kInit:
    case cfg::ProjectionMode::kNone:
      if (config.warmstart_iterations > 0) {
        center = warm_start(model, opt::training_view(trainset.samples),
                            config.warmstart_iterations, config.warmstart_eta, config.train.seed);
      } else {
        center = Vector::Zero(model::param_dim(model.spec));
      }
      break;
  }
  out.theta_init = center;
  if (config.projection_mode != cfg::ProjectionMode::kNone) {
    out.projection = opt::Projection{std::move(center), config.gamma};
  }
  return out;
}

Scalar calibrate_lambda(const Vector& ce_at_anchor, const Vector& rho_at_anchor) {
  if (ce_at_anchor.size() < 2 || ce_at_anchor.size() != rho_at_anchor.size()) {
    throw DimensionError("calibrate_lambda: need matching per-sample loss vectors");
  }
  std::vector<Scalar> sorted(ce_at_anchor.data(), ce_at_anchor.data() + ce_at_anchor.size());
  std::sort(sorted.begin(), sorted.end());
  Scalar tau = sorted.front();
  Scalar widest = -1.0;
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] - sorted[i - 1] > widest) {
      widest = sorted[i] - sorted[i - 1];
      tau = 0.5 * (sorted[i] + sorted[i - 1]);
    }
  }
  Scalar best_lambda = tau / std::max(rho_at_anchor.mean(), 1e-12);
  int best = -1;
  for (Scalar l = 1e-3; l < 1.0; l *= 1.02) {
    int agree = 0;
    for (Index i = 0; i < ce_at_anchor.size(); ++i) {
      agree += (ce_at_anchor(i) > tau) == (ce_at_anchor(i) > l * rho_at_anchor(i));
    }
    if (agree > best) {
      best = agree;
      best_lambda = l;
    }
  }
  return best_lambda;
}

Split split_dataset(const synth::Dataset& dataset, synth::SubsetMode mode, std::uint64_t seed) {
  Split split;
  split.train = synth::subset(dataset, mode, seed);
  if (mode == synth::SubsetMode::kFull) {
    split.heldout = dataset.samples;
    return split;
  }
  std::set<std::pair<int, int>> kept;
  for (const Sample& s : split.train.samples) kept.emplace(s.volume_id, s.slice_index);
  for (const Sample& s : dataset.samples) {
    if (kept.count({s.volume_id, s.slice_index}) == 0) split.heldout.push_back(s);
  }
  return split;
}

TrainOutcome train_mode(const cfg::ExperimentConfig& config, opt::BaselineMode mode,
                        const synth::Dataset& trainset, const std::filesystem::path& out_dir,
                        const std::string& config_text, bool force) {
  const model::Model model = model::make_model(config.model);
  const ResolvedInit init = resolve_init(config, model, trainset);

  opt::TrainConfig train = config.train;
  train.mode = mode;
  train.theta_init = init.theta_init;
  train.projection = init.projection;

  const runio::RunPaths paths{out_dir / opt::to_string(mode)};
  const std::string hash =
      runio::run_content_hash(config_text + "|" + opt::to_string(mode), synth::to_json(trainset));

  TrainOutcome outcome;
  if (!force && runio::run_is_complete(paths, hash, train.iterations)) {
    outcome.skipped = true;
    return outcome;
  }
  if (force) std::filesystem::remove_all(paths.dir);

  std::optional<opt::Checkpoint> resume;
  if (!force) resume = runio::find_resume_point(paths, hash, train.iterations);
  if (resume) outcome.resumed_from = resume->iteration;

  const auto data = opt::training_view(trainset.samples);
  outcome.record = opt::run(model, data, train, resume ? &*resume : nullptr);
  runio::write_run_artifacts(paths, outcome.record, trainset.samples, config_text, hash,
                             resume.has_value());
  return outcome;
}

GapPoint gap_point(const cfg::ExperimentConfig& config, const model::Model& model,
                   const std::vector<LabeledImage>& data, const ResolvedInit& init,
                   long long iterations, std::uint64_t seed) {
  if (!init.projection) throw ConfigError("gap_point: projection must be configured");
  const Index n = static_cast<Index>(data.size());

  opt::TrainConfig train = config.train;
  train.mode = opt::BaselineMode::kAdaWac;
  train.iterations = iterations;
  train.seed = seed;
  train.theta_init = init.theta_init;
  if (config.init_displacement != 0.0) {
    // Start away from the ball center; the guarantee allows any
    // initialization inside the feasible ball. Positive values displace in a
    // seeded random direction, negative values walk against the center
    // (the hardest in-ball start), both scaled by |value| * gamma.
    Vector direction;
    if (config.init_displacement < 0.0 && init.theta_init.norm() > 0.0) {
      direction = -init.theta_init;
    } else {
      Rng rng(seed * 0x9e3779b97f4a7c15ull + 0xd15ull);
      direction.resize(init.theta_init.size());
      for (Index i = 0; i < direction.size(); ++i) direction(i) = normal01(rng);
    }
    train.theta_init += direction * (std::abs(config.init_displacement) *
                                     init.projection->gamma / direction.norm());
  }
  train.projection = init.projection;
  train.log_every_epochs = 0;
  train.checkpoint_every_epochs = 0;
  train.momentum = 0.0;
  train.weight_decay = 0.0;
  train.batch_size = 1;

  const opt::AugPairs pairs = opt::frozen_pairs(seed, n, model.spec.height, model.spec.width,
                                                train.distinct_aug_pairs);
  const opt::WacProblem problem{model, data, pairs, train.lambda_ac, train.metric};

  const auto probes = analysis::make_probe_set(init.projection->center, init.projection->gamma,
                                               {}, 16, seed + 0x5eedull);
  const analysis::ConstantEstimates consts = analysis::estimate_constants(problem, probes);

  const Scalar lr = opt::recommended_lr(init.projection->gamma, consts.c_theta_star,
                                        consts.c_b_star, n, iterations);
  train.eta_theta = lr;
  train.eta_beta = lr;

  const opt::RunRecord record = opt::run(model, data, train);

  analysis::OracleConfig oracle;
  oracle.projection = init.projection;
  oracle.theta_init = record.theta_bar;
  oracle.grad_tol = 1e-7;
  oracle.max_iters = 4000;
  const analysis::GapReport report =
      analysis::duality_gap(problem, record.theta_bar, record.beta_bar, oracle);

  GapPoint point;
  point.t = iterations;
  point.seed = seed;
  point.gap = report.gap;
  point.bound = analysis::theoretical_bound(init.projection->gamma, consts, n, iterations);
  point.c_theta = consts.c_theta_star;
  point.c_b = consts.c_b_star;
  return point;
}

std::vector<GapPoint> gap_curve(const cfg::ExperimentConfig& config,
                                const synth::Dataset& dataset, int max_threads) {
  if (config.model.family != model::Family::kConvexLinear) {
    throw ConfigError("gap-curve: refusing the mlp family; the inner oracle and the "
                      "convergence guarantee require the convex_linear model");
  }
  if (config.projection_mode == cfg::ProjectionMode::kNone) {
    throw ConfigError("gap-curve: projection must be enabled (theta_star or init)");
  }
  if (!config.sweep) throw ConfigError("gap-curve: config needs a [sweep] section");

  const model::Model model = model::make_model(config.model);
  const ResolvedInit init = resolve_init(config, model, dataset);
  const auto data = opt::training_view(dataset.samples);

  struct Task {
    long long t;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const long long t : config.sweep->t_values) {
    for (const std::uint64_t seed : config.sweep->seeds) tasks.push_back({t, seed});
  }
  std::vector<GapPoint> points(tasks.size());

  int threads = max_threads > 0 ? max_threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(tasks.size())));

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= tasks.size()) return;
      try {
        points[idx] = gap_point(config, model, data, init, tasks[idx].t, tasks[idx].seed);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return points;
}

std::string gap_curve_csv(const std::vector<GapPoint>& points) {
  std::ostringstream out;
  out << "T,seed,gap,bound,c_theta,c_b\n";
  for (const GapPoint& p : points) {
    out << p.t << ',' << p.seed << ',' << format_sig(p.gap, 9) << ',' << format_sig(p.bound, 9)
        << ',' << format_sig(p.c_theta, 9) << ',' << format_sig(p.c_b, 9) << '\n';
  }
  return out.str();
}

EvalResult evaluate_dense(const model::Model& model, const Vector& theta,
                          const std::vector<Sample>& heldout, const cfg::EvalConfig& eval) {
  EvalResult result;
  const int num_classes = model.spec.num_classes;
  std::vector<Scalar> dsc_sum(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<Scalar> hd_sum(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<int> hd_count(static_cast<std::size_t>(num_classes), 0);
  int dense = 0;
  for (const Sample& s : heldout) {
    if (s.tag != SubpopTag::kDense) continue;
    ++dense;
    const model::Prediction pred = model::forward(model, theta, s.data.x);
    for (int k = 1; k < num_classes; ++k) {
      metrics::MaskPair pair{metrics::argmax_mask(pred.probs, k), metrics::label_mask(s.data.y, k),
                             model.spec.height, model.spec.width};
      dsc_sum[static_cast<std::size_t>(k)] += metrics::dsc_metric(pair, eval.dsc_convention);
      const Scalar hd = metrics::hd95(pair, eval.hd95_empty);
      if (!std::isnan(hd)) {
        hd_sum[static_cast<std::size_t>(k)] += hd;
        ++hd_count[static_cast<std::size_t>(k)];
      }
    }
  }
  result.num_samples = dense;
  if (dense == 0) return result;
  Scalar dsc_total = 0.0, hd_total = 0.0;
  int hd_classes = 0;
  for (int k = 1; k < num_classes; ++k) {
    const Scalar dsc = dsc_sum[static_cast<std::size_t>(k)] / dense;
    const int hc = hd_count[static_cast<std::size_t>(k)];
    const Scalar hd = hc > 0 ? hd_sum[static_cast<std::size_t>(k)] / hc
                             : std::numeric_limits<Scalar>::quiet_NaN();
    result.per_class.push_back({k, {dsc, hd}});
    dsc_total += dsc;
    if (hc > 0) {
      hd_total += hd;
      ++hd_classes;
    }
  }
  result.mean_fg_dsc = dsc_total / (num_classes - 1);
  result.mean_hd95 = hd_classes > 0 ? hd_total / hd_classes : 0.0;
  return result;
}

std::vector<CompareRow> compare(const cfg::ExperimentConfig& config,
                                const synth::Dataset& dataset,
                                const std::filesystem::path& out_dir) {
  const model::Model model = model::make_model(config.model);
  const Split split = split_dataset(dataset, config.eval.subset, config.mixture.seed);

  std::vector<std::string> missing;
  std::vector<CompareRow> rows;
  for (const opt::BaselineMode mode : config.modes) {
    const runio::RunPaths paths{out_dir / opt::to_string(mode)};
    if (!std::filesystem::exists(paths.final_checkpoint())) {
      missing.push_back(opt::to_string(mode));
      continue;
    }
    const opt::Checkpoint ckpt = runio::load_checkpoint(paths.final_checkpoint());
    const EvalResult eval = evaluate_dense(model, ckpt.theta, split.heldout, config.eval);

    std::vector<SubpopTag> tags;
    tags.reserve(split.train.samples.size());
    for (const Sample& s : split.train.samples) tags.push_back(s.tag);
    const analysis::SeparationReport sep =
        analysis::separation_report(ckpt.beta_bar(), tags);

    CompareRow row;
    row.mode = mode;
    row.subset = subset_name(config.eval.subset);
    row.heldout_dense = eval.num_samples;
    row.mean_fg_dsc = eval.mean_fg_dsc;
    row.mean_hd95 = eval.mean_hd95;
    row.separation_accuracy = sep.accuracy;
    row.separation_margin = sep.mean_margin;
    rows.push_back(row);

    // Per-class report alongside the run artifacts.
    std::ostringstream per_class;
    per_class << "run_id,class_id,dsc,hd95,dsc_convention,hd95_convention\n";
    for (const auto& [class_id, scores] : eval.per_class) {
      per_class << opt::to_string(mode) << ',' << class_id << ','
                << format_sig(scores.first, 9) << ',' << format_sig(scores.second, 9) << ','
                << (config.eval.dsc_convention == metrics::DscConvention::kCorrected ? "corrected"
                                                                                     : "legacy")
                << ','
                << (config.eval.hd95_empty == metrics::Hd95EmptyConvention::kPaperZero
                        ? "paper_zero"
                        : "sentinel")
                << '\n';
    }
    atomic_write_file(paths.dir / "eval.csv", per_class.str());
  }
  if (!missing.empty()) {
    std::string names;
    for (const std::string& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw ConfigError("compare: missing trained runs for: " + names +
                      " (run the train subcommand first)");
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out << "mode,subset,heldout_dense,mean_fg_dsc,mean_hd95,separation_accuracy,separation_margin\n";
  for (const CompareRow& row : rows) {
    out << opt::to_string(row.mode) << ',' << row.subset << ',' << row.heldout_dense << ','
        << format_sig(row.mean_fg_dsc, 9) << ',' << format_sig(row.mean_hd95, 9) << ','
        << format_sig(row.separation_accuracy, 9) << ',' << format_sig(row.separation_margin, 9)
        << '\n';
  }
  return out.str();
}

const char* subset_name(synth::SubsetMode mode) {
  switch (mode) {
    case synth::SubsetMode::kFull: return "full";
    case synth::SubsetMode::kHalfVol: return "half_vol";
    case synth::SubsetMode::kHalfSlice: return "half_slice";
    default: return "half_sparse";
  }
}

}  // namespace adawac::exp
