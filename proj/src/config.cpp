#include "adawac/config.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <sstream>

namespace adawac::cfg {
namespace {

struct Entry {
  std::string value;
  int line = 0;
};

using SectionMap = std::map<std::string, std::map<std::string, Entry>>;

const std::map<std::string, std::set<std::string>> kSchema = {
    {"", {"version"}},
    {"mixture",
     {"track", "xi", "num_volumes", "slices_per_volume", "height", "width", "num_classes",
      "noise_sigma", "sparsity_level", "margin_boost", "iid_tags", "seed"}},
    {"model", {"family", "latent_dim", "hidden_dim", "decoder_seed"}},
    {"data", {"dataset"}},
    {"train",
     {"mode", "modes", "eta_theta", "eta_beta", "lambda_ac", "iterations", "metric", "projection",
      "gamma", "use_dice", "dice_epsilon", "momentum", "weight_decay", "batch_size", "trim_ratio",
      "seed", "resample_augmentations", "distinct_aug_pairs", "ce_on_augmented", "epoch_shuffle", "log_every_epochs",
      "checkpoint_every_epochs", "warmstart_iterations", "warmstart_eta", "init_displacement"}},
    {"eval", {"subset", "dsc_convention", "hd95_empty"}},
    {"sweep", {"t_values", "seeds"}},
    {"output", {"dir"}},
};

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

SectionMap tokenize(const std::string& text) {
  SectionMap sections;
  std::istringstream in(text);
  std::string line;
  std::string current;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      }
      current = trim(line.substr(1, line.size() - 2));
      if (kSchema.find(current) == kSchema.end()) {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + current +
                          "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& allowed = kSchema.at(current);
    if (allowed.find(key) == allowed.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key +
                        "' in section [" + current + "]");
    }
    if (sections[current].count(key) > 0) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    sections[current][key] = {value, line_no};
  }
  return sections;
}

class Reader {
 public:
  explicit Reader(const SectionMap& sections) : sections_(sections) {}

  std::optional<Entry> find(const std::string& section, const std::string& key) const {
    const auto sec = sections_.find(section);
    if (sec == sections_.end()) return std::nullopt;
    const auto entry = sec->second.find(key);
    if (entry == sec->second.end()) return std::nullopt;
    return entry->second;
  }

  template <typename T, typename Parser>
  T get(const std::string& section, const std::string& key, T fallback, Parser parse) const {
    const auto entry = find(section, key);
    if (!entry) return fallback;
    return parse(entry->value, entry->line, section + "." + key);
  }

  bool has_section(const std::string& section) const { return sections_.count(section) > 0; }

 private:
  const SectionMap& sections_;
};

[[noreturn]] void fail(int line, const std::string& what, const std::string& key) {
  throw ConfigError("line " + std::to_string(line) + ": " + what + " for " + key);
}

double parse_real(const std::string& v, int line, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) fail(line, "trailing characters in number '" + v + "'", key);
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    fail(line, "expected a real number, got '" + v + "'", key);
  }
}

long long parse_int(const std::string& v, int line, const std::string& key) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    fail(line, "expected an integer, got '" + v + "'", key);
  }
  return out;
}

std::uint64_t parse_uint(const std::string& v, int line, const std::string& key) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    fail(line, "expected a non-negative integer, got '" + v + "'", key);
  }
  return out;
}

bool parse_bool(const std::string& v, int line, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(line, "expected true/false, got '" + v + "'", key);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  const SectionMap sections = tokenize(text);
  const Reader reader(sections);

  const auto version = reader.find("", "version");
  if (!version) throw ConfigError("config: missing top-level 'version'");
  if (parse_int(version->value, version->line, "version") != 1) {
    throw ConfigError("line " + std::to_string(version->line) +
                      ": unsupported config version '" + version->value + "'");
  }

  ExperimentConfig out;

  auto real = [&](const char* sec, const char* key, double fb) {
    return reader.get<double>(sec, key, fb, parse_real);
  };
  auto integer = [&](const char* sec, const char* key, long long fb) {
    return reader.get<long long>(sec, key, fb, parse_int);
  };
  auto uinteger = [&](const char* sec, const char* key, std::uint64_t fb) {
    return reader.get<std::uint64_t>(sec, key, fb, parse_uint);
  };
  auto boolean = [&](const char* sec, const char* key, bool fb) {
    return reader.get<bool>(sec, key, fb, parse_bool);
  };
  auto word = [&](const char* sec, const char* key, std::string fb) {
    return reader.get<std::string>(sec, key, std::move(fb),
                                   [](const std::string& v, int, const std::string&) { return v; });
  };

  // [mixture]
  {
    const std::string track = word("mixture", "track", "planted");
    if (track == "planted") {
      out.mixture.track = synth::Track::kPlanted;
    } else if (track == "geometric") {
      out.mixture.track = synth::Track::kGeometric;
    } else {
      throw ConfigError("config: mixture.track must be planted|geometric, got '" + track + "'");
    }
    out.mixture.xi = real("mixture", "xi", out.mixture.xi);
    out.mixture.num_volumes = static_cast<int>(integer("mixture", "num_volumes", 4));
    out.mixture.slices_per_volume = static_cast<int>(integer("mixture", "slices_per_volume", 8));
    out.mixture.height = static_cast<int>(integer("mixture", "height", 8));
    out.mixture.width = static_cast<int>(integer("mixture", "width", 8));
    out.mixture.num_classes = static_cast<int>(integer("mixture", "num_classes", 3));
    out.mixture.noise_sigma = real("mixture", "noise_sigma", out.mixture.noise_sigma);
    out.mixture.sparsity_level = real("mixture", "sparsity_level", out.mixture.sparsity_level);
    out.mixture.margin_boost = real("mixture", "margin_boost", out.mixture.margin_boost);
    out.mixture.iid_tags = boolean("mixture", "iid_tags", out.mixture.iid_tags);
    out.mixture.seed = uinteger("mixture", "seed", 0);
  }

  // [model]
  {
    const std::string family = word("model", "family", "convex_linear");
    if (family == "convex_linear") {
      out.model.family = model::Family::kConvexLinear;
    } else if (family == "mlp") {
      out.model.family = model::Family::kMlp;
    } else {
      throw ConfigError("config: model.family must be convex_linear|mlp, got '" + family + "'");
    }
    out.model.height = out.mixture.height;
    out.model.width = out.mixture.width;
    out.model.num_classes = out.mixture.num_classes;
    out.model.latent_dim = static_cast<int>(integer("model", "latent_dim", 8));
    out.model.hidden_dim = static_cast<int>(integer("model", "hidden_dim", 0));
    out.model.decoder_seed = uinteger("model", "decoder_seed", 0);
  }

  out.dataset_path = word("data", "dataset", "");

  // [train]
  {
    const std::string mode = word("train", "mode", "adawac");
    const auto parsed = opt::baseline_mode_from_string(mode);
    if (!parsed) throw ConfigError("config: unknown train.mode '" + mode + "'");
    out.train.mode = *parsed;
    out.modes.push_back(*parsed);
    const auto modes_entry = reader.find("train", "modes");
    if (modes_entry) {
      out.modes.clear();
      for (const std::string& name : split_list(modes_entry->value)) {
        const auto m = opt::baseline_mode_from_string(name);
        if (!m) {
          throw ConfigError("line " + std::to_string(modes_entry->line) +
                            ": unknown mode '" + name + "' in train.modes");
        }
        out.modes.push_back(*m);
      }
      if (out.modes.empty()) throw ConfigError("config: train.modes is empty");
    }
    out.train.eta_theta = real("train", "eta_theta", out.train.eta_theta);
    out.train.eta_beta = real("train", "eta_beta", out.train.eta_beta);
    out.train.lambda_ac = real("train", "lambda_ac", out.train.lambda_ac);
    out.train.iterations = integer("train", "iterations", out.train.iterations);
    const std::string metric = word("train", "metric", "euclidean");
    if (metric == "euclidean") {
      out.train.metric = LatentMetric::kEuclidean;
    } else if (metric == "squared_euclidean") {
      out.train.metric = LatentMetric::kSquaredEuclidean;
    } else {
      throw ConfigError("config: train.metric must be euclidean|squared_euclidean");
    }
    const std::string projection = word("train", "projection", "none");
    if (projection == "none") {
      out.projection_mode = ProjectionMode::kNone;
    } else if (projection == "theta_star") {
      out.projection_mode = ProjectionMode::kThetaStar;
    } else if (projection == "init") {
      out.projection_mode = ProjectionMode::kInit;
    } else {
      throw ConfigError("config: train.projection must be none|theta_star|init");
    }
    out.gamma = real("train", "gamma", out.gamma);
    out.train.use_dice = boolean("train", "use_dice", out.train.use_dice);
    out.train.dice_epsilon = real("train", "dice_epsilon", out.train.dice_epsilon);
    out.train.momentum = real("train", "momentum", out.train.momentum);
    out.train.weight_decay = real("train", "weight_decay", out.train.weight_decay);
    out.train.batch_size = static_cast<int>(integer("train", "batch_size", out.train.batch_size));
    out.train.trim_ratio = real("train", "trim_ratio", out.train.trim_ratio);
    out.train.seed = uinteger("train", "seed", out.train.seed);
    out.train.resample_augmentations =
        boolean("train", "resample_augmentations", out.train.resample_augmentations);
    out.train.distinct_aug_pairs =
        boolean("train", "distinct_aug_pairs", out.train.distinct_aug_pairs);
    out.train.ce_on_augmented = boolean("train", "ce_on_augmented", out.train.ce_on_augmented);
    out.train.epoch_shuffle = boolean("train", "epoch_shuffle", out.train.epoch_shuffle);
    out.train.log_every_epochs =
        static_cast<int>(integer("train", "log_every_epochs", out.train.log_every_epochs));
    out.train.checkpoint_every_epochs = static_cast<int>(
        integer("train", "checkpoint_every_epochs", out.train.checkpoint_every_epochs));
    out.warmstart_iterations = integer("train", "warmstart_iterations", 0);
    out.warmstart_eta = real("train", "warmstart_eta", out.warmstart_eta);
    out.init_displacement = real("train", "init_displacement", out.init_displacement);
  }

  // [eval]
  {
    const std::string subset = word("eval", "subset", "full");
    if (subset == "full") {
      out.eval.subset = synth::SubsetMode::kFull;
    } else if (subset == "half_vol") {
      out.eval.subset = synth::SubsetMode::kHalfVol;
    } else if (subset == "half_slice") {
      out.eval.subset = synth::SubsetMode::kHalfSlice;
    } else if (subset == "half_sparse") {
      out.eval.subset = synth::SubsetMode::kHalfSparse;
    } else {
      throw ConfigError("config: eval.subset must be full|half_vol|half_slice|half_sparse");
    }
    const std::string dsc = word("eval", "dsc_convention", "corrected");
    if (dsc == "corrected") {
      out.eval.dsc_convention = metrics::DscConvention::kCorrected;
    } else if (dsc == "legacy") {
      out.eval.dsc_convention = metrics::DscConvention::kTransUNetLegacy;
    } else {
      throw ConfigError("config: eval.dsc_convention must be corrected|legacy");
    }
    const std::string hd = word("eval", "hd95_empty", "paper_zero");
    if (hd == "paper_zero") {
      out.eval.hd95_empty = metrics::Hd95EmptyConvention::kPaperZero;
    } else if (hd == "sentinel") {
      out.eval.hd95_empty = metrics::Hd95EmptyConvention::kSentinel;
    } else {
      throw ConfigError("config: eval.hd95_empty must be paper_zero|sentinel");
    }
  }

  // [sweep]
  if (reader.has_section("sweep")) {
    SweepConfig sweep;
    const auto ts = reader.find("sweep", "t_values");
    const auto seeds = reader.find("sweep", "seeds");
    if (!ts || !seeds) throw ConfigError("config: [sweep] needs both t_values and seeds");
    for (const std::string& item : split_list(ts->value)) {
      sweep.t_values.push_back(parse_int(item, ts->line, "sweep.t_values"));
    }
    for (const std::string& item : split_list(seeds->value)) {
      sweep.seeds.push_back(parse_uint(item, seeds->line, "sweep.seeds"));
    }
    if (sweep.t_values.empty() || sweep.seeds.empty()) {
      throw ConfigError("config: [sweep] lists must be non-empty");
    }
    out.sweep = std::move(sweep);
  }

  out.output_dir = word("output", "dir", out.output_dir);

  synth::validate(out.mixture);
  model::validate(out.model);
  return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path));
}

std::string canonical_text(const ExperimentConfig& config) {
  std::ostringstream out;
  out << "version = 1\n";
  out << "[mixture]\n";
  out << "track = " << (config.mixture.track == synth::Track::kPlanted ? "planted" : "geometric")
      << "\n";
  out << "xi = " << format_sig(config.mixture.xi, 17) << "\n";
  out << "num_volumes = " << config.mixture.num_volumes << "\n";
  out << "slices_per_volume = " << config.mixture.slices_per_volume << "\n";
  out << "height = " << config.mixture.height << "\n";
  out << "width = " << config.mixture.width << "\n";
  out << "num_classes = " << config.mixture.num_classes << "\n";
  out << "noise_sigma = " << format_sig(config.mixture.noise_sigma, 17) << "\n";
  out << "sparsity_level = " << format_sig(config.mixture.sparsity_level, 17) << "\n";
  out << "margin_boost = " << format_sig(config.mixture.margin_boost, 17) << "\n";
  out << "iid_tags = " << (config.mixture.iid_tags ? "true" : "false") << "\n";
  out << "seed = " << config.mixture.seed << "\n";
  out << "[model]\n";
  out << "family = "
      << (config.model.family == model::Family::kConvexLinear ? "convex_linear" : "mlp") << "\n";
  out << "latent_dim = " << config.model.latent_dim << "\n";
  out << "hidden_dim = " << config.model.hidden_dim << "\n";
  out << "decoder_seed = " << config.model.decoder_seed << "\n";
  out << "[train]\n";
  out << opt::config_canonical_json(config.train) << "\n";
  out << "iterations = " << config.train.iterations << "\n";
  out << "warmstart_iterations = " << config.warmstart_iterations << "\n";
  out << "warmstart_eta = " << format_sig(config.warmstart_eta, 17) << "\n";
  out << "init_displacement = " << format_sig(config.init_displacement, 17) << "\n";
  out << "gamma = " << format_sig(config.gamma, 17) << "\n";
  out << "projection_mode = " << static_cast<int>(config.projection_mode) << "\n";
  out << "modes =";
  for (const auto mode : config.modes) out << " " << opt::to_string(mode);
  out << "\n";
  if (config.sweep) {
    out << "[sweep]\nt_values =";
    for (const auto t : config.sweep->t_values) out << " " << t;
    out << "\nseeds =";
    for (const auto s : config.sweep->seeds) out << " " << s;
    out << "\n";
  }
  return out.str();
}

}  // namespace adawac::cfg
