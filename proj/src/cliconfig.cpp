#include "scnn/cliconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace scnn {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::bad_config,
              "config: bad boolean for '" + key + "': " + v);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f)
    throw Error(ErrorCode::bad_config,
                "cannot read config file " + path.string());
  ExperimentConfig cfg;

  using Setter = std::function<void(const std::string&)>;
  std::map<std::string, Setter> schema = {
      {"run.output_dir", [&](const std::string& v) { cfg.output_dir = v; }},
      {"run.seed", [&](const std::string& v) { cfg.seed = std::stoull(v); }},
      {"run.jobs", [&](const std::string& v) { cfg.jobs = std::stoi(v); }},
      {"data.root", [&](const std::string& v) { cfg.dataset_root = v; }},
      {"data.k_folds",
       [&](const std::string& v) { cfg.k_folds = std::stoi(v); }},
      {"data.augment",
       [&](const std::string& v) { cfg.augment = parse_bool(v, "augment"); }},
      {"data.crop_ratio",
       [&](const std::string& v) { cfg.crop_ratio = std::stod(v); }},
      {"data.vflip",
       [&](const std::string& v) { cfg.vflip = parse_bool(v, "vflip"); }},
      {"model.architecture",
       [&](const std::string& v) { cfg.architecture = v; }},
      {"model.width_scale",
       [&](const std::string& v) { cfg.width_scale = std::stod(v); }},
      {"model.fc1_units",
       [&](const std::string& v) { cfg.fc1_units = std::stoull(v); }},
      {"model.fc2_units",
       [&](const std::string& v) { cfg.fc2_units = std::stoull(v); }},
      {"model.stem_channels",
       [&](const std::string& v) { cfg.stem_channels = std::stoull(v); }},
      {"model.inception", [&](const std::string& v) { cfg.inception = v; }},
      {"model.use_aux",
       [&](const std::string& v) { cfg.use_aux = parse_bool(v, "use_aux"); }},
      {"train.modality", [&](const std::string& v) { cfg.modality = v; }},
      {"train.iterations",
       [&](const std::string& v) { cfg.iterations = std::stoull(v); }},
      {"train.base_lr",
       [&](const std::string& v) { cfg.base_lr = std::stod(v); }},
      {"train.batch",
       [&](const std::string& v) { cfg.batch = std::stoull(v); }},
      {"train.momentum",
       [&](const std::string& v) { cfg.momentum = std::stod(v); }},
      {"train.eval_every",
       [&](const std::string& v) { cfg.eval_every = std::stoull(v); }},
  };

  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw Error(ErrorCode::bad_config,
                    "config line " + std::to_string(lineno) + ": bad section");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "run" && section != "data" && section != "model" &&
          section != "train")
        throw Error(ErrorCode::bad_config,
                    "config: unknown section '" + section + "'");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::bad_config,
                  "config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    std::string qualified = section + "." + key;
    auto it = schema.find(qualified);
    if (it == schema.end())
      throw Error(ErrorCode::bad_config,
                  "config: unknown key '" + qualified + "'");
    try {
      it->second(value);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error(ErrorCode::bad_config,
                  "config: bad value for '" + qualified + "': " + value);
    }
  }
  return cfg;
}

std::string render_experiment_config(
    const ExperimentConfig& cfg,
    const std::vector<std::pair<std::string, std::string>>& resolved_extras) {
  std::ostringstream os;
  os << "[run]\n";
  os << "output_dir = " << cfg.output_dir.string() << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "jobs = " << cfg.jobs << "\n";
  os << "\n[data]\n";
  os << "root = " << cfg.dataset_root.string() << "\n";
  os << "k_folds = " << cfg.k_folds << "\n";
  os << "augment = " << (cfg.augment ? "true" : "false") << "\n";
  os << "crop_ratio = " << cfg.crop_ratio << "\n";
  os << "vflip = " << (cfg.vflip ? "true" : "false") << "\n";
  os << "\n[model]\n";
  os << "architecture = " << cfg.architecture << "\n";
  os << "width_scale = " << cfg.width_scale << "\n";
  os << "fc1_units = " << cfg.fc1_units << "\n";
  os << "fc2_units = " << cfg.fc2_units << "\n";
  os << "stem_channels = " << cfg.stem_channels << "\n";
  os << "inception = " << cfg.inception << "\n";
  os << "use_aux = " << (cfg.use_aux ? "true" : "false") << "\n";
  os << "\n[train]\n";
  os << "modality = " << cfg.modality << "\n";
  os << "iterations = " << cfg.iterations << "\n";
  os << "base_lr = " << cfg.base_lr << "\n";
  os << "batch = " << cfg.batch << "\n";
  os << "momentum = " << cfg.momentum << "\n";
  os << "eval_every = " << cfg.eval_every << "\n";
  if (!resolved_extras.empty()) {
    os << "\n# resolved\n";
    for (auto& [k, v] : resolved_extras) os << "# " << k << " = " << v << "\n";
  }
  return os.str();
}

std::vector<InceptionSpec> parse_inception_specs(const std::string& text) {
  std::vector<InceptionSpec> specs;
  std::istringstream modules(text);
  std::string module;
  while (std::getline(modules, module, ';')) {
    std::vector<std::size_t> vals;
    std::istringstream fields(module);
    std::string field;
    while (std::getline(fields, field, ',')) vals.push_back(std::stoull(field));
    if (vals.size() != 6)
      throw Error(ErrorCode::bad_config,
                  "config: inception spec needs 6 values, got '" + module +
                      "'");
    specs.push_back({vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]});
  }
  return specs;
}

TrainingConfig to_training_config(const ExperimentConfig& cfg) {
  TrainingConfig t;
  t.iterations = cfg.iterations;
  t.base_lr = cfg.base_lr;
  t.batch_size = cfg.batch;
  t.momentum = cfg.momentum;
  t.augment = cfg.augment;
  t.crop_ratio = cfg.crop_ratio;
  t.allow_vflip = cfg.vflip;
  t.seed = cfg.seed;
  t.eval_every = cfg.eval_every;
  return t;
}

NetworkGraph<float> build_architecture(const ExperimentConfig& cfg,
                                       Shape4 input, std::size_t num_classes,
                                       std::uint64_t seed) {
  if (cfg.architecture == "mini_caffenet")
    return build_mini_caffenet<float>(input, num_classes, cfg.width_scale,
                                      seed, cfg.fc1_units, cfg.fc2_units);
  if (cfg.architecture == "mini_googlenet")
    return build_mini_googlenet<float>(input, num_classes,
                                       parse_inception_specs(cfg.inception),
                                       cfg.use_aux, seed, cfg.stem_channels);
  throw Error(ErrorCode::bad_config,
              "config: unknown architecture '" + cfg.architecture + "'");
}

std::filesystem::path resolve_output_dir(const std::filesystem::path& dir) {
  if (dir.is_absolute()) return dir;
  const char* root = std::getenv("SCNN_OUTPUT_ROOT");
  if (root && *root) return std::filesystem::path(root) / dir;
  return dir;
}

}  // namespace scnn
