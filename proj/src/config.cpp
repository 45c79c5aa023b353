#include "lgnn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lgnn/errors.hpp"

namespace lgnn {

using nlohmann::json;

namespace {

// unknown keys are config typos, not extensions
void check_keys(const json& j, const std::string& where, const std::set<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad value for \"") + key + "\"");
  }
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  check_keys(j, "top level",
             {"arch", "data", "train", "lgnn", "som_dims", "seeds", "out_dir"});

  RunConfig cfg;
  if (j.contains("arch")) {
    const auto& a = j.at("arch");
    check_keys(a, "arch",
               {"name", "widths", "num_classes", "input_hw", "input_channels", "dropout"});
    read(a, "name", cfg.arch.arch);
    read(a, "widths", cfg.arch.widths);
    read(a, "num_classes", cfg.arch.num_classes);
    read(a, "input_hw", cfg.arch.input_hw);
    read(a, "input_channels", cfg.arch.input_channels);
    read(a, "dropout", cfg.arch.dropout_rate);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data",
               {"source", "dir", "classes", "train_per_class", "test_per_class", "augment",
                "normalize"});
    read(d, "source", cfg.data_source);
    read(d, "dir", cfg.data_dir);
    read(d, "classes", cfg.classes);
    read(d, "train_per_class", cfg.train_per_class);
    read(d, "test_per_class", cfg.test_per_class);
    read(d, "augment", cfg.augment);
    read(d, "normalize", cfg.normalize);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"epochs", "batch_size", "lr", "momentum", "weight_decay", "lr_milestones",
                "lr_factor"});
    read(t, "epochs", cfg.epochs);
    read(t, "batch_size", cfg.batch_size);
    read(t, "lr", cfg.lr);
    read(t, "momentum", cfg.momentum);
    read(t, "weight_decay", cfg.weight_decay);
    read(t, "lr_milestones", cfg.lr_milestones);
    read(t, "lr_factor", cfg.lr_factor);
  }
  if (j.contains("lgnn")) {
    const auto& l = j.at("lgnn");
    check_keys(l, "lgnn", {"selection", "sigma_mode", "base_sigma", "kernel_size"});
    std::string sel = to_string(cfg.policy.selection);
    std::string mode = to_string(cfg.policy.sigma_mode);
    read(l, "selection", sel);
    read(l, "sigma_mode", mode);
    cfg.policy.selection = selection_from_string(sel);
    cfg.policy.sigma_mode = sigma_mode_from_string(mode);
    read(l, "base_sigma", cfg.policy.base_sigma);
    read(l, "kernel_size", cfg.policy.kernel_size);
  }
  if (j.contains("som_dims")) {
    const auto& s = j.at("som_dims");
    if (!s.is_object()) throw ConfigError("config: som_dims must map width -> [m, n]");
    for (auto it = s.begin(); it != s.end(); ++it) {
      int64_t width = 0;
      try {
        width = std::stoll(it.key());
      } catch (const std::exception&) {
        throw ConfigError("config: som_dims key \"" + it.key() + "\" is not a filter count");
      }
      std::vector<int> mn;
      try {
        mn = it.value().get<std::vector<int>>();
      } catch (const json::exception&) {
        throw ConfigError("config: som_dims entries must be [m, n] pairs");
      }
      if (mn.size() != 2) throw ConfigError("config: som_dims entries must be [m, n] pairs");
      cfg.grid_overrides.add(width, mn[0], mn[1]);
    }
  }
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    check_keys(s, "seeds", {"init", "data", "dropout"});
    read(s, "init", cfg.seed_init);
    read(s, "data", cfg.seed_data);
    read(s, "dropout", cfg.seed_dropout);
  }
  read(j, "out_dir", cfg.out_dir);

  cfg.arch.seed = cfg.seed_init;
  if (cfg.data_source != "synthetic" && cfg.data_source != "cifar100")
    throw ConfigError("config: data source must be synthetic or cifar100");
  if (cfg.data_source == "cifar100" && cfg.data_dir.empty())
    throw ConfigError("config: cifar100 source needs data.dir");
  if (cfg.epochs < 0) throw ConfigError("config: epochs must be non-negative");
  if (cfg.batch_size < 1) throw ConfigError("config: batch_size must be positive");
  if (cfg.out_dir.empty()) throw ConfigError("config: out_dir must be set");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["arch"] = {{"name", cfg.arch.arch},
               {"widths", cfg.arch.widths},
               {"num_classes", cfg.arch.num_classes},
               {"input_hw", cfg.arch.input_hw},
               {"input_channels", cfg.arch.input_channels},
               {"dropout", cfg.arch.dropout_rate}};
  j["data"] = {{"source", cfg.data_source},
               {"dir", cfg.data_dir},
               {"classes", cfg.classes},
               {"train_per_class", cfg.train_per_class},
               {"test_per_class", cfg.test_per_class},
               {"augment", cfg.augment},
               {"normalize", cfg.normalize}};
  j["train"] = {{"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"lr", cfg.lr},
                {"momentum", cfg.momentum},
                {"weight_decay", cfg.weight_decay},
                {"lr_milestones", cfg.lr_milestones},
                {"lr_factor", cfg.lr_factor}};
  j["lgnn"] = {{"selection", to_string(cfg.policy.selection)},
               {"sigma_mode", to_string(cfg.policy.sigma_mode)},
               {"base_sigma", cfg.policy.base_sigma},
               {"kernel_size", cfg.policy.kernel_size}};
  json dims = json::object();
  for (const auto& [width, mn] : cfg.grid_overrides.lookup)
    dims[std::to_string(width)] = {mn.first, mn.second};
  j["som_dims"] = dims;
  j["seeds"] = {{"init", cfg.seed_init}, {"data", cfg.seed_data}, {"dropout", cfg.seed_dropout}};
  j["out_dir"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

SomDims resolved_grid_table(const RunConfig& cfg) {
  SomDims dims = default_som_dims(cfg.arch.widths);
  for (const auto& [width, mn] : cfg.grid_overrides.lookup)
    dims.add(width, mn.first, mn.second);
  return dims;
}

}  // namespace lgnn
