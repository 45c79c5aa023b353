#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lgnn/analysis.hpp"
#include "lgnn/artifacts.hpp"
#include "lgnn/errors.hpp"
#include "lgnn/som.hpp"
#include "lgnn/trainer.hpp"

namespace {

namespace fs = std::filesystem;

// CIFAR-100 fine labels in index order
const char* kFineLabels[100] = {
    "apple",      "aquarium_fish", "baby",       "bear",       "beaver",     "bed",
    "bee",        "beetle",        "bicycle",    "bottle",     "bowl",       "boy",
    "bridge",     "bus",           "butterfly",  "camel",      "can",        "castle",
    "caterpillar","cattle",        "chair",      "chimpanzee", "clock",      "cloud",
    "cockroach",  "couch",         "crab",       "crocodile",  "cup",        "dinosaur",
    "dolphin",    "elephant",      "flatfish",   "forest",     "fox",        "girl",
    "hamster",    "house",         "kangaroo",   "keyboard",   "lamp",       "lawn_mower",
    "leopard",    "lion",          "lizard",     "lobster",    "man",        "maple_tree",
    "motorcycle", "mountain",      "mouse",      "mushroom",   "oak_tree",   "orange",
    "orchid",     "otter",         "palm_tree",  "pear",       "pickup_truck","pine_tree",
    "plain",      "plate",         "poppy",      "porcupine",  "possum",     "rabbit",
    "raccoon",    "ray",           "road",       "rocket",     "rose",       "sea",
    "seal",       "shark",         "shrew",      "skunk",      "skyscraper", "snail",
    "snake",      "spider",        "squirrel",   "streetcar",  "sunflower",  "sweet_pepper",
    "table",      "tank",          "telephone",  "television", "tiger",      "tractor",
    "train",      "trout",         "tulip",      "turtle",     "wardrobe",   "whale",
    "willow_tree","wolf",          "woman",      "worm"};

int class_index_of(const std::string& name, int num_classes) {
  try {
    size_t used = 0;
    const int k = std::stoi(name, &used);
    if (used == name.size()) {
      if (k < 0 || k >= num_classes) throw lgnn::ConfigError("class index out of range: " + name);
      return k;
    }
  } catch (const lgnn::ConfigError&) {
    throw;
  } catch (const std::exception&) {
  }
  for (int i = 0; i < 100; ++i)
    if (name == kFineLabels[i]) {
      if (i >= num_classes)
        throw lgnn::ConfigError("class " + name + " is outside this run's label range");
      return i;
    }
  throw lgnn::ConfigError("unknown class name: " + name);
}

// Run-directory convention: the checkpoint sits next to the config.json that
// produced it, so analyses and evaluation rebuild the exact architecture.
lgnn::RunConfig config_beside(const std::string& ckpt) {
  const fs::path dir = fs::path(ckpt).parent_path();
  const fs::path cfg = dir / "config.json";
  if (!fs::exists(cfg))
    throw lgnn::FormatError("no config.json beside " + ckpt +
                            "; checkpoints are read from their run directory");
  return lgnn::load_config(cfg.string());
}

lgnn::ModelGraph model_from(const lgnn::RunConfig& cfg, const std::string& ckpt) {
  auto model = lgnn::build_model(cfg.arch, lgnn::resolved_grid_table(cfg));
  lgnn::load_checkpoint(model, ckpt);
  return model;
}

struct ConvWeightRef {
  std::string layer;
  lgnn::Tensor* w = nullptr;
};

std::vector<ConvWeightRef> conv_weights(lgnn::ModelGraph& model) {
  std::vector<ConvWeightRef> out;
  for (auto& e : model.entries())
    if (!e.buffer && e.role == lgnn::ParamRole::conv_weight) {
      std::string layer = e.name;
      const auto dot = layer.rfind(".weight");
      if (dot != std::string::npos) layer.resize(dot);
      out.push_back({layer, e.value});
    }
  return out;
}

ConvWeightRef weight_named(lgnn::ModelGraph& model, const std::string& layer) {
  auto all = conv_weights(model);
  if (layer.empty()) return all.back();
  for (auto& r : all)
    if (r.layer == layer) return r;
  std::string names;
  for (auto& r : all) names += " " + r.layer;
  throw lgnn::ConfigError("no conv layer named " + layer + "; available:" + names);
}

// index among the graph's top-level conv nodes, for activation analyses
int conv_index_named(lgnn::ModelGraph& model, const std::string& layer) {
  const int count = static_cast<int>(model.conv_node_indices().size());
  if (layer.empty()) return count - 1;
  std::string names;
  for (int i = 0; i < count; ++i) {
    const std::string& name = lgnn::conv_at(model, i).name;
    if (name == layer) return i;
    names += " " + name;
  }
  throw lgnn::ConfigError("no activation-level conv named " + layer + "; available:" + names);
}

void announce(const std::string& path) { std::printf("wrote %s\n", path.c_str()); }

int run_train(const std::string& config_path) {
  auto cfg = lgnn::load_config(config_path);
  auto res = lgnn::train(cfg);
  std::printf("run directory %s\n", res.run_dir.c_str());
  if (!res.rows.empty()) {
    std::printf("best test accuracy %.6f\n", res.best_acc);
    std::printf("final test accuracy %.6f\n", res.rows.back().test_acc);
  }
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split) {
  auto cfg = config_beside(ckpt);
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  auto model = model_from(cfg, ckpt);
  lgnn::Normalization stats;
  const lgnn::Normalization* norm = nullptr;
  if (cfg.normalize) {
    auto train_ds = lgnn::load_split(cfg, "train");
    stats = lgnn::channel_stats(train_ds);
    norm = &stats;
  }
  auto ds = lgnn::load_split(cfg, split);
  std::printf("accuracy %.6f\n", lgnn::evaluate(model, ds, norm));
  return 0;
}

// gathers the test images of one class, normalized the way training saw them
lgnn::Tensor class_images(const lgnn::RunConfig& cfg, int klass) {
  auto ds = lgnn::load_split(cfg, "test");
  std::vector<int64_t> keep;
  for (int64_t i = 0; i < ds.size(); ++i)
    if (ds.fine_labels[static_cast<size_t>(i)] == klass) keep.push_back(i);
  if (keep.empty())
    throw lgnn::ConfigError("test split has no images of class " + std::to_string(klass));
  const int64_t px = 3 * 32 * 32;
  lgnn::Tensor out({static_cast<int64_t>(keep.size()), 3, 32, 32});
  for (size_t r = 0; r < keep.size(); ++r)
    std::copy_n(ds.images.data.begin() + keep[r] * px, px, out.data.begin() + r * px);
  if (cfg.normalize) {
    auto train_ds = lgnn::load_split(cfg, "train");
    const auto stats = lgnn::channel_stats(train_ds);
    for (int64_t i = 0; i < out.size(); ++i) {
      const int c = static_cast<int>(i / (32 * 32) % 3);
      out[i] = static_cast<float>((out[i] - stats.mean[c]) / stats.stddev[c]);
    }
  }
  return out;
}

int run_analyze(const std::string& sub, const std::string& ckpt, const std::string& layer,
                const std::vector<int>& rows, const std::string& klass, std::string out_dir,
                bool pgm) {
  auto cfg = config_beside(ckpt);
  auto model = model_from(cfg, ckpt);
  if (out_dir.empty()) out_dir = fs::path(ckpt).parent_path().string();
  fs::create_directories(out_dir);

  if (sub == "gram") {
    auto ref = weight_named(model, layer);
    auto g = lgnn::gram_matrix(*ref.w);
    const auto [m, n] = lgnn::grid_shape(model.som_dims, ref.w->dim(0));
    for (int r : rows) {
      if (r < 0 || r >= ref.w->dim(0))
        throw lgnn::ConfigError("gram row out of range: " + std::to_string(r));
      lgnn::HeatMap hm;
      hm.layer = ref.layer;
      hm.kind = "gram_row";
      hm.row = r;
      hm.grid = lgnn::Tensor({m, n});
      for (int64_t j = 0; j < ref.w->dim(0); ++j) hm.grid[j] = g(r, j);
      const std::string stem =
          out_dir + "/gram_" + ref.layer + "_row" + std::to_string(r);
      lgnn::save_heatmap_csv(hm, stem + ".csv");
      announce(stem + ".csv");
      if (pgm) {
        lgnn::save_heatmap_pgm(hm, stem + ".pgm");
        announce(stem + ".pgm");
      }
    }
    return 0;
  }
  if (sub == "neighbors") {
    const std::string path = out_dir + "/neighbors.csv";
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw lgnn::FormatError("cannot write " + path);
    std::fprintf(f, "layer,neighbor_similarity\n");
    for (auto& r : conv_weights(model)) {
      const auto [m, n] = lgnn::grid_shape(model.som_dims, r.w->dim(0));
      std::fprintf(f, "%s,%.6e\n", r.layer.c_str(), lgnn::neighbor_similarity_grid(*r.w, m, n));
    }
    std::fclose(f);
    announce(path);
    return 0;
  }
  if (sub == "magnitudes") {
    auto ref = weight_named(model, layer);
    auto st = lgnn::magnitude_stats_of(*ref.w);
    const std::string path = out_dir + "/magnitudes_" + ref.layer + ".csv";
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw lgnn::FormatError("cannot write " + path);
    std::fprintf(f, "min,max,stddev_of_log\n%.6e,%.6e,%.6e\n", st.min, st.max, st.stddev_of_log);
    std::fclose(f);
    announce(path);
    return 0;
  }
  if (sub == "activations") {
    const int k = class_index_of(klass.empty() ? "0" : klass, cfg.arch.num_classes);
    const int idx = conv_index_named(model, layer);
    auto hm = lgnn::class_activation_map(model, class_images(cfg, k), idx);
    const std::string stem = out_dir + "/activations_" + hm.layer + "_class" + std::to_string(k);
    lgnn::save_heatmap_csv(hm, stem + ".csv");
    announce(stem + ".csv");
    if (pgm) {
      lgnn::save_heatmap_pgm(hm, stem + ".pgm");
      announce(stem + ".pgm");
    }
    return 0;
  }
  if (sub == "maximize") {
    const int idx = conv_index_named(model, layer);
    for (int ch : rows) {
      auto res = lgnn::activation_maximization(model, idx, ch, 200, 0.05, cfg.seed_init);
      const std::string path = out_dir + "/maximize_" + lgnn::conv_at(model, idx).name + "_ch" +
                               std::to_string(ch) + ".ppm";
      lgnn::save_ppm(res.image, path);
      announce(path);
      std::printf("channel %d activation %.6e monotone %d\n", ch, res.activation,
                  res.monotone ? 1 : 0);
    }
    return 0;
  }
  if (sub == "filters") {
    const std::string path = out_dir + "/filters.ppm";
    lgnn::export_first_layer(model, path);
    announce(path);
    return 0;
  }
  throw lgnn::ConfigError("unknown analyze subcommand: " + sub);
}

int run_som_demo(int epochs, uint64_t seed) {
  std::mt19937_64 rng(seed * 1000003ULL + 7);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<std::vector<double>> data(512, std::vector<double>(2));
  for (auto& p : data) {
    p[0] = dist(rng);
    p[1] = dist(rng);
  }
  auto grid = lgnn::make_som_grid(8, 8, 2, seed);
  lgnn::train_som(grid, data, epochs, lgnn::SomSchedule{}, seed + 1);
  const double nb = lgnn::mean_neighbor_distance(grid);
  const double pair = lgnn::mean_pair_distance(grid);
  std::printf("som 8x8 on 512 uniform points: neighbor %.6f pair %.6f ratio %.6f\n", nb, pair,
              nb / pair);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CNN training toolkit with neighborhood gradient smoothing"};
  app.require_subcommand(1);

  std::string config_path, ckpt, data_dir, split = "test", layer, klass, out_dir;
  std::vector<int> rows{0};
  bool pgm = false;
  int epochs = 30;
  uint64_t seed = 1;

  auto* tr = app.add_subcommand("train", "train a model from a config file");
  tr->add_option("--config", config_path, "run config (json)")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "checkpoint inside its run directory")->required();
  ev->add_option("--data", data_dir, "override the config's data directory");
  ev->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* an = app.add_subcommand("analyze", "export analyses for a checkpoint");
  an->require_subcommand(1);
  std::vector<CLI::App*> subs;
  for (const char* name : {"gram", "neighbors", "magnitudes", "activations", "maximize",
                           "filters"})
    subs.push_back(an->add_subcommand(name));
  for (auto* s : subs) {
    s->add_option("--ckpt", ckpt, "checkpoint inside its run directory")->required();
    s->add_option("--layer", layer, "conv layer name (default: last)");
    s->add_option("--rows", rows, "gram rows / maximize channels")->delimiter(',');
    s->add_option("--class", klass, "class index or CIFAR-100 fine label name");
    s->add_option("--out", out_dir, "output directory (default: run directory)");
    s->add_flag("--pgm", pgm, "also render heat maps as pgm images");
  }

  auto* sd = app.add_subcommand("som-demo", "train a reference map on uniform 2-d data");
  sd->add_option("--epochs", epochs, "training epochs");
  sd->add_option("--seed", seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tr) return run_train(config_path);
    if (*ev) return run_eval(ckpt, data_dir, split);
    if (*an) {
      for (size_t i = 0; i < subs.size(); ++i)
        if (*subs[i]) return run_analyze(subs[i]->get_name(), ckpt, layer, rows, klass, out_dir,
                                         pgm);
    }
    if (*sd) return run_som_demo(epochs, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
