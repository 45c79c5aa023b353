#include "lgnn/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "lgnn/errors.hpp"

namespace lgnn {

namespace {

// distinct deterministic shuffle seed per (data seed, epoch)
uint64_t epoch_stream_seed(uint64_t data_seed, int epoch) {
  return data_seed * 6364136223846793005ULL + 1442695040888963407ULL +
         static_cast<uint64_t>(epoch);
}

std::string metrics_row(const EpochRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.6e,%.6e,%.6e,%.6e\n", r.epoch, r.lr, r.sigma,
                r.train_loss, r.test_acc);
  return buf;
}

}  // namespace

Dataset load_split(const RunConfig& cfg, const std::string& split) {
  if (split != "train" && split != "test")
    throw ConfigError("load_split: split must be train or test");
  if (cfg.data_source == "synthetic") {
    const int per_class = split == "train" ? cfg.train_per_class : cfg.test_per_class;
    const uint64_t seed = cfg.seed_data * 2 + (split == "train" ? 1 : 2);
    Dataset ds = synthetic_blobs(cfg.classes, per_class, seed);
    ds.split = split;
    return ds;
  }
  return load_cifar100(cfg.data_dir + "/" + split + ".bin", split);
}

void smooth_selected(ModelGraph& model, const std::vector<std::string>& targets,
                     const NeighborhoodKernel& kernel) {
  if (targets.empty()) return;
  std::unordered_set<std::string> wanted(targets.begin(), targets.end());
  for (auto& e : model.entries())
    if (!e.buffer && wanted.count(e.name))
      *e.grad = smooth_gradients(*e.grad, kernel, model.som_dims);
}

double evaluate(ModelGraph& model, const Dataset& ds, const Normalization* norm,
                int batch_size) {
  if (ds.size() == 0) throw ConfigError("evaluate: empty dataset");
  BatchOptions opt;
  opt.batch_size = batch_size;
  opt.norm = norm;
  BatchStream stream(ds, opt);
  Tensor images{{1}};
  std::vector<int> labels;
  int64_t correct = 0, total = 0;
  while (stream.next(images, labels)) {
    Tensor logits = model.forward(images, Mode::eval);
    const int64_t b = logits.dim(0), c = logits.dim(1);
    for (int64_t r = 0; r < b; ++r) {
      int64_t best = 0;
      for (int64_t k = 1; k < c; ++k)
        if (logits[r * c + k] > logits[r * c + best]) best = k;
      if (best == labels[static_cast<size_t>(r)]) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

TrainResult train(const RunConfig& cfg) {
  const auto sched = make_lr_schedule(cfg.lr, cfg.lr_milestones, cfg.lr_factor);
  gaussian_kernel<float>(cfg.policy.kernel_size, cfg.policy.base_sigma);  // validate early

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  TrainResult result;
  result.run_dir = cfg.out_dir;

  {
    std::ofstream out(cfg.out_dir + "/config.json", std::ios::binary);
    if (!out) throw FormatError("train: cannot write " + cfg.out_dir + "/config.json");
    out << config_to_json(cfg);
  }

  ModelGraph model = build_model(cfg.arch, resolved_grid_table(cfg));
  model.rng.seed(static_cast<uint32_t>(cfg.seed_dropout * 7919 + 17));

  result.init_ckpt = cfg.out_dir + "/ckpt_init.bin";
  save_checkpoint(model, result.init_ckpt);

  std::ofstream metrics(cfg.out_dir + "/metrics.csv", std::ios::binary);
  if (!metrics) throw FormatError("train: cannot write " + cfg.out_dir + "/metrics.csv");
  metrics << "epoch,lr,sigma,train_loss,test_acc\n";
  metrics.flush();
  if (cfg.epochs == 0) return result;

  Dataset train_ds = load_split(cfg, "train");
  Dataset test_ds = load_split(cfg, "test");
  Normalization stats;
  const Normalization* norm = nullptr;
  if (cfg.normalize) {
    stats = channel_stats(train_ds);
    norm = &stats;
  }

  auto slots = model.optim_slots();
  SgdState opt_state;
  opt_state.momentum = cfg.momentum;
  opt_state.weight_decay = cfg.weight_decay;
  const auto targets = select_targets(cfg.policy, model.param_tags());

  result.best_acc = -1.0;
  result.best_ckpt = cfg.out_dir + "/ckpt_best.bin";
  result.final_ckpt = cfg.out_dir + "/ckpt_final.bin";

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(sched, epoch);
    opt_state.lr = static_cast<float>(lr);
    const double sigma = sigma_at_epoch(cfg.policy, epoch, cfg.epochs);
    const auto kernel = gaussian_kernel<float>(cfg.policy.kernel_size, sigma);

    BatchOptions bopt;
    bopt.batch_size = cfg.batch_size;
    bopt.shuffle = true;
    bopt.seed = epoch_stream_seed(cfg.seed_data, epoch);
    bopt.augment = cfg.augment;
    bopt.norm = norm;
    BatchStream stream(train_ds, bopt);

    Tensor images{{1}};
    std::vector<int> labels;
    double loss_sum = 0;
    int64_t seen = 0;
    while (stream.next(images, labels)) {
      model.zero_grad();
      Tensor logits = model.forward(images, Mode::train);
      auto sce = softmax_cross_entropy(logits, labels);
      model.backward(sce.grad_logits);
      smooth_selected(model, targets, kernel);
      sgd_step(opt_state, slots);
      loss_sum += sce.loss * static_cast<double>(labels.size());
      seen += static_cast<int64_t>(labels.size());
    }

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.sigma = sigma;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.test_acc = evaluate(model, test_ds, norm);
    result.rows.push_back(row);
    metrics << metrics_row(row);
    metrics.flush();

    if (row.test_acc > result.best_acc) {
      result.best_acc = row.test_acc;
      save_checkpoint(model, result.best_ckpt);
    }
  }
  save_checkpoint(model, result.final_ckpt);
  return result;
}

double time_smoothing_pass(ModelGraph& model, const LgnnPolicy& policy, int iters) {
  if (iters < 1) throw ConfigError("time_smoothing_pass: iters must be positive");
  const auto targets = select_targets(policy, model.param_tags());
  const auto kernel = gaussian_kernel<float>(policy.kernel_size, policy.base_sigma);
  for (int i = 0; i < 3; ++i) smooth_selected(model, targets, kernel);  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) smooth_selected(model, targets, kernel);
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / iters;
}

}  // namespace lgnn
