#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "lgnn/analysis.hpp"
#include "lgnn/som.hpp"
#include "lgnn/trainer.hpp"

namespace py = pybind11;

namespace {

lgnn::Tensor tensor_from(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  lgnn::Tensor t(shape);
  std::copy_n(a.data(), t.size(), t.data.begin());
  return t;
}

py::array_t<float> array_from(const lgnn::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> a(shape);
  std::copy_n(t.data.begin(), t.size(), a.mutable_data());
  return a;
}

py::dict row_dict(const lgnn::EpochRow& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["lr"] = r.lr;
  d["sigma"] = r.sigma;
  d["train_loss"] = r.train_loss;
  d["test_acc"] = r.test_acc;
  return d;
}

}  // namespace

PYBIND11_MODULE(_lgnn, m) {
  m.doc() = "CNN training toolkit with neighborhood gradient smoothing";

  m.def("closest_square_dims", [](int64_t c) { return lgnn::closest_square_dims(c); },
        py::arg("c_out"), "Grid shape (m, n) with n the largest divisor <= sqrt(c_out)");

  m.def(
      "gaussian_kernel",
      [](int size, double sigma) {
        const auto k = lgnn::gaussian_kernel<float>(size, sigma);
        py::array_t<float> taps({static_cast<py::ssize_t>(size), static_cast<py::ssize_t>(size)});
        std::copy_n(k.taps.data.begin(), k.taps.size(), taps.mutable_data());
        return py::make_tuple(taps, k.identity);
      },
      py::arg("size"), py::arg("sigma"),
      "Sum-normalized taps and whether sigma collapsed to the identity");

  m.def(
      "sigma_at_epoch",
      [](const std::string& mode, double base, int epoch, int total) {
        lgnn::LgnnPolicy p;
        p.sigma_mode = lgnn::sigma_mode_from_string(mode);
        p.base_sigma = base;
        return lgnn::sigma_at_epoch(p, epoch, total);
      },
      py::arg("mode"), py::arg("base_sigma"), py::arg("epoch"), py::arg("total_epochs"));

  m.def(
      "smooth_gradients",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& grad, double sigma,
         int kernel_size, py::object grid) {
        auto g = tensor_from(grad);
        if (g.rank() != 4) throw lgnn::ShapeError("smooth_gradients: need (c_out, c_in, s, s)");
        lgnn::SomDims dims;
        if (grid.is_none()) {
          dims = lgnn::default_som_dims({g.dim(0)});
        } else {
          auto mn = grid.cast<std::pair<int, int>>();
          dims.add(g.dim(0), mn.first, mn.second);
        }
        const auto kernel = lgnn::gaussian_kernel<float>(kernel_size, sigma);
        return array_from(lgnn::smooth_gradients(g, kernel, dims));
      },
      py::arg("grad"), py::arg("sigma"), py::arg("kernel_size") = 3,
      py::arg("grid") = py::none(),
      "Kernel pass over the filter grid with edge replication");

  m.def(
      "gram_matrix",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& w, bool cosine) {
        return array_from(lgnn::gram_matrix(tensor_from(w), cosine));
      },
      py::arg("weights"), py::arg("cosine") = true);

  m.def(
      "neighbor_similarity",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& w, int mm, int nn) {
        return lgnn::neighbor_similarity_grid(tensor_from(w), mm, nn);
      },
      py::arg("weights"), py::arg("m"), py::arg("n"));

  m.def(
      "magnitude_stats",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& w) {
        const auto st = lgnn::magnitude_stats_of(tensor_from(w));
        py::dict d;
        d["min"] = st.min;
        d["max"] = st.max;
        d["stddev_of_log"] = st.stddev_of_log;
        return d;
      },
      py::arg("weights"));

  m.def(
      "synthetic_blobs",
      [](int classes, int per_class, uint64_t seed) {
        const auto ds = lgnn::synthetic_blobs(classes, per_class, seed);
        return py::make_tuple(array_from(ds.images), ds.fine_labels, ds.coarse_labels);
      },
      py::arg("classes"), py::arg("per_class"), py::arg("seed"));

  m.def(
      "train",
      [](const std::string& config_json) {
        const auto res = lgnn::train(lgnn::parse_config(config_json));
        py::dict d;
        d["run_dir"] = res.run_dir;
        d["best_acc"] = res.best_acc;
        py::list rows;
        for (const auto& r : res.rows) rows.append(row_dict(r));
        d["rows"] = rows;
        d["init_ckpt"] = res.init_ckpt;
        d["best_ckpt"] = res.best_ckpt;
        d["final_ckpt"] = res.final_ckpt;
        return d;
      },
      py::arg("config_json"), "Run training from a json config string");

  m.def(
      "evaluate",
      [](const std::string& ckpt, const std::string& split) {
        namespace fs = std::filesystem;
        const fs::path cfg_path = fs::path(ckpt).parent_path() / "config.json";
        if (!fs::exists(cfg_path))
          throw lgnn::FormatError("no config.json beside " + ckpt);
        const auto cfg = lgnn::load_config(cfg_path.string());
        auto model = lgnn::build_model(cfg.arch, lgnn::resolved_grid_table(cfg));
        lgnn::load_checkpoint(model, ckpt);
        lgnn::Normalization stats;
        const lgnn::Normalization* norm = nullptr;
        if (cfg.normalize) {
          auto train_ds = lgnn::load_split(cfg, "train");
          stats = lgnn::channel_stats(train_ds);
          norm = &stats;
        }
        auto ds = lgnn::load_split(cfg, split);
        return lgnn::evaluate(model, ds, norm);
      },
      py::arg("ckpt"), py::arg("split") = "test",
      "Top-1 accuracy of a checkpoint inside its run directory");

  m.def(
      "som_demo",
      [](int epochs, uint64_t seed) {
        std::mt19937_64 rng(seed * 1000003ULL + 7);
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        std::vector<std::vector<double>> data(512, std::vector<double>(2));
        for (auto& p : data) {
          p[0] = dist(rng);
          p[1] = dist(rng);
        }
        auto grid = lgnn::make_som_grid(8, 8, 2, seed);
        lgnn::train_som(grid, data, epochs, lgnn::SomSchedule{}, seed + 1);
        py::dict d;
        d["neighbor"] = lgnn::mean_neighbor_distance(grid);
        d["pair"] = lgnn::mean_pair_distance(grid);
        d["ratio"] = lgnn::mean_neighbor_distance(grid) / lgnn::mean_pair_distance(grid);
        return d;
      },
      py::arg("epochs") = 30, py::arg("seed") = 1,
      "Train the reference map on uniform 2-d data and report distances");
}
