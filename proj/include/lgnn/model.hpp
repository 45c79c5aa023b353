#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lgnn/layers.hpp"
#include "lgnn/optim.hpp"
#include "lgnn/smoothing.hpp"
#include "lgnn/tensor.hpp"

namespace lgnn {

// One registry row. Buffers (batch-norm running statistics) are serialized
// with checkpoints but never optimized, so their grad pointer is null.
template <typename T>
struct ParamEntryT {
  std::string name;
  TensorT<T>* value = nullptr;
  TensorT<T>* grad = nullptr;
  ParamRole role = ParamRole::conv_weight;
  Placement placement = Placement::none;
  bool buffer = false;
};

using ParamEntry = ParamEntryT<float>;

template <typename T>
struct NodeT {
  virtual ~NodeT() = default;
  virtual TensorT<T> forward(const TensorT<T>& x, Mode mode, std::mt19937& rng) = 0;
  virtual TensorT<T> backward(const TensorT<T>& grad_out) = 0;
  virtual void collect(std::vector<ParamEntryT<T>>& out) { (void)out; }
  virtual void zero_grad() {}
};

namespace detail {

template <typename T>
void accumulate(TensorT<T>& acc, const TensorT<T>& g) {
  for (int64_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

}  // namespace detail

template <typename T>
struct ConvNodeT final : NodeT<T> {
  std::string name;
  Placement placement = Placement::none;
  int stride = 1, pad = 1;
  bool has_bias = false;
  TensorT<T> w{{1, 1, 1, 1}}, gw{{1, 1, 1, 1}};
  TensorT<T> b{{1}}, gb{{1}};
  TensorT<T> in_cache{{1}};

  TensorT<T> forward(const TensorT<T>& x, Mode, std::mt19937&) override {
    in_cache = x;
    return conv2d_batch(x, w, has_bias ? &b : nullptr, stride, pad);
  }
  TensorT<T> backward(const TensorT<T>& grad_out) override {
    auto g = conv2d_backward_batch(grad_out, in_cache, w, stride, pad);
    detail::accumulate(gw, g.weights);
    if (has_bias) detail::accumulate(gb, g.bias);
    return std::move(g.input);
  }
  void collect(std::vector<ParamEntryT<T>>& out) override {
    out.push_back({name + ".weight", &w, &gw, ParamRole::conv_weight, placement, false});
    if (has_bias)
      out.push_back({name + ".bias", &b, &gb, ParamRole::conv_bias, placement, false});
  }
  void zero_grad() override {
    std::fill(gw.data.begin(), gw.data.end(), T(0));
    std::fill(gb.data.begin(), gb.data.end(), T(0));
  }
};

template <typename T>
struct BnNodeT final : NodeT<T> {
  std::string name;
  BatchNormState<T> st{1};
  BatchNormCache<T> cache;
  TensorT<T> ggamma{{1}}, gbeta{{1}};

  TensorT<T> forward(const TensorT<T>& x, Mode mode, std::mt19937&) override {
    return batchnorm2d(x, st, mode, &cache);
  }
  TensorT<T> backward(const TensorT<T>& grad_out) override {
    auto g = batchnorm2d_backward(grad_out, cache, st);
    detail::accumulate(ggamma, g.gamma);
    detail::accumulate(gbeta, g.beta);
    return std::move(g.input);
  }
  void collect(std::vector<ParamEntryT<T>>& out) override {
    out.push_back({name + ".gamma", &st.gamma, &ggamma, ParamRole::bn, Placement::none, false});
    out.push_back({name + ".beta", &st.beta, &gbeta, ParamRole::bn, Placement::none, false});
    out.push_back({name + ".running_mean", &st.running_mean, nullptr, ParamRole::bn,
                   Placement::none, true});
    out.push_back(
        {name + ".running_var", &st.running_var, nullptr, ParamRole::bn, Placement::none, true});
  }
  void zero_grad() override {
    std::fill(ggamma.data.begin(), ggamma.data.end(), T(0));
    std::fill(gbeta.data.begin(), gbeta.data.end(), T(0));
  }
};

template <typename T>
struct ReluNodeT final : NodeT<T> {
  TensorT<T> in_cache{{1}};
  TensorT<T> forward(const TensorT<T>& x, Mode, std::mt19937&) override {
    in_cache = x;
    return relu(x);
  }
  TensorT<T> backward(const TensorT<T>& grad_out) override {
    return relu_backward(grad_out, in_cache);
  }
};

template <typename T>
struct PoolNodeT final : NodeT<T> {
  int k = 2, stride = 2;
  PoolResult<T> cache{TensorT<T>({1}), {}};
  std::vector<int64_t> in_shape;

  TensorT<T> forward(const TensorT<T>& x, Mode, std::mt19937&) override {
    in_shape = x.shape;
    cache = maxpool2d_batch(x, k, stride);
    return cache.out;
  }
  TensorT<T> backward(const TensorT<T>& grad_out) override {
    return maxpool2d_backward_batch(grad_out, cache.argmax, in_shape);
  }
};

template <typename T>
struct DropoutNodeT final : NodeT<T> {
  double rate = 0.3;
  std::vector<uint8_t> mask;
  bool scaled = false;  // whether the last forward actually dropped

  TensorT<T> forward(const TensorT<T>& x, Mode mode, std::mt19937& rng) override {
    scaled = mode == Mode::train && rate > 0.0;
    return dropout(x, rate, mode, rng, &mask);
  }
  TensorT<T> backward(const TensorT<T>& grad_out) override {
    if (!scaled) return grad_out;
    return dropout_backward(grad_out, mask, rate);
  }
};

template <typename T>
struct FlattenNodeT final : NodeT<T> {
  std::vector<int64_t> in_shape;
  TensorT<T> forward(const TensorT<T>& x, Mode, std::mt19937&) override {
    in_shape = x.shape;
    return reshape(x, {x.dim(0), x.size() / x.dim(0)});
  }
  TensorT<T> backward(const TensorT<T>& grad_out) override { return reshape(grad_out, in_shape); }
};

template <typename T>
struct LinearNodeT final : NodeT<T> {
  std::string name;
  TensorT<T> w{{1, 1}}, gw{{1, 1}};
  TensorT<T> b{{1}}, gb{{1}};
  TensorT<T> in_cache{{1}};

  TensorT<T> forward(const TensorT<T>& x, Mode, std::mt19937&) override {
    in_cache = x;
    return linear(x, w, &b);
  }
  TensorT<T> backward(const TensorT<T>& grad_out) override {
    auto g = linear_backward(grad_out, in_cache, w);
    detail::accumulate(gw, g.weights);
    detail::accumulate(gb, g.bias);
    return std::move(g.input);
  }
  void collect(std::vector<ParamEntryT<T>>& out) override {
    out.push_back({name + ".weight", &w, &gw, ParamRole::fc, Placement::none, false});
    out.push_back({name + ".bias", &b, &gb, ParamRole::fc, Placement::none, false});
  }
  void zero_grad() override {
    std::fill(gw.data.begin(), gw.data.end(), T(0));
    std::fill(gb.data.begin(), gb.data.end(), T(0));
  }
};

// main path conv-bn-relu-(dropout)-conv-bn, shortcut identity or 1x1 conv,
// sum then relu
template <typename T>
struct ResBlockNodeT final : NodeT<T> {
  std::string name;
  std::vector<std::unique_ptr<NodeT<T>>> main;
  std::unique_ptr<ConvNodeT<T>> shortcut;  // null means identity
  TensorT<T> sum_cache{{1}};

  TensorT<T> forward(const TensorT<T>& x, Mode mode, std::mt19937& rng) override {
    TensorT<T> h = x;
    for (auto& n : main) h = n->forward(h, mode, rng);
    TensorT<T> s = shortcut ? shortcut->forward(x, mode, rng) : x;
    if (!h.same_shape(s))
      throw ShapeError("residual block " + name + ": branch shapes disagree");
    for (int64_t i = 0; i < h.size(); ++i) h[i] += s[i];
    sum_cache = h;
    return relu(h);
  }
  TensorT<T> backward(const TensorT<T>& grad_out) override {
    TensorT<T> gsum = relu_backward(grad_out, sum_cache);
    TensorT<T> g = gsum;
    for (auto it = main.rbegin(); it != main.rend(); ++it) g = (*it)->backward(g);
    if (shortcut) {
      TensorT<T> gs = shortcut->backward(gsum);
      detail::accumulate(g, gs);
    } else {
      detail::accumulate(g, gsum);
    }
    return g;
  }
  void collect(std::vector<ParamEntryT<T>>& out) override {
    for (auto& n : main) n->collect(out);
    if (shortcut) shortcut->collect(out);
  }
  void zero_grad() override {
    for (auto& n : main) n->zero_grad();
    if (shortcut) shortcut->zero_grad();
  }
};

// ---------------------------------------------------------------------------

struct ArchSpec {
  std::string arch = "mini_vgg";  // mini_vgg | mini_resnet
  std::vector<int64_t> widths = {16, 32, 64};
  int num_classes = 4;
  int input_channels = 3;
  int input_hw = 32;
  double dropout_rate = 0.0;  // used inside residual blocks
  uint64_t seed = 1;
};

template <typename T>
struct ModelGraphT {
  std::string arch;
  int num_classes = 0;
  int input_channels = 3;
  int input_hw = 32;
  std::vector<int64_t> conv_widths;
  SomDims som_dims;
  std::vector<std::unique_ptr<NodeT<T>>> nodes;
  std::mt19937 rng{1};  // dropout stream

  TensorT<T> forward(const TensorT<T>& batch, Mode mode) {
    check_input(batch);
    TensorT<T> x = batch;
    for (auto& n : nodes) x = n->forward(x, mode, rng);
    return x;
  }

  // returns the gradient with respect to the input batch
  TensorT<T> backward(const TensorT<T>& grad_logits) {
    TensorT<T> g = grad_logits;
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void zero_grad() {
    for (auto& n : nodes) n->zero_grad();
  }

  std::vector<ParamEntryT<T>> entries() {
    std::vector<ParamEntryT<T>> out;
    for (auto& n : nodes) n->collect(out);
    return out;
  }

  std::vector<ParamTag> param_tags() {
    std::vector<ParamTag> tags;
    for (const auto& e : entries())
      if (!e.buffer) tags.push_back({e.name, e.role, e.placement});
    return tags;
  }

  std::vector<ParamSlot<T>> optim_slots() {
    std::vector<ParamSlot<T>> slots;
    for (auto& e : entries())
      if (!e.buffer) slots.push_back({e.name, e.value, e.grad});
    return slots;
  }

  int64_t param_count() {
    int64_t total = 0;
    for (const auto& e : entries())
      if (!e.buffer) total += e.value->size();
    return total;
  }

  // indices of top-level conv nodes, in network order
  std::vector<int> conv_node_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < nodes.size(); ++i)
      if (dynamic_cast<const ConvNodeT<T>*>(nodes[i].get())) idx.push_back(static_cast<int>(i));
    return idx;
  }

  // output of nodes[0..node_idx] inclusive
  TensorT<T> activation_at(const TensorT<T>& batch, int node_idx, Mode mode = Mode::eval) {
    check_input(batch);
    if (node_idx < 0 || node_idx >= static_cast<int>(nodes.size()))
      throw ConfigError("activation_at: node index out of range");
    TensorT<T> x = batch;
    for (int i = 0; i <= node_idx; ++i) x = nodes[static_cast<size_t>(i)]->forward(x, mode, rng);
    return x;
  }

  // backpropagates an objective gradient seeded at nodes[node_idx]'s output
  // down to the input batch
  TensorT<T> input_gradient_from(const TensorT<T>& batch, int node_idx,
                                 const TensorT<T>& grad_at_node, Mode mode = Mode::eval) {
    activation_at(batch, node_idx, mode);
    TensorT<T> g = grad_at_node;
    for (int i = node_idx; i >= 0; --i) g = nodes[static_cast<size_t>(i)]->backward(g);
    return g;
  }

 private:
  void check_input(const TensorT<T>& batch) const {
    if (batch.rank() != 4) throw ShapeError("model: batch must be (b,c,h,w)");
    if (batch.dim(1) != input_channels || batch.dim(2) != input_hw || batch.dim(3) != input_hw)
      throw ShapeError("model: batch shape " + batch.shape_str() + " does not match input spec");
  }
};

using ModelGraph = ModelGraphT<float>;

namespace detail {

template <typename T>
void he_fill(TensorT<T>& w, int64_t fan_in, std::mt19937& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w.data) v = static_cast<T>(dist(rng));
}

template <typename T>
std::unique_ptr<ConvNodeT<T>> make_conv(const std::string& name, Placement placement, int64_t cin,
                                        int64_t cout, int k, int pad, bool bias,
                                        std::mt19937& rng) {
  auto node = std::make_unique<ConvNodeT<T>>();
  node->name = name;
  node->placement = placement;
  node->stride = 1;
  node->pad = pad;
  node->has_bias = bias;
  node->w = TensorT<T>({cout, cin, k, k});
  node->gw = TensorT<T>({cout, cin, k, k}, T(0));
  he_fill(node->w, cin * k * k, rng);
  node->b = TensorT<T>({cout}, T(0));
  node->gb = TensorT<T>({cout}, T(0));
  return node;
}

template <typename T>
std::unique_ptr<BnNodeT<T>> make_bn(const std::string& name, int64_t channels) {
  auto node = std::make_unique<BnNodeT<T>>();
  node->name = name;
  node->st = BatchNormState<T>(channels);
  node->ggamma = TensorT<T>({channels}, T(0));
  node->gbeta = TensorT<T>({channels}, T(0));
  return node;
}

}  // namespace detail

// He fan-in initialization from the given seed; convs followed by batch norm
// carry no bias; the 1x1 shortcut conv (no batch norm after it) keeps one.
template <typename T = float>
ModelGraphT<T> build_model(const ArchSpec& spec) {
  if (spec.widths.empty()) throw ConfigError("build_model: need at least one conv width");
  if (spec.num_classes < 2) throw ConfigError("build_model: need at least two classes");
  ModelGraphT<T> m;
  m.arch = spec.arch;
  m.num_classes = spec.num_classes;
  m.input_channels = spec.input_channels;
  m.input_hw = spec.input_hw;
  m.conv_widths = spec.widths;
  m.som_dims = default_som_dims(spec.widths);
  m.rng.seed(static_cast<uint32_t>(spec.seed * 7919 + 17));
  std::mt19937 init_rng(static_cast<uint32_t>(spec.seed));

  const int nstage = static_cast<int>(spec.widths.size());
  int hw = spec.input_hw;

  if (spec.arch == "mini_vgg") {
    int64_t cin = spec.input_channels;
    for (int i = 0; i < nstage; ++i) {
      const int64_t cout = spec.widths[static_cast<size_t>(i)];
      Placement place = i == 0 ? Placement::first_layer
                               : (i == nstage - 1 ? Placement::fc_adjacent
                                                  : Placement::main_branch);
      const std::string cname = "conv" + std::to_string(i + 1);
      m.nodes.push_back(detail::make_conv<T>(cname, place, cin, cout, 3, 1, false, init_rng));
      m.nodes.push_back(detail::make_bn<T>("bn" + std::to_string(i + 1), cout));
      m.nodes.push_back(std::make_unique<ReluNodeT<T>>());
      auto pool = std::make_unique<PoolNodeT<T>>();
      m.nodes.push_back(std::move(pool));
      cin = cout;
      if (hw % 2 != 0) throw ConfigError("build_model: input extent not divisible by pool chain");
      hw /= 2;
    }
    auto fc = std::make_unique<LinearNodeT<T>>();
    fc->name = "fc";
    const int64_t din = cin * hw * hw;
    fc->w = TensorT<T>({spec.num_classes, din});
    fc->gw = TensorT<T>({spec.num_classes, din}, T(0));
    detail::he_fill(fc->w, din, init_rng);
    fc->b = TensorT<T>({spec.num_classes}, T(0));
    fc->gb = TensorT<T>({spec.num_classes}, T(0));
    m.nodes.push_back(std::make_unique<FlattenNodeT<T>>());
    m.nodes.push_back(std::move(fc));
  } else if (spec.arch == "mini_resnet") {
    const int64_t stem = spec.widths[0];
    m.nodes.push_back(
        detail::make_conv<T>("conv1", Placement::first_layer, spec.input_channels, stem, 3, 1,
                             false, init_rng));
    m.nodes.push_back(detail::make_bn<T>("bn1", stem));
    m.nodes.push_back(std::make_unique<ReluNodeT<T>>());
    int64_t cin = stem;
    for (int i = 1; i < nstage; ++i) {
      const int64_t cout = spec.widths[static_cast<size_t>(i)];
      const std::string bname = "block" + std::to_string(i);
      auto block = std::make_unique<ResBlockNodeT<T>>();
      block->name = bname;
      block->main.push_back(detail::make_conv<T>(bname + ".conv1", Placement::main_branch, cin,
                                                 cout, 3, 1, false, init_rng));
      block->main.push_back(detail::make_bn<T>(bname + ".bn1", cout));
      block->main.push_back(std::make_unique<ReluNodeT<T>>());
      if (spec.dropout_rate > 0.0) {
        auto dn = std::make_unique<DropoutNodeT<T>>();
        dn->rate = spec.dropout_rate;
        block->main.push_back(std::move(dn));
      }
      block->main.push_back(detail::make_conv<T>(bname + ".conv2", Placement::main_branch, cout,
                                                 cout, 3, 1, false, init_rng));
      block->main.push_back(detail::make_bn<T>(bname + ".bn2", cout));
      if (cin != cout)
        block->shortcut = detail::make_conv<T>(bname + ".shortcut", Placement::shortcut, cin,
                                               cout, 1, 0, true, init_rng);
      m.nodes.push_back(std::move(block));
      m.nodes.push_back(std::make_unique<PoolNodeT<T>>());
      cin = cout;
      if (hw % 2 != 0) throw ConfigError("build_model: input extent not divisible by pool chain");
      hw /= 2;
    }
    auto fc = std::make_unique<LinearNodeT<T>>();
    fc->name = "fc";
    const int64_t din = cin * hw * hw;
    fc->w = TensorT<T>({spec.num_classes, din});
    fc->gw = TensorT<T>({spec.num_classes, din}, T(0));
    detail::he_fill(fc->w, din, init_rng);
    fc->b = TensorT<T>({spec.num_classes}, T(0));
    fc->gb = TensorT<T>({spec.num_classes}, T(0));
    m.nodes.push_back(std::make_unique<FlattenNodeT<T>>());
    m.nodes.push_back(std::move(fc));
  } else {
    throw ConfigError("build_model: unknown architecture " + spec.arch);
  }
  return m;
}

// Overload for an externally supplied grid table; every conv width must have
// an entry.
template <typename T = float>
ModelGraphT<T> build_model(const ArchSpec& spec, const SomDims& dims) {
  auto m = build_model<T>(spec);
  for (int64_t w : m.conv_widths) grid_shape(dims, w);
  m.som_dims = dims;
  return m;
}

// Checkpoint round trips are byte-exact; format documented in README.
void save_checkpoint(ModelGraph& model, const std::string& path);
void load_checkpoint(ModelGraph& model, const std::string& path);

}  // namespace lgnn
