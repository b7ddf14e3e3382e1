#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "epg/autodiff.hpp"
#include "epg/common.hpp"

namespace epg::net {

enum class Mode { Train, Eval };

// Architecture knobs. Defaults are the full published structure: width-32
// filters, 16 starting filters doubled every four blocks, stride 2 in every
// other block, 15 pre-activation residual blocks.
struct NetConfig {
  int64_t input_len = 2560;
  int filter_width = 32;
  int base_filters = 16;
  int n_blocks = 15;
  double dropout_rate = 0.25;
  std::vector<int> block_strides = {1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1};
  std::vector<int> block_factors = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3};
  int n_classes = 2;
  bool use_batchnorm = true;

  // Small architecture for desk-scale training runs.
  static NetConfig toy() {
    NetConfig c;
    c.base_filters = 8;
    c.n_blocks = 5;
    c.block_strides = {1, 2, 1, 2, 1};
    c.block_factors = {0, 0, 0, 0, 1};
    return c;
  }

  int filters_in_block(int b) const { return base_filters * (1 << block_factors[b]); }
  void validate() const;  // throws std::invalid_argument naming the failing row
};

struct LayerRow {
  std::string name;
  int filter_width = 0;
  int filters = 0;
  int stride = 0;
  int factor = 0;
  int64_t out_len = 0;
  int64_t out_channels = 0;
};

template <typename T>
struct BatchNormT {
  ad::ParamT<T> gamma, beta;
  ad::TensorT<T> running_mean, running_var;
  bool present = false;
};

template <typename T>
struct BlockT {
  bool leading_preact = true;  // block 0 omits the leading BN -> ReLU
  int stride = 1;
  BatchNormT<T> bn1, bn2;
  ad::ParamT<T> conv1_kernel, conv1_bias, conv2_kernel, conv2_bias;
};

// The residual classifier: initial conv, pre-activation residual blocks with
// max-pooling shortcuts (zero-padded channels on doubling), flatten, dense.
template <typename T>
class ModelT {
 public:
  NetConfig config;
  Mode mode = Mode::Train;
  uint64_t dropout_seed = 0;

  static ModelT build(const NetConfig& config, uint64_t init_seed = 0);

  // Forward pass to logits; `step` keys the dropout masks in training mode.
  ad::NodePtr<T> forward_logits(const ad::TensorT<T>& batch, Mode mode, uint64_t step = 0);

  // Softmax probabilities [B, n_classes]. Uses an inference scope in eval
  // mode so no graph is retained.
  ad::TensorT<T> forward_probs(const ad::TensorT<T>& batch, uint64_t step = 0);

  std::vector<ad::ParamT<T>*> params();
  std::vector<ad::NamedTensor> state();  // parameters plus running statistics
  void load_state(const std::vector<ad::NamedTensor>& tensors);

  int count_conv_layers() const { return 1 + 2 * config.n_blocks; }
  std::vector<LayerRow> describe() const;

  ad::ParamT<T> conv0_kernel, conv0_bias;
  std::vector<BlockT<T>> blocks;
  ad::ParamT<T> dense_weights, dense_bias;

 private:
  ad::NodePtr<T> apply_bn_relu(const ad::NodePtr<T>& x, BatchNormT<T>& bn, bool training);
};

using Model = ModelT<float>;

void save_model(ModelT<float>& model, const std::filesystem::path& path);
void load_model(ModelT<float>& model, const std::filesystem::path& path);

// Layer table as JSON / CSV text (the `describe` interface).
std::string describe_json(const std::vector<LayerRow>& rows);
std::string describe_csv(const std::vector<LayerRow>& rows);

// ---- implementation ----

template <typename T>
ModelT<T> ModelT<T>::build(const NetConfig& config, uint64_t init_seed) {
  config.validate();
  ModelT<T> model;
  model.config = config;
  model.dropout_seed = mix_key(init_seed, 0x64726f70ULL);
  Rng rng(mix_key(init_seed, 0x696e6974ULL));

  auto he_tensor = [&rng](std::vector<int64_t> shape, int64_t fan_in) {
    ad::TensorT<T> t(shape);
    double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * std_dev);
    return t;
  };
  auto make_bn = [](const std::string& prefix, int64_t channels) {
    BatchNormT<T> bn;
    bn.present = true;
    bn.gamma = ad::ParamT<T>::make(prefix + ".gamma", ad::TensorT<T>({channels}, T(1)));
    bn.beta = ad::ParamT<T>::make(prefix + ".beta", ad::TensorT<T>({channels}, T(0)));
    bn.running_mean = ad::TensorT<T>({channels}, T(0));
    bn.running_var = ad::TensorT<T>({channels}, T(1));
    return bn;
  };

  const int64_t width = config.filter_width;
  const int64_t f0 = config.filters_in_block(0);
  model.conv0_kernel =
      ad::ParamT<T>::make("conv0.kernel", he_tensor({width, 1, f0}, width * 1));
  model.conv0_bias = ad::ParamT<T>::make("conv0.bias", ad::TensorT<T>({f0}, T(0)));

  int64_t in_ch = f0;
  for (int b = 0; b < config.n_blocks; ++b) {
    BlockT<T> block;
    block.leading_preact = (b != 0);
    block.stride = config.block_strides[b];
    const int64_t out_ch = config.filters_in_block(b);
    const std::string prefix = "block" + std::to_string(b);
    if (config.use_batchnorm) {
      if (block.leading_preact) block.bn1 = make_bn(prefix + ".bn1", in_ch);
      block.bn2 = make_bn(prefix + ".bn2", out_ch);
    }
    block.conv1_kernel =
        ad::ParamT<T>::make(prefix + ".conv1.kernel", he_tensor({width, in_ch, out_ch}, width * in_ch));
    block.conv1_bias = ad::ParamT<T>::make(prefix + ".conv1.bias", ad::TensorT<T>({out_ch}, T(0)));
    block.conv2_kernel =
        ad::ParamT<T>::make(prefix + ".conv2.kernel", he_tensor({width, out_ch, out_ch}, width * out_ch));
    block.conv2_bias = ad::ParamT<T>::make(prefix + ".conv2.bias", ad::TensorT<T>({out_ch}, T(0)));
    model.blocks.push_back(std::move(block));
    in_ch = out_ch;
  }

  int64_t out_len = config.input_len;
  for (int b = 0; b < config.n_blocks; ++b)
    out_len = (out_len + config.block_strides[b] - 1) / config.block_strides[b];
  const int64_t features = out_len * in_ch;
  // The classifier starts at zero: the max-pool shortcuts leave the flattened
  // features with a sizable mean, and a random readout of that mean would
  // give the fresh model an arbitrary class preference.
  model.dense_weights = ad::ParamT<T>::make(
      "dense.weights", ad::TensorT<T>({features, config.n_classes}, T(0)));
  model.dense_bias =
      ad::ParamT<T>::make("dense.bias", ad::TensorT<T>({config.n_classes}, T(0)));
  return model;
}

template <typename T>
ad::NodePtr<T> ModelT<T>::apply_bn_relu(const ad::NodePtr<T>& x, BatchNormT<T>& bn, bool training) {
  ad::NodePtr<T> h = x;
  if (bn.present)
    h = ad::batchnorm1d<T>(h, bn.gamma.node, bn.beta.node, &bn.running_mean, &bn.running_var, 0.1,
                           1e-5, training);
  return ad::relu<T>(h);
}

template <typename T>
ad::NodePtr<T> ModelT<T>::forward_logits(const ad::TensorT<T>& batch, Mode mode, uint64_t step) {
  if (batch.shape.size() != 3 || batch.dim(1) != config.input_len || batch.dim(2) != 1)
    throw std::invalid_argument("forward: batch must be [B, " + std::to_string(config.input_len) +
                                ", 1]");
  const bool training = (mode == Mode::Train);
  // Single-channel input: [B, L, 1] and the engine's channel-major [B, 1, L]
  // share one memory layout, so this is a relabeling, not a copy.
  ad::TensorT<T> relabeled = batch;
  relabeled.shape = {batch.dim(0), 1, config.input_len};
  auto x = ad::make_leaf<T>(std::move(relabeled), false);

  auto h = ad::conv1d<T>(x, conv0_kernel.node, conv0_bias.node, 1);
  for (size_t b = 0; b < blocks.size(); ++b) {
    auto& block = blocks[b];
    const int64_t out_ch = block.conv1_kernel.node->value.dim(2);

    ad::NodePtr<T> path = h;
    if (block.leading_preact) path = apply_bn_relu(path, block.bn1, training);
    path = ad::conv1d<T>(path, block.conv1_kernel.node, block.conv1_bias.node, block.stride);
    path = apply_bn_relu(path, block.bn2, training);
    if (config.dropout_rate > 0.0) {
      uint64_t key = mix_key(dropout_seed, step, static_cast<uint64_t>(b));
      path = ad::dropout<T>(path, config.dropout_rate, training, key);
    }
    path = ad::conv1d<T>(path, block.conv2_kernel.node, block.conv2_bias.node, 1);

    ad::NodePtr<T> shortcut = h;
    if (block.stride > 1) shortcut = ad::maxpool1d<T>(shortcut, block.stride, block.stride);
    if (shortcut->value.dim(1) < out_ch) shortcut = ad::pad_channels<T>(shortcut, out_ch);
    h = ad::add<T>(path, shortcut);
  }

  const int64_t B = h->value.dim(0);
  const int64_t features = h->value.dim(1) * h->value.dim(2);
  h = ad::reshape<T>(h, {B, features});
  return ad::dense<T>(h, dense_weights.node, dense_bias.node);
}

template <typename T>
ad::TensorT<T> ModelT<T>::forward_probs(const ad::TensorT<T>& batch, uint64_t step) {
  if (mode == Mode::Eval) {
    ad::InferenceScope guard;
    auto logits = forward_logits(batch, Mode::Eval, step);
    return ad::softmax<T>(logits->value);
  }
  auto logits = forward_logits(batch, Mode::Train, step);
  return ad::softmax<T>(logits->value);
}

template <typename T>
std::vector<ad::ParamT<T>*> ModelT<T>::params() {
  std::vector<ad::ParamT<T>*> out;
  out.push_back(&conv0_kernel);
  out.push_back(&conv0_bias);
  for (auto& b : blocks) {
    if (b.bn1.present) {
      out.push_back(&b.bn1.gamma);
      out.push_back(&b.bn1.beta);
    }
    out.push_back(&b.conv1_kernel);
    out.push_back(&b.conv1_bias);
    if (b.bn2.present) {
      out.push_back(&b.bn2.gamma);
      out.push_back(&b.bn2.beta);
    }
    out.push_back(&b.conv2_kernel);
    out.push_back(&b.conv2_bias);
  }
  out.push_back(&dense_weights);
  out.push_back(&dense_bias);
  return out;
}

template <typename T>
std::vector<ad::NamedTensor> ModelT<T>::state() {
  std::vector<ad::NamedTensor> tensors;
  auto push = [&tensors](const std::string& name, const ad::TensorT<T>& t) {
    ad::NamedTensor nt;
    nt.name = name;
    nt.shape = t.shape;
    nt.data.resize(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) nt.data[i] = static_cast<float>(t.data[i]);
    tensors.push_back(std::move(nt));
  };
  for (auto* p : params()) push(p->name, p->node->value);
  for (size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b);
    if (blocks[b].bn1.present) {
      push(prefix + ".bn1.running_mean", blocks[b].bn1.running_mean);
      push(prefix + ".bn1.running_var", blocks[b].bn1.running_var);
    }
    if (blocks[b].bn2.present) {
      push(prefix + ".bn2.running_mean", blocks[b].bn2.running_mean);
      push(prefix + ".bn2.running_var", blocks[b].bn2.running_var);
    }
  }
  return tensors;
}

template <typename T>
void ModelT<T>::load_state(const std::vector<ad::NamedTensor>& tensors) {
  std::map<std::string, const ad::NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;

  auto fill = [&by_name](const std::string& name, ad::TensorT<T>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    const auto& src = *it->second;
    if (src.shape != dst.shape)
      throw std::runtime_error("checkpoint tensor '" + name + "' has mismatched shape");
    for (size_t i = 0; i < src.data.size(); ++i) dst.data[i] = static_cast<T>(src.data[i]);
  };
  for (auto* p : params()) fill(p->name, p->node->value);
  for (size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b);
    if (blocks[b].bn1.present) {
      fill(prefix + ".bn1.running_mean", blocks[b].bn1.running_mean);
      fill(prefix + ".bn1.running_var", blocks[b].bn1.running_var);
    }
    if (blocks[b].bn2.present) {
      fill(prefix + ".bn2.running_mean", blocks[b].bn2.running_mean);
      fill(prefix + ".bn2.running_var", blocks[b].bn2.running_var);
    }
  }
}

template <typename T>
std::vector<LayerRow> ModelT<T>::describe() const {
  std::vector<LayerRow> rows;
  int64_t len = config.input_len;
  rows.push_back({"conv0", config.filter_width, config.filters_in_block(0), 1,
                  config.block_factors.empty() ? 0 : config.block_factors[0], len,
                  config.filters_in_block(0)});
  for (int b = 0; b < config.n_blocks; ++b) {
    int stride = config.block_strides[b];
    len = (len + stride - 1) / stride;
    rows.push_back({"block" + std::to_string(b), config.filter_width, config.filters_in_block(b),
                    stride, config.block_factors[b], len, config.filters_in_block(b)});
  }
  rows.push_back({"dense", 0, 0, 0, 0, static_cast<int64_t>(config.n_classes), 0});
  return rows;
}

}  // namespace epg::net
