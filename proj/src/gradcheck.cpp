#include "epg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "epg/common.hpp"
#include "epg/model.hpp"

namespace epg::ad {

double finite_difference_max_error(const std::vector<NodePtr<double>>& leaves,
                                   const std::function<NodePtr<double>()>& build_loss, double h) {
  auto loss = build_loss();
  backward<double>(loss);

  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    leaf->ensure_grad();
    analytic.push_back(leaf->grad.data);
  }

  double max_err = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& values = leaves[li]->value.data;
    for (size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      double plus = build_loss()->value.data[0];
      values[i] = original - h;
      double minus = build_loss()->value.data[0];
      values[i] = original;
      double fd = (plus - minus) / (2.0 * h);
      double a = analytic[li][i];
      double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

namespace {

TensorT<double> random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  TensorT<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

// Values on a shuffled grid with spacing far above the FD step, so maxpool
// argmax choices cannot flip under perturbation.
TensorT<double> separated_tensor(std::vector<int64_t> shape, Rng& rng) {
  TensorT<double> t(std::move(shape));
  std::vector<double> grid(t.data.size());
  for (size_t i = 0; i < grid.size(); ++i) grid[i] = 0.01 * static_cast<double>(i);
  rng.shuffle(grid.begin(), grid.end());
  t.data = grid;
  return t;
}

GradCheckReport check(const std::string& name, double tolerance,
                      const std::vector<NodePtr<double>>& leaves,
                      const std::function<NodePtr<double>()>& build) {
  GradCheckReport report;
  report.name = name;
  report.tolerance = tolerance;
  report.max_rel_error = finite_difference_max_error(leaves, build);
  report.pass = report.max_rel_error < tolerance;
  return report;
}

}  // namespace

std::vector<GradCheckReport> run_gradient_checks() {
  constexpr double kOpTol = 1e-4;
  constexpr double kCompositeTol = 1e-3;
  std::vector<GradCheckReport> reports;
  Rng rng(0xc0ffee);

  {
    auto x = make_leaf<double>(random_tensor({2, 2, 8}, rng), true);
    auto k = make_leaf<double>(random_tensor({3, 2, 3}, rng, 0.5), true);
    auto b = make_leaf<double>(random_tensor({3}, rng, 0.5), true);
    for (int stride : {1, 2}) {
      reports.push_back(check("conv1d(stride=" + std::to_string(stride) + ")", kOpTol, {x, k, b},
                              [&, stride] { return sum<double>(conv1d<double>(x, k, b, stride)); }));
    }
  }
  {
    auto x = make_leaf<double>(separated_tensor({2, 2, 9}, rng), true);
    auto w = make_leaf<double>(random_tensor({2, 2, 5}, rng), true);
    reports.push_back(check("maxpool1d(width=3,stride=2)", kOpTol, {x},
                            [&] { return sum<double>(maxpool1d<double>(x, 3, 2)); }));
    // Routed gradient with a downstream op, not just a straight sum.
    reports.push_back(check("maxpool1d+add", kOpTol, {x, w}, [&] {
      return sum<double>(add<double>(maxpool1d<double>(x, 3, 2), w));
    }));
  }
  {
    auto x = make_leaf<double>(random_tensor({3, 5}, rng), true);
    auto w = make_leaf<double>(random_tensor({5, 4}, rng, 0.5), true);
    auto b = make_leaf<double>(random_tensor({4}, rng, 0.5), true);
    reports.push_back(check("dense", kOpTol, {x, w, b},
                            [&] { return sum<double>(dense<double>(x, w, b)); }));
    reports.push_back(check("relu", kOpTol, {x, w, b}, [&] {
      return sum<double>(dense<double>(relu<double>(x), w, b));
    }));
    reports.push_back(check("dropout(rate=0.3)", kOpTol, {x, w, b}, [&] {
      return sum<double>(dense<double>(dropout<double>(x, 0.3, true, 0x5eed), w, b));
    }));
  }
  {
    auto x = make_leaf<double>(random_tensor({2, 3, 4}, rng), true);
    auto gamma = make_leaf<double>(random_tensor({3}, rng, 0.3), true);
    auto beta = make_leaf<double>(random_tensor({3}, rng, 0.3), true);
    for (auto& g : gamma->value.data) g += 1.0;
    auto running_mean = std::make_shared<TensorT<double>>(std::vector<int64_t>{3}, 0.0);
    auto running_var = std::make_shared<TensorT<double>>(std::vector<int64_t>{3}, 1.0);
    auto w = make_leaf<double>(random_tensor({2, 3, 4}, rng), false);
    reports.push_back(check("batchnorm1d(train)", kOpTol, {x, gamma, beta}, [&] {
      auto bn = batchnorm1d<double>(x, gamma, beta, running_mean.get(), running_var.get(), 0.1,
                                    1e-5, true);
      // Multiply by a fixed tensor via add+relu chain to vary per-element grads.
      return sum<double>(relu<double>(add<double>(bn, w)));
    }));
  }
  {
    auto logits = make_leaf<double>(random_tensor({3, 2}, rng, 2.0), true);
    std::vector<int> labels = {0, 1, 1};
    reports.push_back(check("softmax_cross_entropy", kOpTol, {logits}, [&] {
      return softmax_cross_entropy<double>(logits, labels).first;
    }));
  }
  {
    auto x = make_leaf<double>(random_tensor({2, 2, 6}, rng), true);
    reports.push_back(check("pad_channels", kOpTol, {x},
                            [&] { return sum<double>(pad_channels<double>(x, 5)); }));
  }

  {
    // 3-block composite network, double precision, dropout and batchnorm
    // active, checked over every parameter.
    net::NetConfig cfg;
    cfg.input_len = 32;
    cfg.filter_width = 8;
    cfg.base_filters = 4;
    cfg.n_blocks = 3;
    cfg.dropout_rate = 0.25;
    cfg.block_strides = {1, 2, 1};
    cfg.block_factors = {0, 0, 1};
    auto model = net::ModelT<double>::build(cfg, 0xabcdef);
    // The classifier is zero-initialized by design; randomize it here so
    // gradients actually flow through every block during the check.
    for (auto& v : model.dense_weights.node->value.data) v = rng.normal() * 0.2;
    TensorT<double> batch = random_tensor({2, 32, 1}, rng);
    std::vector<int> labels = {0, 1};

    std::vector<NodePtr<double>> leaves;
    for (auto* p : model.params()) leaves.push_back(p->node);
    reports.push_back(check("composite_3block_net", kCompositeTol, leaves, [&]() mutable {
      auto logits = model.forward_logits(batch, net::Mode::Train, 7);
      return softmax_cross_entropy<double>(logits, labels).first;
    }));
  }

  return reports;
}

bool all_pass(const std::vector<GradCheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.pass; });
}

}  // namespace epg::ad
