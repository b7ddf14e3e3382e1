#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "epg/autodiff.hpp"
#include "epg/common.hpp"
#include "epg/gradcheck.hpp"

using namespace epg;
using ad::make_leaf;
using D = ad::TensorT<double>;

TEST_CASE("finite-difference suite: every op and the composite net pass") {
  auto reports = ad::run_gradient_checks();
  REQUIRE(!reports.empty());
  for (const auto& r : reports) {
    INFO(r.name, " max rel err ", r.max_rel_error, " tol ", r.tolerance);
    CHECK(r.pass);
  }
}

TEST_CASE("conv1d: zero input yields broadcast bias") {
  auto x = make_leaf<double>(D({2, 2, 6}, 0.0));
  auto k = make_leaf<double>(D({3, 2, 4}, 0.7));
  auto b = make_leaf<double>(D::from({4}, {1.0, -2.0, 0.5, 3.0}));
  auto out = ad::conv1d<double>(x, k, b, 1);
  REQUIRE(out->value.shape == std::vector<int64_t>{2, 4, 6});
  const double expect[4] = {1.0, -2.0, 0.5, 3.0};
  for (int64_t batch = 0; batch < 2; ++batch)
    for (int64_t co = 0; co < 4; ++co)
      for (int64_t o = 0; o < 6; ++o)
        CHECK(out->value.data[(batch * 4 + co) * 6 + o] == doctest::Approx(expect[co]));
}

TEST_CASE("conv1d: width-1 identity kernel reproduces the input") {
  Rng rng(1);
  D xv({1, 1, 10});
  for (auto& v : xv.data) v = rng.normal();
  auto x = make_leaf<double>(xv);
  auto k = make_leaf<double>(D::from({1, 1, 1}, {1.0}));
  auto b = make_leaf<double>(D({1}, 0.0));
  auto out = ad::conv1d<double>(x, k, b, 1);
  for (size_t i = 0; i < xv.data.size(); ++i)
    CHECK(out->value.data[i] == doctest::Approx(xv.data[i]));
}

TEST_CASE("conv1d output length is ceil(L/stride) for the Table-style dims") {
  for (auto [len, stride, expect] :
       {std::tuple{2560L, 1L, 2560L}, {2560L, 2L, 1280L}, {1280L, 2L, 640L}, {9L, 2L, 5L}}) {
    auto x = make_leaf<double>(D({1, 1, len}, 0.1));
    auto k = make_leaf<double>(D({32, 1, 2}, 0.01));
    auto b = make_leaf<double>(D({2}, 0.0));
    auto out = ad::conv1d<double>(x, k, b, stride);
    CHECK(out->value.dim(2) == expect);
  }
}

TEST_CASE("conv1d rejects channel mismatch and bad stride") {
  auto x = make_leaf<double>(D({1, 2, 8}, 0.0));
  auto k = make_leaf<double>(D({3, 3, 4}, 0.0));
  auto b = make_leaf<double>(D({4}, 0.0));
  CHECK_THROWS_AS(ad::conv1d<double>(x, k, b, 1), std::invalid_argument);
  auto k2 = make_leaf<double>(D({3, 2, 4}, 0.0));
  CHECK_THROWS_AS(ad::conv1d<double>(x, k2, b, 3), std::invalid_argument);
}

TEST_CASE("maxpool1d hand-evaluated case") {
  auto x = make_leaf<double>(D::from({1, 1, 4}, {1.0, 3.0, 2.0, 4.0}));
  auto out = ad::maxpool1d<double>(x, 2, 2);
  REQUIRE(out->value.data.size() == 2);
  CHECK(out->value.data[0] == 3.0);
  CHECK(out->value.data[1] == 4.0);
}

TEST_CASE("maxpool1d width 1 stride 1 is the identity") {
  Rng rng(2);
  D xv({2, 3, 7});
  for (auto& v : xv.data) v = rng.normal();
  auto x = make_leaf<double>(xv);
  auto out = ad::maxpool1d<double>(x, 1, 1);
  for (size_t i = 0; i < xv.data.size(); ++i) CHECK(out->value.data[i] == xv.data[i]);
}

TEST_CASE("maxpool1d gradient routes to the first maximal index on ties") {
  auto x = make_leaf<double>(D::from({1, 1, 4}, {2.0, 2.0, 1.0, 0.0}), true);
  auto out = ad::maxpool1d<double>(x, 2, 2);
  auto loss = ad::sum<double>(out);
  ad::backward<double>(loss);
  CHECK(x->grad.data[0] == 1.0);  // first of the tied pair
  CHECK(x->grad.data[1] == 0.0);
  CHECK(x->grad.data[2] == 1.0);
}

TEST_CASE("relu basics") {
  auto x = make_leaf<double>(D::from({1, 3}, {-1.0, 0.0, 2.0}));
  auto out = ad::relu<double>(x);
  CHECK(out->value.data[0] == 0.0);
  CHECK(out->value.data[1] == 0.0);
  CHECK(out->value.data[2] == 2.0);
}

TEST_CASE("dropout eval mode is the exact identity") {
  Rng rng(3);
  D xv({4, 9});
  for (auto& v : xv.data) v = rng.normal();
  auto x = make_leaf<double>(xv);
  auto out = ad::dropout<double>(x, 0.5, false, 123);
  for (size_t i = 0; i < xv.data.size(); ++i) CHECK(out->value.data[i] == xv.data[i]);
}

TEST_CASE("dropout training mode keeps ~(1-rate) scaled by 1/(1-rate)") {
  D xv({1, 100000}, 1.0);
  auto x = make_leaf<double>(xv);
  auto out = ad::dropout<double>(x, 0.25, true, 42);
  double mean = 0.0;
  size_t kept = 0;
  for (double v : out->value.data) {
    mean += v;
    kept += v != 0.0;
  }
  mean /= static_cast<double>(out->value.data.size());
  CHECK(std::abs(mean - 1.0) < 0.01);  // inverted scaling keeps the expectation
  CHECK(std::abs(static_cast<double>(kept) / 100000.0 - 0.75) < 0.01);
  CHECK_THROWS_AS(ad::dropout<double>(x, 1.0, true, 1), std::invalid_argument);
}

TEST_CASE("dropout mask is deterministic in the key") {
  Rng rng(4);
  D xv({2, 50});
  for (auto& v : xv.data) v = rng.normal();
  auto x = make_leaf<double>(xv);
  auto a = ad::dropout<double>(x, 0.4, true, 777);
  auto b = ad::dropout<double>(x, 0.4, true, 777);
  auto c = ad::dropout<double>(x, 0.4, true, 778);
  CHECK(a->value.data == b->value.data);
  CHECK(a->value.data != c->value.data);
}

TEST_CASE("batchnorm training output has zero mean and unit variance per channel") {
  Rng rng(5);
  D xv({8, 3, 32});
  for (size_t i = 0; i < xv.data.size(); ++i) xv.data[i] = rng.normal() * (1.0 + i % 3) + 5.0;
  auto x = make_leaf<double>(xv);
  auto gamma = make_leaf<double>(D({3}, 1.0));
  auto beta = make_leaf<double>(D({3}, 0.0));
  ad::TensorT<double> rm({3}, 0.0), rv({3}, 1.0);
  auto out = ad::batchnorm1d<double>(x, gamma, beta, &rm, &rv, 0.1, 1e-9, true);

  const int64_t n = 8 * 32;
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int64_t b = 0; b < 8; ++b)
      for (int64_t l = 0; l < 32; ++l) mean += out->value.data[(b * 3 + c) * 32 + l];
    mean /= n;
    double var = 0.0;
    for (int64_t b = 0; b < 8; ++b)
      for (int64_t l = 0; l < 32; ++l) {
        double d = out->value.data[(b * 3 + c) * 32 + l] - mean;
        var += d * d;
      }
    var /= n;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("dense: identity weights reproduce the input; zero input yields bias") {
  auto x = make_leaf<double>(D::from({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  auto w = make_leaf<double>(D::from({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  auto b = make_leaf<double>(D({2}, 0.0));
  auto out = ad::dense<double>(x, w, b);
  CHECK(out->value.data == std::vector<double>{1.0, 2.0, 3.0, 4.0});

  auto zero = make_leaf<double>(D({3, 2}, 0.0));
  auto b2 = make_leaf<double>(D::from({2}, {0.25, -1.5}));
  auto out2 = ad::dense<double>(zero, w, b2);
  for (int i = 0; i < 3; ++i) {
    CHECK(out2->value.data[i * 2 + 0] == 0.25);
    CHECK(out2->value.data[i * 2 + 1] == -1.5);
  }
}

TEST_CASE("softmax cross entropy: symmetry and saturation") {
  auto equal = make_leaf<double>(D({1, 2}, 0.0));
  auto [loss, probs] = ad::softmax_cross_entropy<double>(equal, {0});
  CHECK(probs.data[0] == doctest::Approx(0.5));
  CHECK(probs.data[1] == doctest::Approx(0.5));
  CHECK(loss->value.data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  auto sat = make_leaf<double>(D::from({1, 2}, {30.0, -30.0}));
  auto [loss2, probs2] = ad::softmax_cross_entropy<double>(sat, {0});
  CHECK(loss2->value.data[0] == doctest::Approx(0.0).epsilon(1e-9));

  CHECK_THROWS_AS(ad::softmax_cross_entropy<double>(sat, {2}), std::invalid_argument);
}

TEST_CASE("softmax rows sum to 1 even for extreme logits") {
  auto x = make_leaf<double>(D::from({2, 2}, {1e4, -1e4, 3.0, 3.0}));
  auto probs = ad::softmax<double>(x->value);
  CHECK(probs.data[0] + probs.data[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(probs.data[2] + probs.data[3] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("backward: loss = sum(p) gives all-ones gradient, unreachable param stays zero") {
  D pv({3, 2}, 0.5);
  auto p = make_leaf<double>(pv, true);
  auto q = make_leaf<double>(D({4}, 1.0), true);  // unreachable
  auto loss = ad::sum<double>(p);
  ad::backward<double>(loss);
  for (double g : p->grad.data) CHECK(g == 1.0);
  q->ensure_grad();
  for (double g : q->grad.data) CHECK(g == 0.0);
}

TEST_CASE("backward zeroes gradients at call start (no cross-call accumulation)") {
  auto p = make_leaf<double>(D({2}, 1.0), true);
  auto loss1 = ad::sum<double>(p);
  ad::backward<double>(loss1);
  auto loss2 = ad::sum<double>(p);
  ad::backward<double>(loss2);
  for (double g : p->grad.data) CHECK(g == 1.0);
}

TEST_CASE("backward rejects a non-scalar root") {
  auto p = make_leaf<double>(D({2}, 1.0), true);
  CHECK_THROWS_AS(ad::backward<double>(p), std::invalid_argument);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto p = ad::ParamT<double>::make("p", D({4}, 2.0));
  p.node->zero_grad();
  std::vector<ad::ParamT<double>*> params{&p};
  ad::adam_step<double>(params, 0.1);
  for (double v : p.node->value.data) CHECK(v == 2.0);
}

TEST_CASE("adam: first-step update magnitude is ~lr regardless of gradient scale") {
  for (double g : {1e-6, 1.0, 1e6}) {
    auto p = ad::ParamT<double>::make("p", D({1}, 0.0));
    p.node->ensure_grad();
    p.node->grad.data[0] = g;
    std::vector<ad::ParamT<double>*> params{&p};
    ad::adam_step<double>(params, 0.01);
    CHECK(std::abs(p.node->value.data[0] + 0.01) < 2e-4);  // moved by ~lr toward -g
  }
}

TEST_CASE("adam minimizes a quadratic bowl to < 1e-6 within 500 steps") {
  auto p = ad::ParamT<double>::make("x", D({1}, 3.0));
  std::vector<ad::ParamT<double>*> params{&p};
  for (int i = 0; i < 500; ++i) {
    p.node->zero_grad();
    p.node->grad.data[0] = 2.0 * p.node->value.data[0];  // d/dx x^2
    ad::adam_step<double>(params, 0.1);
  }
  double x = p.node->value.data[0];
  CHECK(x * x < 1e-6);
}

TEST_CASE("checkpoint round trip preserves names, shapes, bits") {
  std::vector<ad::NamedTensor> tensors;
  tensors.push_back({"a.kernel", {2, 3}, {1.0f, -2.5f, 0.0f, 1e-30f, 3.14f, -0.0f}});
  tensors.push_back({"b.bias", {1}, {42.0f}});
  auto path = std::filesystem::temp_directory_path() / "epg_ckpt_test.ckpt";
  ad::save_checkpoint(path, tensors);
  auto back = ad::load_checkpoint(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a.kernel");
  CHECK(back[0].shape == std::vector<int64_t>{2, 3});
  CHECK(back[0].data == tensors[0].data);
  CHECK(back[1].name == "b.bias");
  CHECK(back[1].data == tensors[1].data);
}

TEST_CASE("float and double instantiations agree on a small forward pass") {
  Rng rng(6);
  D xd({2, 1, 8});
  for (auto& v : xd.data) v = rng.normal();
  D kd({3, 1, 2});
  for (auto& v : kd.data) v = rng.normal();
  auto out_d = ad::conv1d<double>(make_leaf<double>(xd), make_leaf<double>(kd),
                                  make_leaf<double>(D({2}, 0.1)), 2);
  auto out_f = ad::conv1d<float>(make_leaf<float>(xd.cast<float>()),
                                 make_leaf<float>(kd.cast<float>()),
                                 make_leaf<float>(ad::Tensor({2}, 0.1f)), 2);
  REQUIRE(out_d->value.data.size() == out_f->value.data.size());
  for (size_t i = 0; i < out_d->value.data.size(); ++i)
    CHECK(out_f->value.data[i] == doctest::Approx(out_d->value.data[i]).epsilon(1e-5));
}
