// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/gradcheck.hpp"
#include "tagfex/nn/backbone.hpp"
#include "tagfex/nn/losses.hpp"
#include "tagfex/nn/optimizer.hpp"

using namespace tagfex;
using gradcheck::random_map;
using gradcheck::random_matrix;

namespace {

Scalar weighted_sum(const Matrix& out, const Matrix& weights) {
  return out.cwiseProduct(weights).sum();
}

}  // namespace

TEST_CASE("conv2d matches finite differences") {
  Rng rng(11);
  nn::Conv2d conv("conv", 2, 3, 3, 2, 1, rng);
  FeatureMap x = random_map(2, 2, 5, 6, rng);
  const int ho = nn::conv_out_extent(5, 3, 2, 1);
  const int wo = nn::conv_out_extent(6, 3, 2, 1);
  const Matrix probe = random_matrix(3, 2 * ho * wo, rng);

  auto loss = [&] { return weighted_sum(conv.forward_eval(x).v, probe); };

  conv.weight.zero_grad();
  conv.bias.zero_grad();
  FeatureMap out = conv.forward_train(x);
  FeatureMap dy = out;
  dy.v = probe;
  FeatureMap dx = conv.backward(dy);

  CHECK(gradcheck::max_rel_err(loss, conv.weight.value, conv.weight.grad,
                               gradcheck::sample_coords(conv.weight.value, 20, rng)) < 1e-5);
  CHECK(gradcheck::max_rel_err(loss, conv.bias.value, conv.bias.grad,
                               gradcheck::sample_coords(conv.bias.value, 3, rng)) < 1e-5);
  CHECK(gradcheck::max_rel_err(loss, x.v, dx.v, gradcheck::sample_coords(x.v, 20, rng)) < 1e-5);
}

TEST_CASE("batchnorm2d matches finite differences in training mode") {
  Rng rng(12);
  nn::BatchNorm2d bn("bn", 3);
  bn.gamma.value = random_matrix(3, 1, rng);
  bn.beta.value = random_matrix(3, 1, rng);
  FeatureMap x = random_map(3, 2, 2, 3, rng);
  const Matrix probe = random_matrix(3, 2 * 2 * 3, rng);

  auto loss = [&] {
    nn::BatchNorm2d fresh = bn;  // keep running buffers out of the picture
    return weighted_sum(fresh.forward_train(x).v, probe);
  };

  bn.gamma.zero_grad();
  bn.beta.zero_grad();
  nn::BatchNorm2d work = bn;
  FeatureMap out = work.forward_train(x);
  FeatureMap dy = out;
  dy.v = probe;
  FeatureMap dx = work.backward(dy);

  CHECK(gradcheck::max_rel_err(loss, x.v, dx.v, gradcheck::sample_coords(x.v, 25, rng)) < 1e-5);

  auto loss_gamma = [&] {
    nn::BatchNorm2d fresh = bn;
    return weighted_sum(fresh.forward_train(x).v, probe);
  };
  CHECK(gradcheck::max_rel_err(loss_gamma, bn.gamma.value, work.gamma.grad,
                               {{0, 0}, {1, 0}, {2, 0}}) < 1e-6);
  CHECK(gradcheck::max_rel_err(loss_gamma, bn.beta.value, work.beta.grad,
                               {{0, 0}, {1, 0}, {2, 0}}) < 1e-6);
}

TEST_CASE("linear, layernorm and mlp match finite differences") {
  Rng rng(13);
  nn::Linear lin("lin", 5, 4, rng);
  Matrix x = random_matrix(5, 3, rng);
  Matrix probe = random_matrix(4, 3, rng);
  auto loss = [&] { return weighted_sum(lin.forward_eval(x), probe); };
  lin.weight.zero_grad();
  lin.bias.zero_grad();
  lin.forward_train(x);
  Matrix dx = lin.backward(probe);
  CHECK(gradcheck::max_rel_err(loss, lin.weight.value, lin.weight.grad,
                               gradcheck::sample_coords(lin.weight.value, 10, rng)) < 1e-6);
  CHECK(gradcheck::max_rel_err(loss, x, dx, gradcheck::sample_coords(x, 10, rng)) < 1e-6);

  nn::LayerNorm ln("ln", 5);
  ln.gamma.value = random_matrix(5, 1, rng);
  ln.beta.value = random_matrix(5, 1, rng);
  Matrix probe_ln = random_matrix(5, 3, rng);
  auto loss_ln = [&] { return weighted_sum(ln.forward_eval(x), probe_ln); };
  ln.gamma.zero_grad();
  ln.beta.zero_grad();
  ln.forward_train(x);
  Matrix dx_ln = ln.backward(probe_ln);
  CHECK(gradcheck::max_rel_err(loss_ln, x, dx_ln, gradcheck::sample_coords(x, 15, rng)) < 1e-5);
  CHECK(gradcheck::max_rel_err(loss_ln, ln.gamma.value, ln.gamma.grad,
                               gradcheck::sample_coords(ln.gamma.value, 5, rng)) < 1e-5);

  nn::Mlp2 mlp("mlp", 5, 6, 4, rng);
  Matrix probe_mlp = random_matrix(4, 3, rng);
  auto loss_mlp = [&] { return weighted_sum(mlp.forward_eval(x), probe_mlp); };
  std::vector<nn::Param*> params;
  mlp.collect(params);
  nn::SgdOptimizer::zero_grad(params);
  mlp.forward_train(x);
  Matrix dx_mlp = mlp.backward(probe_mlp);
  for (nn::Param* p : params) {
    CHECK(gradcheck::max_rel_err(loss_mlp, p->value, p->grad,
                                 gradcheck::sample_coords(p->value, 6, rng)) < 1e-5);
  }
  CHECK(gradcheck::max_rel_err(loss_mlp, x, dx_mlp, gradcheck::sample_coords(x, 10, rng)) < 1e-5);
}

TEST_CASE("backbone pooled output is the spatial mean of the map") {
  nn::ArchitectureSpec arch;
  arch.input_size = 8;
  arch.channels = {4, 8};
  nn::ConvBackbone net(arch, 7, "bb");
  Rng rng(21);
  FeatureMap images = random_map(3, 3, 8, 8, rng);
  const nn::BackboneFeatures f = net.forward_eval(images);
  REQUIRE(f.map.height == 2);
  REQUIRE(f.map.width == 2);
  for (int b = 0; b < 3; ++b) {
    for (int c = 0; c < 8; ++c) {
      Scalar mean = 0;
      for (int p = 0; p < f.map.positions(); ++p) mean += f.map.v(c, b * 4 + p);
      mean /= f.map.positions();
      CHECK(f.pooled(c, b) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("constant map pools to the constant") {
  FeatureMap m(3, 2, 2, 2);
  m.v.row(0).setConstant(0.25);
  m.v.row(1).setConstant(-1.5);
  m.v.row(2).setConstant(3.0);
  const Matrix pooled = m.pooled();
  CHECK(pooled(0, 0) == 0.25);
  CHECK(pooled(1, 1) == -1.5);
  CHECK(pooled(2, 0) == 3.0);
}

TEST_CASE("eval forward is batch independent") {
  nn::ArchitectureSpec arch;
  arch.input_size = 8;
  arch.channels = {4, 8};
  nn::ConvBackbone net(arch, 3, "bb");
  Rng rng(31);
  FeatureMap one = random_map(3, 1, 8, 8, rng);
  FeatureMap two(3, 2, 8, 8);
  two.sample(0) = one.sample(0);
  two.sample(1) = one.sample(0);
  const Matrix p1 = net.forward_eval(one).pooled;
  const Matrix p2 = net.forward_eval(two).pooled;
  CHECK((p1.col(0) - p2.col(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p1.col(0) - p2.col(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backbone gradients match finite differences") {
  nn::ArchitectureSpec arch;
  arch.input_size = 8;
  arch.channels = {3, 5};
  nn::ConvBackbone net(arch, 17, "bb");
  Rng rng(41);
  FeatureMap images = random_map(3, 2, 8, 8, rng);
  const Matrix probe_map = random_matrix(5, 2 * 4, rng);
  const Matrix probe_pooled = random_matrix(5, 2, rng);

  auto loss = [&] {
    nn::ConvBackbone fresh = net;
    const nn::BackboneFeatures f = fresh.forward_train(images);
    return weighted_sum(f.map.v, probe_map) + weighted_sum(f.pooled, probe_pooled);
  };

  std::vector<nn::Param*> params = net.params();
  nn::SgdOptimizer::zero_grad(params);
  nn::ConvBackbone work = net;
  const nn::BackboneFeatures f = work.forward_train(images);
  FeatureMap dmap = f.map;
  dmap.v = probe_map;
  work.backward(dmap, probe_pooled);

  std::vector<nn::Param*> work_params = work.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const Scalar err = gradcheck::max_rel_err(
        loss, params[i]->value, work_params[i]->grad,
        gradcheck::sample_coords(params[i]->value, 8, rng));
    INFO(params[i]->name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("snapshot copies are bit stable under further training") {
  Rng rng(51);
  nn::Linear lin("lin", 4, 3, rng);
  const nn::Linear snapshot = lin;
  Matrix x = random_matrix(4, 5, rng);
  Matrix probe = random_matrix(3, 5, rng);

  std::vector<nn::Param*> params;
  lin.collect(params);
  nn::SgdOptimizer opt(0.9, 5e-4);
  for (int step = 0; step < 3; ++step) {
    nn::SgdOptimizer::zero_grad(params);
    lin.forward_train(x);
    lin.backward(probe);
    opt.step(params, 0.1);
  }
  CHECK(snapshot.weight.value != lin.weight.value);
  nn::Linear snapshot2 = snapshot;
  CHECK(snapshot2.weight.value == snapshot.weight.value);
  CHECK(snapshot.weight.value.size() == 12);
}

TEST_CASE("cross entropy and kl match loop oracles and finite differences") {
  Rng rng(61);
  Matrix logits = random_matrix(5, 4, rng);
  std::vector<int> labels{0, 3, 2, 4};
  const nn::CrossEntropyResult ce = nn::softmax_cross_entropy(logits, labels);

  Scalar oracle = 0;
  for (int j = 0; j < 4; ++j) {
    Scalar den = 0;
    for (int r = 0; r < 5; ++r) den += std::exp(logits(r, j));
    oracle -= std::log(std::exp(logits(labels[j], j)) / den);
  }
  oracle /= 4;
  CHECK(ce.loss == doctest::Approx(oracle).epsilon(1e-12));

  auto celoss = [&] { return nn::softmax_cross_entropy(logits, labels).loss; };
  CHECK(gradcheck::max_rel_err(celoss, logits, ce.dlogits,
                               gradcheck::sample_coords(logits, 15, rng)) < 1e-6);

  Matrix teacher = random_matrix(5, 4, rng);
  const nn::KlResult kl = nn::kl_teacher_student(teacher, logits);
  CHECK(kl.loss >= 0);
  auto klloss = [&] { return nn::kl_teacher_student(teacher, logits).loss; };
  CHECK(gradcheck::max_rel_err(klloss, logits, kl.dstudent,
                               gradcheck::sample_coords(logits, 15, rng)) < 1e-6);
  const nn::KlResult self_kl = nn::kl_teacher_student(teacher, teacher);
  CHECK(self_kl.loss == doctest::Approx(0.0).epsilon(1e-12));
}
