// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "support/gradcheck.hpp"
#include "tagfex/prune/fpgm.hpp"

using namespace tagfex;
using gradcheck::random_map;

namespace {

nn::ArchitectureSpec toy_arch() {
  nn::ArchitectureSpec arch;
  arch.input_size = 8;
  arch.channels = {8, 12};
  return arch;
}

}  // namespace

TEST_CASE("redundancy scores rank duplicates lowest") {
  Matrix dup(3, 2);
  dup << 1, 0, 1, 0, 5, 5;  // rows 0 and 1 identical, row 2 far away
  const Vector s = prune::fpgm_filter_scores(dup);
  CHECK(s(0) == s(1));
  CHECK(s(0) < s(2));

  Matrix line(3, 1);
  line << 0, 1, 10;  // 1-d positions 0, 1, 10
  const Vector ls = prune::fpgm_filter_scores(line);
  CHECK(ls(0) == doctest::Approx(11.0));
  CHECK(ls(1) == doctest::Approx(10.0));
  CHECK(ls(2) == doctest::Approx(19.0));

  Matrix same = Matrix::Ones(4, 5);
  CHECK(prune::fpgm_filter_scores(same).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(prune::fpgm_filter_scores(Matrix::Ones(1, 5)), std::invalid_argument);
}

TEST_CASE("plans hit the target rate and schedule duplicated filters first") {
  nn::ConvBackbone toy(toy_arch(), 3, "toy");
  CHECK_THROWS_AS(prune::build_plan(toy, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(prune::build_plan(toy, 1.0), std::invalid_argument);

  const prune::PruningPlan half = prune::build_plan(toy, 0.5);
  CHECK(std::abs(half.achieved_rate - 0.5) <= 0.02);
  CHECK(half.achieved_rate == doctest::Approx(prune::plan_rate(toy, half)));

  // A duplicated filter is scheduled before any non-duplicate.
  nn::ConvBackbone dup(toy_arch(), 4, "dup");
  dup.convs[0].weight.value.row(3) = dup.convs[0].weight.value.row(5);
  const prune::PruningPlan small = prune::build_plan(dup, 0.2);
  const auto& removed = small.layers[0].filters;
  const bool has3 = std::find(removed.begin(), removed.end(), 3) != removed.end();
  const bool has5 = std::find(removed.begin(), removed.end(), 5) != removed.end();
  CHECK((has3 || has5));
}

TEST_CASE("achieved compression within two points of target on the desk backbone") {
  nn::ConvBackbone desk(nn::ArchitectureSpec{}, 5, "desk");
  for (Scalar target : {0.2, 0.4, 0.6}) {
    const prune::PruningPlan plan = prune::build_plan(desk, target);
    INFO("target ", target, " achieved ", plan.achieved_rate);
    CHECK(std::abs(plan.achieved_rate - target) <= 0.02);
    const nn::ConvBackbone pruned = prune::apply_plan(desk, plan);
    const Scalar ratio = 1.0 - static_cast<Scalar>(pruned.parameter_count()) /
                                   static_cast<Scalar>(desk.parameter_count());
    CHECK(ratio == doctest::Approx(plan.achieved_rate).epsilon(1e-12));
  }
}

TEST_CASE("an empty plan leaves the model bitwise unchanged") {
  nn::ConvBackbone toy(toy_arch(), 6, "toy");
  prune::PruningPlan empty;
  empty.target_rate = 0.01;
  for (const auto& conv : toy.convs) {
    empty.layers.push_back({conv.weight.name, {}});
  }
  nn::ConvBackbone copy = prune::apply_plan(toy, empty);
  std::vector<nn::Param*> a, b;
  toy.collect(a);
  copy.collect(b);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
}

TEST_CASE("removing a null-contribution filter preserves outputs") {
  nn::ConvBackbone net(toy_arch(), 7, "net");
  const int victim = 2;
  net.convs[0].weight.value.row(victim).setZero();
  net.convs[0].bias.value(victim, 0) = 0;
  net.bns[0].gamma.value(victim, 0) = 0;
  net.bns[0].beta.value(victim, 0) = 0;
  // Zero the downstream columns reading this channel.
  const int kk = 9;
  net.convs[1].weight.value.middleCols(victim * kk, kk).setZero();

  prune::PruningPlan plan;
  plan.layers.push_back({net.convs[0].weight.name, {victim}});
  plan.layers.push_back({net.convs[1].weight.name, {}});
  const nn::ConvBackbone pruned = prune::apply_plan(net, plan);

  Rng rng(8);
  const FeatureMap x = random_map(3, 2, 8, 8, rng);
  const Matrix before = net.forward_eval(x).pooled;
  const Matrix after = pruned.forward_eval(x).pooled;
  CHECK((before - after).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pruned models remain valid extractors with consistent pooling") {
  nn::ConvBackbone desk(nn::ArchitectureSpec{}, 9, "desk");
  const prune::PruningPlan plan = prune::build_plan(desk, 0.4);
  const nn::ConvBackbone pruned = prune::apply_plan(desk, plan);

  Rng rng(10);
  const FeatureMap x = random_map(3, 2, 32, 32, rng);
  const nn::BackboneFeatures f = pruned.forward_eval(x);
  CHECK(f.map.dim() == pruned.spec().feature_dim());
  for (int b = 0; b < 2; ++b) {
    const Vector mean = f.map.sample(b).rowwise().mean();
    CHECK((f.pooled.col(b) - mean).cwiseAbs().maxCoeff() < 1e-12);
  }

  // Inconsistent plans are rejected.
  prune::PruningPlan bad = plan;
  bad.layers[0].filters = {0, 0};
  CHECK_THROWS_AS(prune::apply_plan(desk, bad), std::invalid_argument);
  prune::PruningPlan wrong_name = plan;
  wrong_name.layers[0].layer = "nope";
  CHECK_THROWS_AS(prune::apply_plan(desk, wrong_name), std::invalid_argument);
}

TEST_CASE("pairwise-threshold mode prunes one of each close pair") {
  nn::ConvBackbone net(toy_arch(), 11, "net");
  net.convs[0].weight.value.row(1) = net.convs[0].weight.value.row(4);
  net.convs[1].weight.value.row(0) = net.convs[1].weight.value.row(2);
  const prune::PruningPlan plan = prune::build_plan_pairwise(net, 1e-12);
  CHECK(plan.layers[0].filters == std::vector<int>{4});
  CHECK(plan.layers[1].filters == std::vector<int>{2});
  CHECK(plan.achieved_rate > 0);
}

TEST_CASE("plan files round-trip through the text format") {
  nn::ConvBackbone toy(toy_arch(), 12, "toy");
  const prune::PruningPlan plan = prune::build_plan(toy, 0.3);
  const auto path = std::filesystem::temp_directory_path() / "tagfex_plan_test.txt";
  prune::save_plan(plan, path.string());
  const prune::PruningPlan loaded = prune::load_plan(path.string());
  CHECK(loaded.target_rate == plan.target_rate);
  CHECK(loaded.achieved_rate == plan.achieved_rate);
  REQUIRE(loaded.layers.size() == plan.layers.size());
  for (size_t i = 0; i < plan.layers.size(); ++i) {
    CHECK(loaded.layers[i].layer == plan.layers[i].layer);
    CHECK(loaded.layers[i].filters == plan.layers[i].filters);
  }
  std::filesystem::remove(path);
}
