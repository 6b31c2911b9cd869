// SPDX-License-Identifier: Apache-2.0
#include "tagfex/prune/fpgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace tagfex::prune {

Vector fpgm_filter_scores(const Matrix& filters) {
  const Eigen::Index k = filters.rows();
  require(k >= 2, "fpgm_filter_scores: need at least two filters");
  Vector scores = Vector::Zero(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const Scalar d = (filters.row(i) - filters.row(j)).norm();
      scores(i) += d;
      scores(j) += d;
    }
  }
  return scores;
}

namespace {

/// Backbone learnable-parameter count under per-layer removal counts.
std::int64_t params_after(const nn::ConvBackbone& model, const std::vector<int>& removed) {
  const auto& spec = model.spec();
  std::int64_t total = 0;
  int in_ch = spec.in_channels;
  for (size_t l = 0; l < model.convs.size(); ++l) {
    const int keep = model.convs[l].out_channels - removed[l];
    total += static_cast<std::int64_t>(keep) *
                 (in_ch * spec.kernel * spec.kernel + 1);
    if (spec.batchnorm) total += 2 * keep;
    in_ch = keep;
  }
  return total;
}

std::vector<int> lowest_score_filters(const Matrix& weight, int count) {
  std::vector<int> order(static_cast<size_t>(weight.rows()));
  std::iota(order.begin(), order.end(), 0);
  if (count == 0) return {};
  const Vector scores = fpgm_filter_scores(weight);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores(a) < scores(b); });
  std::vector<int> removed(order.begin(), order.begin() + count);
  std::sort(removed.begin(), removed.end());
  return removed;
}

PruningPlan finalize_plan(const nn::ConvBackbone& model, std::vector<int> counts,
                          Scalar target_rate) {
  PruningPlan plan;
  plan.target_rate = target_rate;
  for (size_t l = 0; l < model.convs.size(); ++l) {
    LayerPrune lp;
    lp.layer = model.convs[l].weight.name;
    lp.filters = lowest_score_filters(model.convs[l].weight.value, counts[l]);
    plan.layers.push_back(std::move(lp));
  }
  const Scalar before = static_cast<Scalar>(model.parameter_count());
  plan.achieved_rate = 1.0 - static_cast<Scalar>(params_after(model, counts)) / before;
  return plan;
}

}  // namespace

PruningPlan build_plan(const nn::ConvBackbone& model, Scalar target_rate) {
  require(target_rate > 0 && target_rate < 1, "build_plan: target rate must be in (0,1)");
  const size_t n_layers = model.convs.size();
  std::vector<int> counts(n_layers, 0);
  std::vector<int> max_remove(n_layers, 0);
  for (size_t l = 0; l < n_layers; ++l) {
    max_remove[l] = model.convs[l].out_channels - 1;  // always keep one filter
    counts[l] = std::clamp(
        static_cast<int>(std::lround(target_rate * model.convs[l].out_channels)), 0,
        max_remove[l]);
  }

  const Scalar before = static_cast<Scalar>(model.parameter_count());
  auto rate_of = [&](const std::vector<int>& c) {
    return 1.0 - static_cast<Scalar>(params_after(model, c)) / before;
  };

  // Largest layers first for the single-filter adjustments.
  std::vector<size_t> order(n_layers);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const auto size_of = [&](size_t l) {
      return model.convs[l].weight.value.size() + model.convs[l].bias.value.size();
    };
    return size_of(a) > size_of(b);
  });

  Scalar err = std::abs(rate_of(counts) - target_rate);
  int guard = 0;
  const int guard_limit = 4 * static_cast<int>(
      std::accumulate(max_remove.begin(), max_remove.end(), 0));
  while (err > 0.02 && guard++ < guard_limit) {
    bool improved = false;
    for (size_t l : order) {
      for (int delta : {+1, -1}) {
        const int next = counts[l] + delta;
        if (next < 0 || next > max_remove[l]) continue;
        std::vector<int> trial = counts;
        trial[l] = next;
        const Scalar trial_err = std::abs(rate_of(trial) - target_rate);
        if (trial_err < err) {
          counts = std::move(trial);
          err = trial_err;
          improved = true;
          break;
        }
      }
      if (improved) break;
    }
    if (!improved) break;
  }
  return finalize_plan(model, counts, target_rate);
}

PruningPlan build_plan_pairwise(const nn::ConvBackbone& model, Scalar distance_threshold) {
  require(distance_threshold >= 0, "build_plan_pairwise: negative threshold");
  PruningPlan plan;
  plan.target_rate = 0;
  std::vector<int> counts(model.convs.size(), 0);
  for (size_t l = 0; l < model.convs.size(); ++l) {
    const Matrix& w = model.convs[l].weight.value;
    std::vector<bool> drop(static_cast<size_t>(w.rows()), false);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      if (drop[static_cast<size_t>(i)]) continue;
      for (Eigen::Index j = i + 1; j < w.rows(); ++j) {
        if (drop[static_cast<size_t>(j)]) continue;
        if ((w.row(i) - w.row(j)).norm() <= distance_threshold) {
          drop[static_cast<size_t>(j)] = true;
        }
      }
    }
    LayerPrune lp;
    lp.layer = model.convs[l].weight.name;
    int kept = 0;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      if (drop[static_cast<size_t>(i)] && kept + 1 < w.rows()) {
        lp.filters.push_back(static_cast<int>(i));
      } else {
        ++kept;
      }
    }
    counts[l] = static_cast<int>(lp.filters.size());
    plan.layers.push_back(std::move(lp));
  }
  const Scalar before = static_cast<Scalar>(model.parameter_count());
  plan.achieved_rate = 1.0 - static_cast<Scalar>(params_after(model, counts)) / before;
  return plan;
}

std::vector<int> kept_indices(int total, const std::vector<int>& removed) {
  std::vector<bool> drop(static_cast<size_t>(total), false);
  for (int r : removed) {
    require(r >= 0 && r < total, "kept_indices: removal index out of range");
    require(!drop[static_cast<size_t>(r)], "kept_indices: duplicate removal index");
    drop[static_cast<size_t>(r)] = true;
  }
  std::vector<int> kept;
  for (int i = 0; i < total; ++i) {
    if (!drop[static_cast<size_t>(i)]) kept.push_back(i);
  }
  return kept;
}

Scalar plan_rate(const nn::ConvBackbone& model, const PruningPlan& plan) {
  require(plan.layers.size() == model.convs.size(), "plan_rate: layer count mismatch");
  std::vector<int> counts;
  for (const auto& lp : plan.layers) counts.push_back(static_cast<int>(lp.filters.size()));
  return 1.0 -
         static_cast<Scalar>(params_after(model, counts)) /
             static_cast<Scalar>(model.parameter_count());
}

nn::ConvBackbone apply_plan(const nn::ConvBackbone& model, const PruningPlan& plan) {
  require(plan.layers.size() == model.convs.size(), "apply_plan: layer count mismatch");
  const auto& spec = model.spec();

  nn::ArchitectureSpec pruned_spec = spec;
  std::vector<std::vector<int>> keep(model.convs.size());
  for (size_t l = 0; l < model.convs.size(); ++l) {
    require(plan.layers[l].layer == model.convs[l].weight.name,
            "apply_plan: layer name mismatch at " + plan.layers[l].layer);
    keep[l] = kept_indices(model.convs[l].out_channels, plan.layers[l].filters);
    require(!keep[l].empty(), "apply_plan: plan removes every filter of " + plan.layers[l].layer);
    pruned_spec.channels[l] = static_cast<int>(keep[l].size());
  }

  nn::ConvBackbone pruned(pruned_spec, 0, model.name());
  const int kk = spec.kernel * spec.kernel;
  for (size_t l = 0; l < model.convs.size(); ++l) {
    const std::vector<int> in_keep =
        l == 0 ? kept_indices(spec.in_channels, {}) : keep[l - 1];
    const nn::Conv2d& src = model.convs[l];
    nn::Conv2d& dst = pruned.convs[l];
    for (size_t r = 0; r < keep[l].size(); ++r) {
      for (size_t c = 0; c < in_keep.size(); ++c) {
        dst.weight.value.block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c) * kk,
                               1, kk) =
            src.weight.value.block(keep[l][r], static_cast<Eigen::Index>(in_keep[c]) * kk, 1, kk);
      }
      dst.bias.value(static_cast<Eigen::Index>(r), 0) = src.bias.value(keep[l][r], 0);
    }
    dst.weight.momentum.setZero();
    dst.bias.momentum.setZero();
    if (spec.batchnorm) {
      const nn::BatchNorm2d& sbn = model.bns[l];
      nn::BatchNorm2d& dbn = pruned.bns[l];
      for (size_t r = 0; r < keep[l].size(); ++r) {
        const Eigen::Index i = static_cast<Eigen::Index>(r);
        dbn.gamma.value(i, 0) = sbn.gamma.value(keep[l][r], 0);
        dbn.beta.value(i, 0) = sbn.beta.value(keep[l][r], 0);
        dbn.running_mean(i) = sbn.running_mean(keep[l][r]);
        dbn.running_var(i) = sbn.running_var(keep[l][r]);
      }
    }
  }
  return pruned;
}

void save_plan(const PruningPlan& plan, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "save_plan: cannot open " + path);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", plan.target_rate);
  out << "target_rate " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", plan.achieved_rate);
  out << "achieved_rate " << buf << "\n";
  for (const auto& lp : plan.layers) {
    out << "layer " << lp.layer << " remove";
    for (int f : lp.filters) out << " " << f;
    out << "\n";
  }
}

PruningPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_plan: cannot open " + path);
  PruningPlan plan;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream iss(line);
    std::string key;
    iss >> key;
    if (key == "target_rate") {
      iss >> plan.target_rate;
    } else if (key == "achieved_rate") {
      iss >> plan.achieved_rate;
    } else if (key == "layer") {
      LayerPrune lp;
      std::string remove_kw;
      iss >> lp.layer >> remove_kw;
      require(remove_kw == "remove", "load_plan: malformed layer line");
      int f = 0;
      while (iss >> f) lp.filters.push_back(f);
      plan.layers.push_back(std::move(lp));
    } else if (!key.empty()) {
      require(false, "load_plan: unknown key " + key);
    }
  }
  return plan;
}

}  // namespace tagfex::prune
