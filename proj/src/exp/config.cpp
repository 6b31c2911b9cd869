// SPDX-License-Identifier: Apache-2.0
#include "tagfex/exp/config.hpp"

#include <cstdlib>
#include <fstream>

namespace tagfex::exp {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

/// Applies `fn` to each present key and rejects keys outside `allowed`.
class StrictObject {
 public:
  StrictObject(const json& j, std::string scope) : j_(j), scope_(std::move(scope)) {
    require(j.is_object(), "config: " + scope_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& target) {
    allowed_.push_back(key);
    if (j_.contains(key)) {
      try {
        target = j_.at(key).get<T>();
      } catch (const json::exception&) {
        require(false, "config: bad value type for " + scope_ + "." + key);
      }
    }
  }

  const json* child(const char* key) {
    allowed_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  /// Call after all reads: rejects any key not claimed above.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      bool known = false;
      for (const char* k : allowed_) {
        if (key == k) {
          known = true;
          break;
        }
      }
      require(known, "config: unknown key " + scope_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string scope_;
  std::vector<const char*> allowed_;
};

void parse_split(const json& j, data::SplitSpec& s) {
  StrictObject o(j, "dataset.split");
  o.read("total_classes", s.total_classes);
  o.read("base_size", s.base_size);
  o.read("increment_size", s.increment_size);
  o.read("class_order_seed", s.class_order_seed);
  o.finish();
}

void parse_collision(const json& j, data::CollisionSpec& c) {
  StrictObject o(j, "dataset.collision");
  o.read("image_size", c.image_size);
  o.read("classes_per_task", c.classes_per_task);
  if (const json* palette = o.child("color_palette")) {
    c.color_palette.clear();
    for (const auto& entry : *palette) {
      require(entry.is_array() && entry.size() == 3, "config: palette entries must be RGB");
      c.color_palette.push_back({entry[0].get<Scalar>(), entry[1].get<Scalar>(),
                                 entry[2].get<Scalar>()});
    }
  }
  o.read("shape_set", c.shape_set);
  o.read("position_jitter", c.position_jitter);
  o.read("area_min_fraction", c.area_min_fraction);
  o.read("area_max_fraction", c.area_max_fraction);
  o.read("color_jitter", c.color_jitter);
  o.read("background", c.background);
  o.read("background_noise", c.background_noise);
  o.read("samples_per_class", c.samples_per_class);
  o.read("test_samples_per_class", c.test_samples_per_class);
  o.finish();
}

void parse_dataset(const json& j, DatasetConfig& d) {
  StrictObject o(j, "dataset");
  o.read("kind", d.kind);
  o.read("path", d.path);
  if (const json* split = o.child("split")) parse_split(*split, d.split);
  if (const json* collision = o.child("collision")) parse_collision(*collision, d.collision);
  o.finish();
}

void parse_backbone(const json& j, nn::ArchitectureSpec& b) {
  StrictObject o(j, "backbone");
  o.read("in_channels", b.in_channels);
  o.read("input_size", b.input_size);
  o.read("kernel", b.kernel);
  o.read("stride", b.stride);
  o.read("pad", b.pad);
  o.read("channels", b.channels);
  o.read("batchnorm", b.batchnorm);
  o.finish();
}

void parse_optimizer(const json& j, nn::OptimizerSpec& s) {
  StrictObject o(j, "optimizer");
  std::string method = "sgd";
  o.read("method", method);
  require(method == "sgd", "config: optimizer.method must be \"sgd\"");
  o.read("learning_rate", s.learning_rate);
  o.read("momentum", s.momentum);
  o.read("weight_decay", s.weight_decay);
  o.read("epochs_per_task", s.epochs_per_task);
  o.read("batch_size", s.batch_size);
  o.read("cosine_schedule", s.cosine_schedule);
  o.finish();
}

void parse_augment(const json& j, data::AugmentPolicy& a) {
  StrictObject o(j, "ssl.augment");
  o.read("crop_min_scale", a.crop_min_scale);
  o.read("crop_max_scale", a.crop_max_scale);
  o.read("flip_prob", a.flip_prob);
  o.read("color_jitter_prob", a.color_jitter_prob);
  o.read("brightness", a.brightness);
  o.read("contrast", a.contrast);
  o.read("saturation", a.saturation);
  o.read("hue", a.hue);
  o.read("grayscale_prob", a.grayscale_prob);
  o.finish();
}

void parse_ssl(const json& j, ssl::SslConfig& s, data::AugmentPolicy& a) {
  StrictObject o(j, "ssl");
  o.read("temperature", s.temperature);
  o.read("projection_hidden", s.projection_hidden);
  o.read("projection_out", s.projection_out);
  o.read("symmetric_infonce", s.symmetric_infonce);
  if (const json* augment = o.child("augment")) parse_augment(*augment, a);
  o.finish();
}

void parse_merge(const json& j, MergeConfig& m) {
  StrictObject o(j, "merge");
  o.read("heads", m.heads);
  o.read("record_interval", m.record_interval);
  o.read("probe_batch", m.probe_batch);
  o.finish();
}

void parse_loss_weights(const json& j, model::LossWeights& w) {
  StrictObject o(j, "loss_weights");
  o.read("lambda_ta", w.lambda_ta);
  o.read("lambda_mcls", w.lambda_mcls);
  o.finish();
}

void parse_ablation(const json& j, AblationFlags& a) {
  StrictObject o(j, "ablation");
  o.read("der_baseline", a.der_baseline);
  o.read("disable_transfer", a.disable_transfer);
  o.read("disable_continual_ta", a.disable_continual_ta);
  o.read("disable_merge", a.disable_merge);
  o.read("t0_merge_enabled", a.t0_merge_enabled);
  o.read("prune", a.prune);
  o.read("prune_target_rate", a.prune_target_rate);
  o.read("ta_current_task_only", a.ta_current_task_only);
  o.read("mcls_current_task_only", a.mcls_current_task_only);
  o.read("transfer_current_task_only", a.transfer_current_task_only);
  o.read("transfer_current_task_support", a.transfer_current_task_support);
  o.finish();
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  StrictObject o(j, "config");
  if (const json* dataset = o.child("dataset")) parse_dataset(*dataset, cfg.dataset);
  o.read("rehearsal_capacity", cfg.rehearsal_capacity);
  if (const json* backbone = o.child("backbone")) parse_backbone(*backbone, cfg.backbone);
  if (const json* optimizer = o.child("optimizer")) parse_optimizer(*optimizer, cfg.optimizer);
  if (const json* weights = o.child("loss_weights")) parse_loss_weights(*weights, cfg.loss_weights);
  if (const json* ssl = o.child("ssl")) parse_ssl(*ssl, cfg.ssl, cfg.augment);
  if (const json* merge = o.child("merge")) parse_merge(*merge, cfg.merge);
  if (const json* ablation = o.child("ablation")) parse_ablation(*ablation, cfg.ablation);
  o.read("cka_probe_size", cfg.cka_probe_size);
  o.read("seed", cfg.seed);
  o.read("output_dir", cfg.output_dir);
  o.finish();
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    require(false, "config: parse error in " + path + ": " + e.what());
  }
  return parse_config(j);
}

void validate_config(const ExperimentConfig& cfg) {
  require(cfg.dataset.kind == "collision" || cfg.dataset.kind == "directory",
          "config: dataset.kind must be collision or directory");
  if (cfg.dataset.kind == "directory") {
    require(!cfg.dataset.path.empty(), "config: dataset.path required for directory datasets");
    data::validate_split_spec(cfg.dataset.split);
  }
  require(cfg.rehearsal_capacity >= 0, "config: negative rehearsal capacity");
  require(cfg.optimizer.epochs_per_task > 0 && cfg.optimizer.batch_size >= 2,
          "config: need epochs >= 1 and batch size >= 2");
  require(std::isfinite(cfg.loss_weights.lambda_ta) && cfg.loss_weights.lambda_ta >= 0,
          "config: lambda_ta must be finite and nonnegative");
  require(std::isfinite(cfg.loss_weights.lambda_mcls) && cfg.loss_weights.lambda_mcls >= 0,
          "config: lambda_mcls must be finite and nonnegative");
  require(cfg.ssl.temperature > 0, "config: ssl.temperature must be positive");
  require(cfg.merge.heads >= 1 && cfg.backbone.feature_dim() % cfg.merge.heads == 0,
          "config: merge.heads must divide the backbone feature dim");
  require(cfg.merge.record_interval >= 1, "config: merge.record_interval must be >= 1");
  require(cfg.ablation.prune_target_rate > 0 && cfg.ablation.prune_target_rate < 1,
          "config: prune_target_rate must be in (0,1)");
  if (cfg.ablation.der_baseline) {
    require(!cfg.ablation.disable_transfer && !cfg.ablation.disable_continual_ta &&
                !cfg.ablation.disable_merge,
            "config: der_baseline already turns the framework additions off; leave the "
            "disable_* flags at their defaults");
  }
  require(cfg.backbone.spatial_extent() >= 1, "config: backbone collapses the input");
  require(cfg.cka_probe_size >= 2, "config: cka_probe_size must be >= 2");
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["dataset"]["kind"] = cfg.dataset.kind;
  j["dataset"]["path"] = cfg.dataset.path;
  j["dataset"]["split"] = {{"total_classes", cfg.dataset.split.total_classes},
                           {"base_size", cfg.dataset.split.base_size},
                           {"increment_size", cfg.dataset.split.increment_size},
                           {"class_order_seed", cfg.dataset.split.class_order_seed}};
  ordered_json palette = ordered_json::array();
  for (const auto& c : cfg.dataset.collision.color_palette) palette.push_back({c[0], c[1], c[2]});
  j["dataset"]["collision"] = {
      {"image_size", cfg.dataset.collision.image_size},
      {"classes_per_task", cfg.dataset.collision.classes_per_task},
      {"color_palette", palette},
      {"shape_set", cfg.dataset.collision.shape_set},
      {"position_jitter", cfg.dataset.collision.position_jitter},
      {"area_min_fraction", cfg.dataset.collision.area_min_fraction},
      {"area_max_fraction", cfg.dataset.collision.area_max_fraction},
      {"color_jitter", cfg.dataset.collision.color_jitter},
      {"background", cfg.dataset.collision.background},
      {"background_noise", cfg.dataset.collision.background_noise},
      {"samples_per_class", cfg.dataset.collision.samples_per_class},
      {"test_samples_per_class", cfg.dataset.collision.test_samples_per_class}};
  j["rehearsal_capacity"] = cfg.rehearsal_capacity;
  j["backbone"] = {{"in_channels", cfg.backbone.in_channels},
                   {"input_size", cfg.backbone.input_size},
                   {"kernel", cfg.backbone.kernel},
                   {"stride", cfg.backbone.stride},
                   {"pad", cfg.backbone.pad},
                   {"channels", cfg.backbone.channels},
                   {"batchnorm", cfg.backbone.batchnorm}};
  j["optimizer"] = {{"method", "sgd"},
                    {"learning_rate", cfg.optimizer.learning_rate},
                    {"momentum", cfg.optimizer.momentum},
                    {"weight_decay", cfg.optimizer.weight_decay},
                    {"epochs_per_task", cfg.optimizer.epochs_per_task},
                    {"batch_size", cfg.optimizer.batch_size},
                    {"cosine_schedule", cfg.optimizer.cosine_schedule}};
  j["loss_weights"] = {{"lambda_ta", cfg.loss_weights.lambda_ta},
                       {"lambda_mcls", cfg.loss_weights.lambda_mcls}};
  j["ssl"] = {{"temperature", cfg.ssl.temperature},
              {"projection_hidden", cfg.ssl.projection_hidden},
              {"projection_out", cfg.ssl.projection_out},
              {"symmetric_infonce", cfg.ssl.symmetric_infonce},
              {"augment",
               {{"crop_min_scale", cfg.augment.crop_min_scale},
                {"crop_max_scale", cfg.augment.crop_max_scale},
                {"flip_prob", cfg.augment.flip_prob},
                {"color_jitter_prob", cfg.augment.color_jitter_prob},
                {"brightness", cfg.augment.brightness},
                {"contrast", cfg.augment.contrast},
                {"saturation", cfg.augment.saturation},
                {"hue", cfg.augment.hue},
                {"grayscale_prob", cfg.augment.grayscale_prob}}}};
  j["merge"] = {{"heads", cfg.merge.heads},
                {"record_interval", cfg.merge.record_interval},
                {"probe_batch", cfg.merge.probe_batch}};
  j["ablation"] = {{"der_baseline", cfg.ablation.der_baseline},
                   {"disable_transfer", cfg.ablation.disable_transfer},
                   {"disable_continual_ta", cfg.ablation.disable_continual_ta},
                   {"disable_merge", cfg.ablation.disable_merge},
                   {"t0_merge_enabled", cfg.ablation.t0_merge_enabled},
                   {"prune", cfg.ablation.prune},
                   {"prune_target_rate", cfg.ablation.prune_target_rate},
                   {"ta_current_task_only", cfg.ablation.ta_current_task_only},
                   {"mcls_current_task_only", cfg.ablation.mcls_current_task_only},
                   {"transfer_current_task_only", cfg.ablation.transfer_current_task_only},
                   {"transfer_current_task_support", cfg.ablation.transfer_current_task_support}};
  j["cka_probe_size"] = cfg.cka_probe_size;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  ordered_json j = config_to_json(cfg);
  j.erase("output_dir");  // relocation does not invalidate checkpoints
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::pair<std::string, ExperimentConfig>> ablation_matrix(
    const ExperimentConfig& base) {
  std::vector<std::pair<std::string, ExperimentConfig>> grid;
  for (const bool continual : {false, true}) {
    for (const bool transfer : {false, true}) {
      ExperimentConfig cfg = base;
      cfg.ablation.der_baseline = false;
      cfg.ablation.disable_merge = false;
      cfg.ablation.disable_continual_ta = !continual;
      cfg.ablation.disable_transfer = !transfer;
      std::string name = continual ? "continual_ta_merge" : "ta_merge";
      if (transfer) name += "_transfer";
      grid.emplace_back(std::move(name), std::move(cfg));
    }
  }
  ExperimentConfig der = base;
  der.ablation = AblationFlags{};
  der.ablation.der_baseline = true;
  der.ablation.prune = base.ablation.prune;
  der.ablation.prune_target_rate = base.ablation.prune_target_rate;
  grid.emplace_back("der_baseline", std::move(der));
  return grid;
}

std::string default_output_root() {
  if (const char* env = std::getenv("TAGFEX_OUTPUT_ROOT")) return env;
  return "runs";
}

}  // namespace tagfex::exp
