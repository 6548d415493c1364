#include "dhbe/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace dhbe {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      j.at(key).get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

void parse_toy(const json& j, ToySpec& t) {
  check_keys(j, "dataset.toy",
             {"train_n", "test_n", "height", "width", "pos_sigma", "tint_wash",
              "ambiguous_frac"});
  get_to(j, "train_n", t.train_n);
  get_to(j, "test_n", t.test_n);
  get_to(j, "height", t.height);
  get_to(j, "width", t.width);
  get_to(j, "pos_sigma", t.pos_sigma);
  get_to(j, "tint_wash", t.tint_wash);
  get_to(j, "ambiguous_frac", t.ambiguous_frac);
}

void parse_dataset(const json& j, DatasetSpec& d) {
  check_keys(j, "dataset", {"name", "root", "subset_size", "toy"});
  get_to(j, "name", d.name);
  get_to(j, "root", d.root);
  get_to(j, "subset_size", d.subset_size);
  if (j.contains("toy")) parse_toy(j.at("toy"), d.toy);
}

void parse_trigger(const json& j, TriggerConfig& t) {
  check_keys(j, "attack.trigger",
             {"height", "width", "pattern", "solid_value", "file", "placement", "fixed_row",
              "fixed_col", "name"});
  get_to(j, "height", t.height);
  get_to(j, "width", t.width);
  get_to(j, "pattern", t.pattern);
  get_to(j, "solid_value", t.solid_value);
  get_to(j, "file", t.file);
  get_to(j, "placement", t.placement);
  get_to(j, "fixed_row", t.fixed_row);
  get_to(j, "fixed_col", t.fixed_col);
  get_to(j, "name", t.name);
}

void parse_schedule(const json& j, TrainSchedule& s) {
  check_keys(j, "attack.schedule",
             {"epochs", "batch_size", "lr", "momentum", "weight_decay", "decay_epochs",
              "decay_factor", "augment", "crop_pad"});
  get_to(j, "epochs", s.epochs);
  get_to(j, "batch_size", s.batch_size);
  get_to(j, "lr", s.lr);
  get_to(j, "momentum", s.momentum);
  get_to(j, "weight_decay", s.weight_decay);
  get_to(j, "decay_epochs", s.decay_epochs);
  get_to(j, "decay_factor", s.decay_factor);
  get_to(j, "augment", s.augment);
  get_to(j, "crop_pad", s.crop_pad);
}

void parse_attack(const json& j, AttackConfig& a) {
  check_keys(j, "attack",
             {"kind", "arch", "target_class", "trigger", "n_poison", "poison_fraction",
              "clean_label", "trojan", "train_clean_reference", "schedule"});
  get_to(j, "kind", a.kind);
  get_to(j, "arch", a.arch);
  get_to(j, "target_class", a.target_class);
  if (j.contains("trigger")) parse_trigger(j.at("trigger"), a.trigger);
  get_to(j, "n_poison", a.n_poison);
  get_to(j, "poison_fraction", a.poison_fraction);
  if (j.contains("clean_label")) {
    const auto& c = j.at("clean_label");
    check_keys(c, "attack.clean_label", {"perturb_budget", "pgd_steps"});
    get_to(c, "perturb_budget", a.clean_label.perturb_budget);
    get_to(c, "pgd_steps", a.clean_label.pgd_steps);
  }
  if (j.contains("trojan")) {
    const auto& t = j.at("trojan");
    check_keys(t, "attack.trojan",
               {"n_neurons", "trigger_h", "trigger_w", "ascent_steps", "ascent_step_size",
                "probe_batch", "finetune_epochs", "finetune_lr", "finetune_batch"});
    get_to(t, "n_neurons", a.trojan.n_neurons);
    get_to(t, "trigger_h", a.trojan.trigger_h);
    get_to(t, "trigger_w", a.trojan.trigger_w);
    get_to(t, "ascent_steps", a.trojan.ascent_steps);
    get_to(t, "ascent_step_size", a.trojan.ascent_step_size);
    get_to(t, "probe_batch", a.trojan.probe_batch);
    get_to(t, "finetune_epochs", a.trojan.finetune_epochs);
    get_to(t, "finetune_lr", a.trojan.finetune_lr);
    get_to(t, "finetune_batch", a.trojan.finetune_batch);
  }
  get_to(j, "train_clean_reference", a.train_clean_reference);
  if (j.contains("schedule")) parse_schedule(j.at("schedule"), a.schedule);
}

void parse_distill(const json& j, DistillConfig& d) {
  check_keys(j, "erase.distill",
             {"lambda", "k", "batch_size", "student_lr", "gen_lr", "trigger_gen_lr",
              "student_momentum", "student_weight_decay", "iterations_per_epoch", "epochs",
              "lr_decay_epochs", "lr_decay_factor", "trigger_h", "trigger_w", "trigger_scale",
              "latent_dim", "gen_base_channels", "student_train_mode"});
  get_to(j, "lambda", d.lambda);
  get_to(j, "k", d.k);
  get_to(j, "batch_size", d.batch_size);
  get_to(j, "student_lr", d.student_lr);
  get_to(j, "gen_lr", d.gen_lr);
  get_to(j, "trigger_gen_lr", d.trigger_gen_lr);
  get_to(j, "student_momentum", d.student_momentum);
  get_to(j, "student_weight_decay", d.student_weight_decay);
  get_to(j, "iterations_per_epoch", d.iterations_per_epoch);
  get_to(j, "epochs", d.epochs);
  get_to(j, "lr_decay_epochs", d.lr_decay_epochs);
  get_to(j, "lr_decay_factor", d.lr_decay_factor);
  get_to(j, "trigger_h", d.trigger_h);
  get_to(j, "trigger_w", d.trigger_w);
  get_to(j, "trigger_scale", d.trigger_scale);
  get_to(j, "latent_dim", d.latent_dim);
  get_to(j, "gen_base_channels", d.gen_base_channels);
  get_to(j, "student_train_mode", d.student_train_mode);
}

void parse_erase(const json& j, EraseConfig& e) {
  check_keys(j, "erase",
             {"method", "distill", "finetune", "finetune_subset_size",
              "checkpoint_every_epochs"});
  get_to(j, "method", e.method);
  if (j.contains("distill")) parse_distill(j.at("distill"), e.distill);
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    check_keys(f, "erase.finetune",
               {"epochs", "lr", "momentum", "batch_size", "samples_per_epoch", "decay_factor"});
    get_to(f, "epochs", e.finetune.epochs);
    get_to(f, "lr", e.finetune.lr);
    get_to(f, "momentum", e.finetune.momentum);
    get_to(f, "batch_size", e.finetune.batch_size);
    get_to(f, "samples_per_epoch", e.finetune.samples_per_epoch);
    get_to(f, "decay_factor", e.finetune.decay_factor);
  }
  get_to(j, "finetune_subset_size", e.finetune_subset_size);
  get_to(j, "checkpoint_every_epochs", e.checkpoint_every_epochs);
}

void parse_eval(const json& j, EvalConfig& e) {
  check_keys(j, "eval",
             {"amplifications", "activation_layers", "activation_norms", "sample_count"});
  get_to(j, "amplifications", e.amplifications);
  get_to(j, "activation_layers", e.activation_layers);
  get_to(j, "activation_norms", e.activation_norms);
  get_to(j, "sample_count", e.sample_count);
}

}  // namespace

void RunConfig::validate() const {
  if (dataset.name != "toy" && dataset.name != "cifar10")
    throw ConfigError("dataset.name must be toy or cifar10");
  if (attack.kind != "badnets" && attack.kind != "clean-label" && attack.kind != "trojaning" &&
      attack.kind != "none")
    throw ConfigError("attack.kind must be badnets, clean-label, trojaning or none");
  parse_arch_id(attack.arch);
  if (attack.target_class < 0) throw ConfigError("attack.target_class must be >= 0");
  if (attack.n_poison < 0) throw ConfigError("attack.n_poison must be >= 0");
  if (attack.n_poison == 0 &&
      (attack.poison_fraction < 0.0 || attack.poison_fraction > 1.0))
    throw ConfigError("attack.poison_fraction must be in [0,1]");
  if (erase.method != "dhbe" && erase.method != "finetune" && erase.method != "none")
    throw ConfigError("erase.method must be dhbe, finetune or none");
  if (erase.method == "dhbe") erase.distill.validate();
  for (int k : eval.amplifications)
    if (k != 1 && k != 4 && k != 9) throw ConfigError("eval.amplifications must be 1, 4 or 9");
  for (const auto& l : eval.activation_layers)
    if (l != "fc" && l != "last-conv")
      throw ConfigError("eval.activation_layers must be fc or last-conv");
  for (const auto& n : eval.activation_norms)
    if (n != "l1" && n != "linf") throw ConfigError("eval.activation_norms must be l1 or linf");
  if (eval.sample_count < 1) throw ConfigError("eval.sample_count must be positive");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config", {"seed", "out", "dataset", "attack", "erase", "eval"});
  RunConfig cfg;
  get_to(j, "seed", cfg.seed);
  get_to(j, "out", cfg.out);
  if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset);
  if (j.contains("attack")) parse_attack(j.at("attack"), cfg.attack);
  if (j.contains("erase")) parse_erase(j.at("erase"), cfg.erase);
  if (j.contains("eval")) parse_eval(j.at("eval"), cfg.eval);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out;
  j["dataset"] = {{"name", cfg.dataset.name},
                  {"root", cfg.dataset.root},
                  {"subset_size", cfg.dataset.subset_size},
                  {"toy",
                   {{"train_n", cfg.dataset.toy.train_n},
                    {"test_n", cfg.dataset.toy.test_n},
                    {"height", cfg.dataset.toy.height},
                    {"width", cfg.dataset.toy.width},
                    {"pos_sigma", cfg.dataset.toy.pos_sigma},
                    {"tint_wash", cfg.dataset.toy.tint_wash},
                    {"ambiguous_frac", cfg.dataset.toy.ambiguous_frac}}}};
  j["attack"] = {{"kind", cfg.attack.kind},
                 {"arch", cfg.attack.arch},
                 {"target_class", cfg.attack.target_class},
                 {"trigger",
                  {{"height", cfg.attack.trigger.height},
                   {"width", cfg.attack.trigger.width},
                   {"pattern", cfg.attack.trigger.pattern},
                   {"solid_value", cfg.attack.trigger.solid_value},
                   {"file", cfg.attack.trigger.file},
                   {"placement", cfg.attack.trigger.placement},
                   {"fixed_row", cfg.attack.trigger.fixed_row},
                   {"fixed_col", cfg.attack.trigger.fixed_col},
                   {"name", cfg.attack.trigger.name}}},
                 {"n_poison", cfg.attack.n_poison},
                 {"poison_fraction", cfg.attack.poison_fraction},
                 {"clean_label",
                  {{"perturb_budget", cfg.attack.clean_label.perturb_budget},
                   {"pgd_steps", cfg.attack.clean_label.pgd_steps}}},
                 {"trojan",
                  {{"n_neurons", cfg.attack.trojan.n_neurons},
                   {"trigger_h", cfg.attack.trojan.trigger_h},
                   {"trigger_w", cfg.attack.trojan.trigger_w},
                   {"ascent_steps", cfg.attack.trojan.ascent_steps},
                   {"ascent_step_size", cfg.attack.trojan.ascent_step_size},
                   {"probe_batch", cfg.attack.trojan.probe_batch},
                   {"finetune_epochs", cfg.attack.trojan.finetune_epochs},
                   {"finetune_lr", cfg.attack.trojan.finetune_lr},
                   {"finetune_batch", cfg.attack.trojan.finetune_batch}}},
                 {"train_clean_reference", cfg.attack.train_clean_reference},
                 {"schedule",
                  {{"epochs", cfg.attack.schedule.epochs},
                   {"batch_size", cfg.attack.schedule.batch_size},
                   {"lr", cfg.attack.schedule.lr},
                   {"momentum", cfg.attack.schedule.momentum},
                   {"weight_decay", cfg.attack.schedule.weight_decay},
                   {"decay_epochs", cfg.attack.schedule.decay_epochs},
                   {"decay_factor", cfg.attack.schedule.decay_factor},
                   {"augment", cfg.attack.schedule.augment},
                   {"crop_pad", cfg.attack.schedule.crop_pad}}}};
  j["erase"] = {{"method", cfg.erase.method},
                {"distill",
                 {{"lambda", cfg.erase.distill.lambda},
                  {"k", cfg.erase.distill.k},
                  {"batch_size", cfg.erase.distill.batch_size},
                  {"student_lr", cfg.erase.distill.student_lr},
                  {"gen_lr", cfg.erase.distill.gen_lr},
                  {"trigger_gen_lr", cfg.erase.distill.trigger_gen_lr},
                  {"student_momentum", cfg.erase.distill.student_momentum},
                  {"student_weight_decay", cfg.erase.distill.student_weight_decay},
                  {"iterations_per_epoch", cfg.erase.distill.iterations_per_epoch},
                  {"epochs", cfg.erase.distill.epochs},
                  {"lr_decay_epochs", cfg.erase.distill.lr_decay_epochs},
                  {"lr_decay_factor", cfg.erase.distill.lr_decay_factor},
                  {"trigger_h", cfg.erase.distill.trigger_h},
                  {"trigger_w", cfg.erase.distill.trigger_w},
                  {"trigger_scale", cfg.erase.distill.trigger_scale},
                  {"latent_dim", cfg.erase.distill.latent_dim},
                  {"gen_base_channels", cfg.erase.distill.gen_base_channels},
                  {"student_train_mode", cfg.erase.distill.student_train_mode}}},
                {"finetune",
                 {{"epochs", cfg.erase.finetune.epochs},
                  {"lr", cfg.erase.finetune.lr},
                  {"momentum", cfg.erase.finetune.momentum},
                  {"batch_size", cfg.erase.finetune.batch_size},
                  {"samples_per_epoch", cfg.erase.finetune.samples_per_epoch},
                  {"decay_factor", cfg.erase.finetune.decay_factor}}},
                {"finetune_subset_size", cfg.erase.finetune_subset_size},
                {"checkpoint_every_epochs", cfg.erase.checkpoint_every_epochs}};
  j["eval"] = {{"amplifications", cfg.eval.amplifications},
               {"activation_layers", cfg.eval.activation_layers},
               {"activation_norms", cfg.eval.activation_norms},
               {"sample_count", cfg.eval.sample_count}};
  return j.dump(2);
}

TriggerSpec build_trigger(const TriggerConfig& tc, int channels, int target_class) {
  TriggerSpec t;
  if (tc.pattern == "checkerboard") {
    t = checkerboard_trigger(tc.height, tc.width, channels, target_class, tc.name);
  } else if (tc.pattern == "solid") {
    t.pattern = Tensor::full({tc.height, tc.width, channels},
                             static_cast<float>(tc.solid_value));
    t.target_class = target_class;
    t.name = tc.name;
  } else if (tc.pattern == "file") {
    t = load_trigger(tc.file);
    t.target_class = target_class;
  } else {
    throw ConfigError("unknown trigger pattern: " + tc.pattern);
  }
  if (tc.placement == "bottom-right") {
    t.placement = Placement::kBottomRight;
  } else if (tc.placement == "fixed") {
    t.placement = Placement::kFixed;
    t.fixed_row = tc.fixed_row;
    t.fixed_col = tc.fixed_col;
  } else if (tc.placement == "random") {
    t.placement = Placement::kRandom;
  } else {
    throw ConfigError("unknown placement: " + tc.placement);
  }
  return t;
}

}  // namespace dhbe
