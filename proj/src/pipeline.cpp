#include "dhbe/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dhbe/hash.hpp"
#include "dhbe/plot.hpp"

namespace dhbe {

namespace fs = std::filesystem;
using nlohmann::json;

const ArtifactEntry* RunManifest::find(const std::string& name) const {
  for (const auto& a : artifacts)
    if (a.name == name) return &a;
  return nullptr;
}

void save_manifest(const RunManifest& m, const std::string& path) {
  json j;
  j["tool_version"] = m.tool_version;
  j["config_hash"] = m.config_hash;
  json arts = json::array();
  for (const auto& a : m.artifacts)
    arts.push_back({{"name", a.name}, {"path", a.path}, {"sha256", a.sha256}});
  j["artifacts"] = arts;
  j["stage_seconds"] = m.stage_seconds;
  j["error_stage"] = m.error_stage;
  j["error_message"] = m.error_message;
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open manifest: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IngestionError("bad manifest " + path + ": " + e.what());
  }
  RunManifest m;
  m.tool_version = j.at("tool_version").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& a : j.at("artifacts"))
    m.artifacts.push_back({a.at("name").get<std::string>(), a.at("path").get<std::string>(),
                           a.at("sha256").get<std::string>()});
  m.stage_seconds = j.at("stage_seconds").get<std::map<std::string, double>>();
  m.error_stage = j.value("error_stage", "");
  m.error_message = j.value("error_message", "");
  return m;
}

void verify_manifest(const RunManifest& m, const std::string& run_dir) {
  for (const auto& a : m.artifacts) {
    const std::string full = (fs::path(run_dir) / a.path).string();
    const std::string h = sha256_file_hex(full);
    if (h != a.sha256)
      throw IngestionError("artifact hash mismatch for " + a.name + " (" + a.path + ")");
  }
}

namespace {

struct StageTimer {
  RunManifest& manifest;
  std::string stage;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  ~StageTimer() {
    manifest.stage_seconds[stage] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void add_artifact(RunManifest& m, const fs::path& dir, const std::string& name,
                  const std::string& rel) {
  m.artifacts.push_back({name, rel, sha256_file_hex((dir / rel).string())});
}

EvalReport evaluate_model(ModelBundle& model, const LabeledDataset& test_set,
                          const TriggerSpec& trigger, const EvalConfig& ec,
                          const std::string& model_id, uint64_t seed) {
  EvalReport r;
  r.model_id = model_id;
  r.trigger_name = trigger.name;
  r.seed = seed;
  r.acc = accuracy(model, test_set);
  for (int k : ec.amplifications) {
    const auto res = attack_success_rate(model, test_set, trigger, k);
    r.asr_by_amplification[k] = res.asr;
    r.eligible_count = res.eligible_count;
  }
  for (const auto& layer_name : ec.activation_layers) {
    const ActivationLayer layer =
        layer_name == "fc" ? ActivationLayer::kFc : ActivationLayer::kLastConv;
    for (const auto& norm_name : ec.activation_norms) {
      const DiffNorm norm = norm_name == "l1" ? DiffNorm::kL1 : DiffNorm::kLinf;
      r.activation_diffs[layer_name + "/" + norm_name] =
          activation_difference(model, test_set, trigger, layer, norm, ec.sample_count);
    }
  }
  return r;
}

}  // namespace

RunManifest run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const fs::path dir(cfg.out);
  fs::create_directories(dir);

  RunManifest manifest;
  manifest.config_hash = sha256_hex(run_config_to_json(cfg));
  {
    std::ofstream os(dir / "config.json");
    os << run_config_to_json(cfg) << "\n";
  }

  std::string stage = "ingest";
  try {
    // ---- ingest
    LabeledDataset train_set, test_set;
    {
      StageTimer t{manifest, "ingest"};
      train_set = load_dataset(cfg.dataset, Split::kTrain, cfg.seed);
      test_set = load_dataset(cfg.dataset, Split::kTest, cfg.seed);
    }
    add_artifact(manifest, dir, "config", "config.json");

    // ---- attack
    stage = "attack";
    ModelBundle teacher;
    TriggerSpec trigger;
    bool have_clean_ref = false;
    double clean_ref_acc = 0.0;
    {
      StageTimer t{manifest, "attack"};
      const ArchId arch = parse_arch_id(cfg.attack.arch);
      trigger = build_trigger(cfg.attack.trigger, train_set.channels(),
                              cfg.attack.target_class);
      const int n_poison =
          cfg.attack.n_poison > 0
              ? cfg.attack.n_poison
              : static_cast<int>(cfg.attack.poison_fraction * train_set.size() + 0.5);

      if (cfg.attack.kind == "none") {
        RngStream rt = derive_stream(cfg.seed, "train-teacher");
        teacher = train_classifier(train_set, arch, cfg.attack.schedule, rt);
      } else if (cfg.attack.kind == "badnets") {
        RngStream rp = derive_stream(cfg.seed, "poison-selection");
        auto [poisoned, record] = poison_badnets(train_set, trigger, n_poison, rp);
        record.seed = cfg.seed;
        save_poison_record(record, (dir / "poison_record.json").string());
        RngStream rt = derive_stream(cfg.seed, "train-teacher");
        teacher = train_classifier(poisoned, arch, cfg.attack.schedule, rt);
      } else if (cfg.attack.kind == "clean-label") {
        RngStream rc = derive_stream(cfg.seed, "train-clean");
        ModelBundle clean_model = train_classifier(train_set, arch, cfg.attack.schedule, rc);
        RngStream rp = derive_stream(cfg.seed, "poison-selection");
        auto [poisoned, record] = poison_clean_label(train_set, trigger, n_poison,
                                                     cfg.attack.clean_label, clean_model, rp);
        record.seed = cfg.seed;
        save_poison_record(record, (dir / "poison_record.json").string());
        RngStream rt = derive_stream(cfg.seed, "train-teacher");
        teacher = train_classifier(poisoned, arch, cfg.attack.schedule, rt);
      } else {  // trojaning
        RngStream rc = derive_stream(cfg.seed, "train-clean");
        ModelBundle clean_model = train_classifier(train_set, arch, cfg.attack.schedule, rc);
        RngStream rp = derive_stream(cfg.seed, "poison-selection");
        TrojanOptions topt = cfg.attack.trojan;
        topt.trigger_h = cfg.attack.trigger.height;
        topt.trigger_w = cfg.attack.trigger.width;
        auto [trojaned, ttrigger] = trojaning_attack(clean_model, train_set,
                                                     cfg.attack.target_class, n_poison, topt, rp);
        teacher = std::move(trojaned);
        trigger = ttrigger;
      }
      if (cfg.attack.kind != "none" && cfg.attack.train_clean_reference) {
        RngStream rr = derive_stream(cfg.seed, "train-clean-reference");
        ModelBundle ref = train_classifier(train_set, arch, cfg.attack.schedule, rr);
        clean_ref_acc = accuracy(ref, test_set);
        save_bundle(ref, (dir / "clean_reference.ckpt").string());
        add_artifact(manifest, dir, "clean_reference", "clean_reference.ckpt");
        have_clean_ref = true;
      }
      save_bundle(teacher, (dir / "teacher.ckpt").string());
      save_trigger(trigger, (dir / "trigger.json").string());
    }
    add_artifact(manifest, dir, "teacher", "teacher.ckpt");
    add_artifact(manifest, dir, "trigger", "trigger.json");
    if (fs::exists(dir / "poison_record.json"))
      add_artifact(manifest, dir, "poison_record", "poison_record.json");

    // ---- erase
    stage = "erase";
    std::optional<ModelBundle> student;
    {
      StageTimer t{manifest, "erase"};
      if (cfg.erase.method == "dhbe") {
        const int every = cfg.erase.checkpoint_every_epochs;
        EpochCallback cb = nullptr;
        if (every > 0) {
          cb = [&](int epoch, DistillEngine& eng) {
            if ((epoch + 1) % every == 0) {
              const std::string tag = "ep" + std::to_string(epoch + 1);
              save_bundle(eng.student(), (dir / ("student_" + tag + ".ckpt")).string());
              save_sample_generator(eng.sample_generator(),
                                    (dir / ("gen_" + tag + ".ckpt")).string());
              save_trigger_generator(eng.trigger_generator(),
                                     (dir / ("trigger_gen_" + tag + ".ckpt")).string());
            }
          };
        }
        auto result = run_dhbe(teacher, cfg.erase.distill, cfg.seed, cb);
        write_loss_history_csv(result.history, (dir / "losses.csv").string());
        student = std::move(result.student);
        save_bundle(*student, (dir / "student.ckpt").string());
      } else if (cfg.erase.method == "finetune") {
        RngStream rs = derive_stream(cfg.seed, "finetune-subset");
        const int want = std::min(cfg.erase.finetune_subset_size, train_set.size());
        LabeledDataset subset = stratified_subset(train_set, want, rs);
        RngStream rf = derive_stream(cfg.seed, "finetune");
        student = finetune_baseline(teacher, subset, cfg.erase.finetune, rf);
        save_bundle(*student, (dir / "student.ckpt").string());
      }
    }
    if (student) add_artifact(manifest, dir, "student", "student.ckpt");
    if (fs::exists(dir / "losses.csv")) add_artifact(manifest, dir, "losses", "losses.csv");

    // ---- eval
    stage = "eval";
    {
      StageTimer t{manifest, "eval"};
      EvalReport teacher_report =
          evaluate_model(teacher, test_set, trigger, cfg.eval, "backdoored", cfg.seed);
      save_eval_report(teacher_report, (dir / "report_backdoored.json").string());
      std::ofstream csv(dir / "report.csv");
      csv << eval_report_csv_header() << "\n" << eval_report_csv_row(teacher_report) << "\n";
      if (student) {
        EvalReport student_report = evaluate_model(*student, test_set, trigger, cfg.eval,
                                                   cfg.erase.method, cfg.seed);
        save_eval_report(student_report, (dir / "report_student.json").string());
        csv << eval_report_csv_row(student_report) << "\n";
      }
      if (have_clean_ref) {
        std::ofstream os(dir / "clean_reference_acc.txt");
        os << clean_ref_acc << "\n";
      }
    }
    add_artifact(manifest, dir, "report_backdoored", "report_backdoored.json");
    if (fs::exists(dir / "report_student.json"))
      add_artifact(manifest, dir, "report_student", "report_student.json");
    add_artifact(manifest, dir, "report_csv", "report.csv");
  } catch (const std::exception& e) {
    manifest.error_stage = stage;
    manifest.error_message = e.what();
    save_manifest(manifest, (dir / "manifest.json").string());
    throw;
  }

  save_manifest(manifest, (dir / "manifest.json").string());
  return manifest;
}

std::vector<std::string> emit_report(const std::vector<std::string>& run_dirs,
                                     const std::string& out_dir) {
  if (run_dirs.empty()) throw ContractError("emit_report needs at least one run");
  fs::create_directories(out_dir);

  struct Row {
    std::string run;
    EvalReport backdoored;
    std::optional<EvalReport> student;
  };
  std::vector<Row> rows;
  for (const auto& rd : run_dirs) {
    Row row;
    row.run = fs::path(rd).filename().string();
    row.backdoored = load_eval_report((fs::path(rd) / "report_backdoored.json").string());
    const fs::path sp = fs::path(rd) / "report_student.json";
    if (fs::exists(sp)) row.student = load_eval_report(sp.string());
    rows.push_back(std::move(row));
  }

  std::vector<std::string> written;
  const fs::path md_path = fs::path(out_dir) / "summary.md";
  {
    std::ofstream md(md_path);
    md << "| run | trigger | backdoored ACC | backdoored ASR | method | cleaned ACC | "
          "cleaned ASR |\n";
    md << "|---|---|---|---|---|---|---|\n";
    char buf[64];
    auto pct = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
      return std::string(buf);
    };
    for (const auto& r : rows) {
      md << "| " << r.run << " | " << r.backdoored.trigger_name << " | "
         << pct(r.backdoored.acc) << " | " << pct(r.backdoored.asr_by_amplification.at(1))
         << " | ";
      if (r.student)
        md << r.student->model_id << " | " << pct(r.student->acc) << " | "
           << pct(r.student->asr_by_amplification.at(1)) << " |\n";
      else
        md << "- | - | - |\n";
    }
  }
  written.push_back(md_path.string());

  const fs::path csv_path = fs::path(out_dir) / "summary.csv";
  {
    std::ofstream csv(csv_path);
    csv << "run," << eval_report_csv_header() << "\n";
    for (const auto& r : rows) {
      csv << r.run << "," << eval_report_csv_row(r.backdoored) << "\n";
      if (r.student) csv << r.run << "," << eval_report_csv_row(*r.student) << "\n";
    }
  }
  written.push_back(csv_path.string());

  // Activation-difference boxplot across models, when available.
  bool any_diffs = false;
  for (const auto& r : rows) any_diffs |= r.backdoored.activation_diffs.count("fc/l1") > 0;
  if (any_diffs) {
    SvgPlot plot(640, 420, "Trigger response at the classifier head", "model",
                 "l1 activation difference");
    int slot = 0;
    const char* colors[] = {"#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085"};
    for (const auto& r : rows) {
      if (auto it = r.backdoored.activation_diffs.find("fc/l1");
          it != r.backdoored.activation_diffs.end())
        plot.add_box(slot++, it->second, colors[slot % 6], r.run + ":bd");
      if (r.student)
        if (auto it = r.student->activation_diffs.find("fc/l1");
            it != r.student->activation_diffs.end())
          plot.add_box(slot++, it->second, colors[slot % 6], r.run + ":" + r.student->model_id);
    }
    const fs::path svg_path = fs::path(out_dir) / "activation_diffs.svg";
    plot.save(svg_path.string());
    written.push_back(svg_path.string());
  }
  return written;
}

}  // namespace dhbe
