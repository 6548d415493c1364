#pragma once

#include <map>
#include <string>
#include <vector>

#include "dhbe/config.hpp"
#include "dhbe/metrics.hpp"

namespace dhbe {

inline constexpr const char* kToolVersion = "0.2.0";

struct ArtifactEntry {
  std::string name;
  std::string path;  // relative to the run directory
  std::string sha256;
};

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string config_hash;
  std::vector<ArtifactEntry> artifacts;
  std::map<std::string, double> stage_seconds;
  std::string error_stage;    // empty on success
  std::string error_message;  // empty on success

  const ArtifactEntry* find(const std::string& name) const;
};

void save_manifest(const RunManifest& m, const std::string& path);
RunManifest load_manifest(const std::string& path);
// Recomputes every artifact hash against its file; throws on mismatch.
void verify_manifest(const RunManifest& m, const std::string& run_dir);

// Executes ingest -> attack -> erase -> eval, persisting checkpoints,
// reports, loss history and the manifest under cfg.out. Deterministic for a
// fixed (config, seed) on one device. On stage failure the manifest (with
// the failed stage recorded) and any partial artifacts are kept, then the
// error propagates.
RunManifest run_pipeline(const RunConfig& cfg);

// Aggregates reports from finished run directories into a markdown + CSV
// table (plus an activation-difference boxplot when the reports carry
// summaries). Returns the paths written.
std::vector<std::string> emit_report(const std::vector<std::string>& run_dirs,
                                     const std::string& out_dir);

}  // namespace dhbe
