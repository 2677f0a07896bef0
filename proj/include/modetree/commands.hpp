#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "modetree/metrics.hpp"
#include "modetree/plnet.hpp"
#include "modetree/rationale.hpp"
#include "modetree/tree.hpp"

namespace modetree {

struct RunConfig {
  std::string subcommand;
  int threads = 1;
  std::uint64_t seed = 42;

  // gen
  SyntheticSpec synth;
  // nullopt: planted net. Otherwise a random net with these hidden widths.
  std::optional<std::vector<std::size_t>> hidden;
  std::string category = "planted";

  // Inputs.
  std::string data_path;
  std::string net_path;
  std::string tree_path;
  std::string parts_path;
  std::string ablations_path;
  std::string maps_path;

  // Outputs. out_path is the main output file; out_dir holds explain reports.
  std::string out_path;
  std::string out_dir;
  std::string scale_path;

  HyperParams hyper;
  std::vector<std::string> ids;
  std::vector<int> layers;
  ThresholdMode threshold = ThresholdMode::kZero;
  ScaleScope scale_scope = ScaleScope::kAllImages;
  bool svg = false;
};

// Checks that inputs exist and output directories are writable targets.
// Throws ConfigError naming the offending path.
void validate_paths(const RunConfig& config);

// Each command writes its files and prints a short summary to out.
void cmd_gen(const RunConfig& config, std::ostream& out);
void cmd_learn(const RunConfig& config, std::ostream& out);
void cmd_explain(const RunConfig& config, std::ostream& out);
void cmd_evaluate(const RunConfig& config, std::ostream& out);
void cmd_ablate(const RunConfig& config, std::ostream& out);
// Feature-map JSONL (header {"L", "D", "category"}, then records with id,
// positive, y, and flat (h, w, d) arrays "x" and "grad") to a dataset plus
// an s_d sidecar.
void cmd_aggregate(const RunConfig& config, std::ostream& out);

std::vector<FeatureMapRecord> load_feature_maps(const std::string& path, std::string* category);

// Dispatches on config.subcommand.
void run_command(const RunConfig& config, std::ostream& out);

}  // namespace modetree
