#include "modetree/commands.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "modetree/error.hpp"
#include "modetree/explain.hpp"

namespace fs = std::filesystem;

namespace modetree {

namespace {

void require_input(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(fmt::format("missing {} path", what));
  if (!fs::is_regular_file(path)) throw FormatError(fmt::format("{} not found: {}", what, path));
}

void require_output(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(fmt::format("missing {} path", what));
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw ConfigError(fmt::format("{} directory does not exist: {}", what, parent.string()));
  }
  if (fs::is_directory(path)) throw ConfigError(fmt::format("{} is a directory: {}", what, path));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write '{}'", path));
  out << text;
  if (!out) throw FormatError(fmt::format("write failed for '{}'", path));
}

std::string depth_counts(const DecisionTree& tree) {
  const auto counts = tree.nodes_per_depth();
  std::string s;
  for (std::size_t d = 2; d < counts.size(); ++d) {
    s += fmt::format("{}depth {}: {}", s.empty() ? "" : ", ", d, counts[d]);
  }
  return s;
}

DecisionTree load_tree_for(const RunConfig& config, const RationaleDataset& dataset) {
  DecisionTree tree = load_tree(config.tree_path);
  if (tree.dim != dataset.dim()) {
    throw FormatError(fmt::format("tree has D = {} but dataset has D = {}", tree.dim,
                                  dataset.dim()));
  }
  return tree;
}

PartAssignment parts_for(const RunConfig& config, std::size_t dim) {
  return config.parts_path.empty() ? PartAssignment::identity(dim)
                                   : load_parts(config.parts_path, dim);
}

// File-name-safe rendering of a sample id.
std::string safe_name(const std::string& id) {
  std::string s = id;
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

}  // namespace

void validate_paths(const RunConfig& c) {
  const std::string& cmd = c.subcommand;
  if (cmd == "gen") {
    require_output(c.out_path, "dataset output");
    require_output(c.net_path, "net output");
  } else if (cmd == "learn") {
    require_input(c.data_path, "dataset");
    require_output(c.out_path, "tree output");
  } else if (cmd == "explain") {
    require_input(c.data_path, "dataset");
    require_input(c.tree_path, "tree");
    if (!c.parts_path.empty()) require_input(c.parts_path, "parts file");
    if (c.out_dir.empty()) throw ConfigError("missing report directory");
    if (fs::exists(c.out_dir) && !fs::is_directory(c.out_dir)) {
      throw ConfigError(fmt::format("report path is not a directory: {}", c.out_dir));
    }
  } else if (cmd == "evaluate") {
    require_input(c.data_path, "dataset");
    require_input(c.tree_path, "tree");
    if (c.parts_path.empty() != c.ablations_path.empty()) {
      throw ConfigError("--parts and --ablations must be given together");
    }
    if (!c.parts_path.empty()) {
      require_input(c.parts_path, "parts file");
      require_input(c.ablations_path, "ablation file");
    }
    require_output(c.out_path, "metrics output");
  } else if (cmd == "ablate") {
    require_input(c.net_path, "net");
    require_input(c.data_path, "dataset");
    require_input(c.parts_path, "parts file");
    require_output(c.out_path, "ablation output");
  } else if (cmd == "aggregate") {
    require_input(c.maps_path, "feature-map file");
    require_output(c.out_path, "dataset output");
    if (!c.scale_path.empty()) require_output(c.scale_path, "scale output");
  } else {
    throw ConfigError(fmt::format("unknown subcommand '{}'", cmd));
  }
}

void cmd_gen(const RunConfig& config, std::ostream& out) {
  SyntheticSpec spec = config.synth;
  spec.seed = config.seed;
  spec.validate();
  const PiecewiseLinearNet net =
      config.hidden ? generate_net(spec.dim, *config.hidden, config.seed) : plant_net(spec);
  const auto raw = generate_dataset(spec, net);
  const RationaleDataset dataset = build_dataset(net, raw, config.category);
  save_net(net, config.net_path);
  save_dataset(dataset, config.out_path);
  std::size_t net_correct = 0;
  for (const auto& s : dataset.samples()) {
    if ((s.y > 0.0) == s.positive) ++net_correct;
  }
  out << fmt::format("D = {}, positives = {}, negatives = {}, modes = {}\n", dataset.dim(),
                     dataset.positives().size(), dataset.negatives().size(), spec.modes);
  out << fmt::format("net: {}, accuracy (y > 0) = {:.4f}\n",
                     config.hidden ? "random ReLU" : "planted",
                     static_cast<double>(net_correct) / static_cast<double>(dataset.size()));
  out << fmt::format("wrote {} and {}\n", config.net_path, config.out_path);
}

void cmd_learn(const RunConfig& config, std::ostream& out) {
  const RationaleDataset dataset = load_dataset(config.data_path);
  config.hyper.validate();
  TreeLearner learner(dataset, config.hyper, config.threads);
  const DecisionTree tree = learner.run();
  save_tree(tree, config.out_path);
  out << fmt::format("positives = {}, merges = {}, |V| = {}\n", dataset.positives().size(),
                     tree.merge_log.size(), tree.second_layer().size());
  out << fmt::format("log E: {} -> {}\n", format_real(learner.initial_log_e()),
                     format_real(learner.log_e()));
  out << fmt::format("nodes per layer: {}\n", depth_counts(tree));
  out << fmt::format("wrote {}\n", config.out_path);
}

void cmd_explain(const RunConfig& config, std::ostream& out) {
  const RationaleDataset dataset = load_dataset(config.data_path);
  const DecisionTree tree = load_tree_for(config, dataset);
  const PartAssignment parts = parts_for(config, dataset.dim());
  std::vector<std::size_t> indices;
  if (config.ids.empty()) {
    indices = dataset.positives();
  } else {
    for (const auto& id : config.ids) {
      const auto i = dataset.find(id);
      if (!i) throw ConfigError(fmt::format("unknown sample id '{}'", id));
      indices.push_back(*i);
    }
  }
  for (int layer : config.layers) truncate_at_layer(tree, layer);
  fs::create_directories(config.out_dir);

  std::vector<Explanation> explanations;
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (auto i : indices) {
    explanations.push_back(explain_sample(tree, dataset[i], parts, config.layers));
    all.push_back(explanation_to_json(explanations.back(), parts));
  }
  const fs::path dir(config.out_dir);
  write_text((dir / "explanations.json").string(), all.dump(1) + "\n");
  write_text((dir / "explanations.csv").string(), explanations_to_csv(explanations, parts));

  for (const auto& e : explanations) {
    std::string path;
    for (int n : e.parse_path) path += (path.empty() ? "" : " > ") + std::to_string(n);
    out << fmt::format("{}: y = {}, path {}", e.id, format_real(e.y), path);
    for (const auto& s : e.selected) {
      out << fmt::format(", layer {} -> node {}", layer_label(s.layer), s.node.node_id);
    }
    out << "\n";
    if (!config.svg) continue;
    for (std::size_t l = 0; l < e.levels.size(); ++l) {
      const auto& lv = e.levels[l];
      write_text((dir / fmt::format("{}_level{}.svg", safe_name(e.id), l + 2)).string(),
                 contribution_pie_svg(lv, parts,
                                      fmt::format("{} at node {} (level {})", e.id,
                                                  lv.node_id, l + 2)));
    }
    for (const auto& s : e.selected) {
      write_text((dir / fmt::format("{}_layer_{}.svg", safe_name(e.id), layer_label(s.layer)))
                     .string(),
                 contribution_pie_svg(s.node, parts,
                                      fmt::format("{} at node {} (layer {})", e.id,
                                                  s.node.node_id, layer_label(s.layer))));
    }
  }
  out << fmt::format("wrote {} explanations to {}\n", explanations.size(), config.out_dir);
}

void cmd_evaluate(const RunConfig& config, std::ostream& out) {
  const RationaleDataset dataset = load_dataset(config.data_path);
  const DecisionTree tree = load_tree_for(config, dataset);
  std::optional<PartAssignment> parts;
  std::optional<AblationTable> ablations;
  if (!config.parts_path.empty()) {
    parts = load_parts(config.parts_path, dataset.dim());
    ablations = load_ablations(config.ablations_path);
  }
  const auto layers = config.layers.empty() ? default_layers(tree) : config.layers;
  const MetricsReport report =
      evaluate_layers(tree, dataset, layers, parts ? &*parts : nullptr,
                      ablations ? &*ablations : nullptr, config.threshold, config.threads);
  write_text(config.out_path, metrics_to_csv(report));
  out << metrics_summary(report);
  out << fmt::format("nodes per layer: {}\n", depth_counts(tree));
  out << fmt::format("wrote {}\n", config.out_path);
}

void cmd_ablate(const RunConfig& config, std::ostream& out) {
  const PiecewiseLinearNet net = load_net(config.net_path);
  const RationaleDataset dataset = load_dataset(config.data_path);
  const PartAssignment parts = load_parts(config.parts_path, dataset.dim());
  const AblationTable table = compute_ablations(net, dataset, parts);
  save_ablations(table, config.out_path);
  out << fmt::format("{} records ({} positives x {} parts), wrote {}\n", table.size(),
                     dataset.positives().size(), parts.size(), config.out_path);
}

std::vector<FeatureMapRecord> load_feature_maps(const std::string& path, std::string* category) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open feature-map file '{}'", path));
  std::vector<FeatureMapRecord> records;
  std::string line;
  std::size_t lineno = 0, side = 0, dim = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!header) {
        side = j.at("L").get<std::size_t>();
        dim = j.at("D").get<std::size_t>();
        if (side == 0 || dim == 0) throw FormatError("L and D must be positive");
        if (category) *category = j.value("category", std::string());
        header = true;
        continue;
      }
      FeatureMapRecord r;
      r.id = j.at("id").get<std::string>();
      r.positive = j.at("positive").get<bool>();
      r.y = j.at("y").get<double>();
      for (auto [key, tensor] : {std::pair{"x", &r.activations}, std::pair{"grad", &r.gradients}}) {
        tensor->side = side;
        tensor->channels = dim;
        tensor->values = j.at(key).get<Vector>();
        if (tensor->values.size() != side * side * dim) {
          throw FormatError(fmt::format("\"{}\" has {} values, expected L*L*D = {}", key,
                                        tensor->values.size(), side * side * dim));
        }
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(fmt::format("{}:{}: {}", path, lineno, e.what()));
    } catch (const FormatError& e) {
      throw FormatError(fmt::format("{}:{}: {}", path, lineno, e.what()));
    }
  }
  if (!header) throw FormatError(fmt::format("{}: missing header line", path));
  return records;
}

void cmd_aggregate(const RunConfig& config, std::ostream& out) {
  std::string category;
  const auto records = load_feature_maps(config.maps_path, &category);
  if (category.empty()) category = config.category;
  auto [dataset, scale] = build_dataset_from_feature_maps(records, category, config.scale_scope);
  save_dataset(dataset, config.out_path);
  if (!config.scale_path.empty()) save_scale(scale, config.scale_path);
  out << fmt::format("{} records -> {} samples (D = {}), {} zero channels\n", records.size(),
                     dataset.size(), dataset.dim(), scale.zero_channels.size());
  out << fmt::format("wrote {}{}\n", config.out_path,
                     config.scale_path.empty() ? "" : " and " + config.scale_path);
}

void run_command(const RunConfig& config, std::ostream& out) {
  validate_paths(config);
  const std::string& cmd = config.subcommand;
  if (cmd == "gen") return cmd_gen(config, out);
  if (cmd == "learn") return cmd_learn(config, out);
  if (cmd == "explain") return cmd_explain(config, out);
  if (cmd == "evaluate") return cmd_evaluate(config, out);
  if (cmd == "ablate") return cmd_ablate(config, out);
  return cmd_aggregate(config, out);
}

}  // namespace modetree
