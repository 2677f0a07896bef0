#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "modetree/commands.hpp"
#include "modetree/error.hpp"

using namespace modetree;

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("modetree");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("MODETREE_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") {
      spdlog::warn("MODETREE_LOG: unknown level '{}', keeping info", env);
    } else {
      spdlog::set_level(level);
    }
  }
}

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> widths;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    long long w = 0;
    try {
      w = std::stoll(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size() || w <= 0) {
      throw ConfigError(fmt::format("bad hidden width '{}'", tok));
    }
    widths.push_back(static_cast<std::size_t>(w));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return widths;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Decision trees of decision modes for piecewise-linear networks", "modetree"};
  app.set_config("--config", "", "TOML or INI file with option defaults");
  app.require_subcommand(1);

  RunConfig cfg;
  std::optional<std::string> hidden, gamma;
  std::string selection = "greedy", best_child = "cosine", threshold = "zero", scope = "all";
  std::vector<std::string> layers;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--threads", cfg.threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen", "Generate a net and a synthetic rationale dataset");
  gen->add_option("--d", cfg.synth.dim, "Number of filters D")->check(CLI::Range(2, 1 << 20));
  gen->add_option("--modes", cfg.synth.modes, "Planted modes K")->check(CLI::Range(1, 1 << 20));
  gen->add_option("--n-pos", cfg.synth.n_pos, "Positive images")->check(CLI::PositiveNumber);
  gen->add_option("--n-neg", cfg.synth.n_neg, "Negative images")->check(CLI::NonNegativeNumber);
  gen->add_option("--noise", cfg.synth.noise_scale, "Noise scale")->check(CLI::NonNegativeNumber);
  gen->add_option("--signal", cfg.synth.signal_scale, "Signal scale")->check(CLI::PositiveNumber);
  gen->add_option("--seed", cfg.seed, "Random seed");
  gen->add_option("--hidden", hidden,
                  "Comma-separated hidden widths of a random net instead of the planted one; "
                  "empty for an affine net");
  gen->add_option("--category", cfg.category, "Category label");
  gen->add_option("--net", cfg.net_path, "Net JSON output")->required();
  gen->add_option("-o,--out", cfg.out_path, "Dataset JSONL output")->required();

  auto* learn = app.add_subcommand("learn", "Learn a decision tree from a dataset");
  learn->add_option("--data", cfg.data_path, "Dataset JSONL")->required();
  learn->add_option("-o,--out", cfg.out_path, "Tree JSON output")->required();
  learn->add_option("--beta", cfg.hyper.beta, "Prior weight per node")->check(CLI::NonNegativeNumber);
  learn->add_option("--gamma", gamma, "Likelihood temperature, or 'auto'");
  learn->add_option("--lambda", cfg.hyper.lambda_scale, "L1 scale on alpha")
      ->check(CLI::NonNegativeNumber);
  learn->add_option("--selection", selection, "Alpha search: greedy or exact")
      ->check(CLI::IsMember({"greedy", "exact"}));
  learn->add_flag_callback("--exact-alpha", [&] { selection = "exact"; }, "Same as --selection exact");
  learn->add_option("--exact-max-dim", cfg.hyper.exact_alpha_max_dim, "Largest D for exact search");
  learn->add_option("--best-child", best_child, "Selection rule: cosine or max_prediction")
      ->check(CLI::IsMember({"cosine", "max_prediction"}));
  common(learn);

  auto* explain = app.add_subcommand("explain", "Explain samples through a learned tree");
  explain->add_option("--tree", cfg.tree_path, "Tree JSON")->required();
  explain->add_option("--data", cfg.data_path, "Dataset JSONL")->required();
  explain->add_option("--parts", cfg.parts_path, "Parts JSON (default: one part per filter)");
  explain->add_option("--id", cfg.ids, "Sample id (repeatable; default all positives)");
  explain->add_option("--layer", layers, "Layer k >= 2 or 'leaves' (repeatable)");
  explain->add_flag("--svg", cfg.svg, "Also write contribution pie charts");
  explain->add_option("-o,--out-dir", cfg.out_dir, "Report directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Per-layer metrics of a learned tree");
  evaluate->add_option("--tree", cfg.tree_path, "Tree JSON")->required();
  evaluate->add_option("--data", cfg.data_path, "Dataset JSONL")->required();
  evaluate->add_option("--parts", cfg.parts_path, "Parts JSON");
  evaluate->add_option("--ablations", cfg.ablations_path, "Ablation CSV (id,part,y_hat)");
  evaluate->add_option("--layer", layers, "Layers to evaluate (default: all, then leaves)");
  evaluate->add_option("--threshold", threshold, "Classification threshold: zero or refit")
      ->check(CLI::IsMember({"zero", "refit"}));
  evaluate->add_option("-o,--out", cfg.out_path, "Metrics CSV output")->required();
  common(evaluate);

  auto* ablate = app.add_subcommand("ablate", "Ablation records of a net for each part");
  ablate->add_option("--net", cfg.net_path, "Net JSON")->required();
  ablate->add_option("--data", cfg.data_path, "Dataset JSONL")->required();
  ablate->add_option("--parts", cfg.parts_path, "Parts JSON")->required();
  ablate->add_option("-o,--out", cfg.out_path, "Ablation CSV output")->required();

  auto* aggregate = app.add_subcommand("aggregate", "Build a dataset from spatial feature maps");
  aggregate->add_option("--maps", cfg.maps_path, "Feature-map JSONL")->required();
  aggregate->add_option("--sd-scope", scope, "Images averaged into s_d: all or positives")
      ->check(CLI::IsMember({"all", "positives"}));
  aggregate->add_option("--category", cfg.category, "Category label if the header has none");
  aggregate->add_option("--scale-out", cfg.scale_path, "s_d sidecar JSON output");
  aggregate->add_option("-o,--out", cfg.out_path, "Dataset JSONL output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    cfg.subcommand = app.get_subcommands().front()->get_name();
    if (hidden) cfg.hidden = parse_widths(*hidden);
    if (gamma && *gamma != "auto") {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(*gamma, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != gamma->size()) {
        throw ConfigError(fmt::format("bad --gamma '{}'", *gamma));
      }
      cfg.hyper.gamma = v;
    }
    cfg.hyper.selection = parse_selection_mode(selection);
    cfg.hyper.best_child_rule = parse_best_child_rule(best_child);
    cfg.threshold = threshold == "refit" ? ThresholdMode::kRefit : ThresholdMode::kZero;
    cfg.scale_scope = scope == "positives" ? ScaleScope::kPositivesOnly : ScaleScope::kAllImages;
    for (const auto& l : layers) cfg.layers.push_back(parse_layer(l));
    run_command(cfg, std::cout);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const FormatError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const DegenerateError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
