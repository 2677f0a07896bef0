#include "modetree/explain.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "modetree/error.hpp"

namespace modetree {

PartAssignment::PartAssignment(std::size_t dim, std::vector<std::string> names,
                               std::vector<std::vector<std::size_t>> filters)
    : names_(std::move(names)), filters_(std::move(filters)) {
  if (names_.size() != filters_.size()) throw FormatError("part names and filter lists differ");
  if (names_.empty()) throw FormatError("part assignment needs at least one part");
  constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);
  part_of_.assign(dim, kUnassigned);
  for (std::size_t m = 0; m < filters_.size(); ++m) {
    for (auto d : filters_[m]) {
      if (d >= dim) {
        throw FormatError(fmt::format("part '{}' lists filter {} but D = {}", names_[m], d, dim));
      }
      if (part_of_[d] != kUnassigned) {
        throw FormatError(fmt::format("filter {} is assigned to both '{}' and '{}'", d,
                                      names_[part_of_[d]], names_[m]));
      }
      part_of_[d] = m;
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    if (part_of_[d] == kUnassigned) {
      throw FormatError(fmt::format("filter {} is not assigned to any part", d));
    }
  }
}

PartAssignment PartAssignment::identity(std::size_t dim) {
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> filters;
  for (std::size_t d = 0; d < dim; ++d) {
    names.push_back(fmt::format("f{}", d));
    filters.push_back({d});
  }
  return PartAssignment(dim, std::move(names), std::move(filters));
}

Vector PartAssignment::apply(std::span<const double> rho) const {
  if (rho.size() != dim()) {
    throw FormatError(fmt::format("part assignment has D = {}, got {}", dim(), rho.size()));
  }
  Vector out(size(), 0.0);
  for (std::size_t d = 0; d < rho.size(); ++d) out[part_of_[d]] += rho[d];
  return out;
}

PartAssignment parts_from_json(const nlohmann::ordered_json& j, std::size_t dim) {
  try {
    const auto& parts = j.at("parts");
    if (!parts.is_object()) throw FormatError("\"parts\" must be an object");
    std::vector<std::string> names;
    std::vector<std::vector<std::size_t>> filters;
    for (const auto& [name, list] : parts.items()) {
      names.push_back(name);
      filters.push_back(list.get<std::vector<std::size_t>>());
    }
    return PartAssignment(dim, std::move(names), std::move(filters));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed parts file: {}", e.what()));
  }
}

PartAssignment load_parts(const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open parts file '{}'", path));
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path, e.what()));
  }
  try {
    return parts_from_json(j, dim);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path, e.what()));
  }
}

std::vector<int> infer_parse_tree(const DecisionTree& tree, std::span<const double> g) {
  if (g.size() != tree.dim) {
    throw FormatError(fmt::format("sample has D = {}, tree has D = {}", g.size(), tree.dim));
  }
  if (tree.second_layer().empty()) throw DegenerateError("cannot parse with an empty tree");
  std::vector<int> path{tree.root_id};
  const TreeNode* node = &tree.root();
  while (!node->is_leaf()) {
    const int next = best_child(tree, node->children, g);
    path.push_back(next);
    node = &tree.node(next);
  }
  return path;
}

Contribution contributions(const TreeNode& node, std::span<const double> x,
                           const PartAssignment& parts) {
  if (x.size() != node.w.size()) {
    throw FormatError(fmt::format("node {} expects D = {}, got {}", node.id, node.w.size(),
                                  x.size()));
  }
  Contribution c;
  c.rho.resize(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) c.rho[d] = node.w[d] * x[d];
  c.varrho = parts.apply(c.rho);
  return c;
}

PartRatios part_ratios(std::span<const double> varrho) {
  PartRatios r;
  r.ratios.assign(varrho.size(), 0.0);
  double total = 0.0;
  for (double v : varrho) total += std::abs(v);
  if (total == 0.0) {
    r.degenerate = true;
    return r;
  }
  for (std::size_t m = 0; m < varrho.size(); ++m) r.ratios[m] = std::abs(varrho[m]) / total;
  return r;
}

NodeExplanation explain_at_node(const DecisionTree& tree, int node_id,
                                const RationaleSample& sample, const PartAssignment& parts) {
  const auto& node = tree.node(node_id);
  NodeExplanation e;
  e.node_id = node_id;
  e.depth = node.depth;
  e.omega_size = node.omega.size();
  e.cosine = cosine(sample.g, node.w);
  e.h = node_predict(node, sample.x);
  e.b = node.b;
  auto c = contributions(node, sample.x, parts);
  e.rho = std::move(c.rho);
  e.varrho = std::move(c.varrho);
  e.contri = part_ratios(e.varrho);
  if (e.contri.degenerate) {
    spdlog::warn("sample {}: every part contribution at node {} is zero", sample.id, node_id);
  }
  return e;
}

Explanation explain_sample(const DecisionTree& tree, const RationaleSample& sample,
                           const PartAssignment& parts, std::span<const int> layers) {
  if (parts.dim() != tree.dim) {
    throw FormatError(fmt::format("parts cover D = {}, tree has D = {}", parts.dim(), tree.dim));
  }
  Explanation e;
  e.id = sample.id;
  e.positive = sample.positive;
  e.y = sample.y;
  e.parse_path = infer_parse_tree(tree, sample.g);
  for (std::size_t i = 1; i < e.parse_path.size(); ++i) {
    e.levels.push_back(explain_at_node(tree, e.parse_path[i], sample, parts));
  }
  for (int layer : layers) {
    const DecisionTree cut = truncate_at_layer(tree, layer);
    const int v = best_child(cut, cut.second_layer(), sample, tree.hyper.best_child_rule);
    e.selected.push_back({layer, explain_at_node(tree, v, sample, parts)});
  }
  return e;
}

namespace {

nlohmann::ordered_json level_to_json(const NodeExplanation& l, const PartAssignment& parts) {
  nlohmann::ordered_json j;
  j["node"] = l.node_id;
  j["depth"] = l.depth;
  j["omega_size"] = l.omega_size;
  j["cosine"] = l.cosine;
  j["h"] = l.h;
  j["b"] = l.b;
  j["rho"] = l.rho;
  nlohmann::ordered_json p = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < parts.size(); ++m) {
    p.push_back({{"part", parts.names()[m]},
                 {"varrho", l.varrho[m]},
                 {"contri", l.contri.ratios[m]}});
  }
  j["parts"] = std::move(p);
  j["all_zero"] = l.contri.degenerate;
  return j;
}

}  // namespace

nlohmann::ordered_json explanation_to_json(const Explanation& e, const PartAssignment& parts) {
  nlohmann::ordered_json j;
  j["id"] = e.id;
  j["positive"] = e.positive;
  j["y"] = e.y;
  j["parse_path"] = e.parse_path;
  nlohmann::ordered_json levels = nlohmann::ordered_json::array();
  for (const auto& l : e.levels) levels.push_back(level_to_json(l, parts));
  j["levels"] = std::move(levels);
  if (!e.selected.empty()) {
    nlohmann::ordered_json sel = nlohmann::ordered_json::array();
    for (const auto& s : e.selected) {
      auto l = level_to_json(s.node, parts);
      l["layer"] = layer_label(s.layer);
      sel.push_back(std::move(l));
    }
    j["selected"] = std::move(sel);
  }
  return j;
}

std::string explanations_to_csv(const std::vector<Explanation>& explanations,
                                const PartAssignment& parts) {
  std::string out = "id,level,node,depth,omega_size,h,part,varrho,contri\n";
  auto rows = [&](const std::string& id, const std::string& level, const NodeExplanation& l) {
    for (std::size_t m = 0; m < parts.size(); ++m) {
      out += fmt::format("{},{},{},{},{},{},{},{},{}\n", id, level, l.node_id, l.depth,
                         l.omega_size, format_real(l.h), parts.names()[m],
                         format_real(l.varrho[m]), format_real(l.contri.ratios[m]));
    }
  };
  for (const auto& e : explanations) {
    for (std::size_t i = 0; i < e.levels.size(); ++i) rows(e.id, std::to_string(i + 2), e.levels[i]);
    for (const auto& s : e.selected) rows(e.id, "selected@" + layer_label(s.layer), s.node);
  }
  return out;
}

std::string contribution_pie_svg(const NodeExplanation& level, const PartAssignment& parts,
                                 const std::string& title) {
  static const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                   "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
  constexpr double kCx = 120.0, kCy = 140.0, kR = 100.0;
  const std::size_t legend_rows = parts.size();
  const double height = std::max(280.0, 40.0 + 18.0 * static_cast<double>(legend_rows));
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"460\" height=\"{:.0f}\">\n"
      "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
      height, title);
  if (level.contri.degenerate) {
    svg += fmt::format(
        "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"none\" stroke=\"#999\"/>\n"
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" "
        "text-anchor=\"middle\">no contribution</text>\n",
        kCx, kCy, kR, kCx, kCy);
  } else {
    double angle = -M_PI / 2.0;
    for (std::size_t m = 0; m < parts.size(); ++m) {
      const double share = level.contri.ratios[m];
      if (share <= 0.0) continue;
      const char* color = kPalette[m % std::size(kPalette)];
      if (share >= 1.0 - 1e-12) {
        svg += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\"/>\n", kCx, kCy, kR,
                           color);
        break;
      }
      const double end = angle + 2.0 * M_PI * share;
      svg += fmt::format(
          "<path d=\"M {:.3f} {:.3f} L {:.3f} {:.3f} A {} {} 0 {} 1 {:.3f} {:.3f} Z\" "
          "fill=\"{}\"/>\n",
          kCx, kCy, kCx + kR * std::cos(angle), kCy + kR * std::sin(angle), kR, kR,
          share > 0.5 ? 1 : 0, kCx + kR * std::cos(end), kCy + kR * std::sin(end), color);
      angle = end;
    }
  }
  for (std::size_t m = 0; m < parts.size(); ++m) {
    const double y = 40.0 + 18.0 * static_cast<double>(m);
    svg += fmt::format(
        "<rect x=\"250\" y=\"{:.0f}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n"
        "<text x=\"268\" y=\"{:.0f}\" font-family=\"sans-serif\" font-size=\"12\">"
        "{} {:.2f}% ({})</text>\n",
        y, kPalette[m % std::size(kPalette)], y + 10.0, parts.names()[m],
        100.0 * level.contri.ratios[m], level.varrho[m] < 0.0 ? "-" : "+");
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace modetree
