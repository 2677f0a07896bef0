#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "modetree/rationale.hpp"
#include "modetree/tree.hpp"

namespace modetree {

// Binary M x D matrix A stored as one part index per filter.
class PartAssignment {
 public:
  PartAssignment() = default;
  // Throws FormatError unless every filter in [0, dim) is listed by exactly
  // one part.
  PartAssignment(std::size_t dim, std::vector<std::string> names,
                 std::vector<std::vector<std::size_t>> filters);

  // One part per filter, named "f<d>" (A = identity).
  static PartAssignment identity(std::size_t dim);

  std::size_t dim() const { return part_of_.size(); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::vector<std::size_t>>& filters() const { return filters_; }
  std::size_t part_of(std::size_t filter) const { return part_of_[filter]; }

  // A * rho.
  Vector apply(std::span<const double> rho) const;

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<std::size_t>> filters_;
  std::vector<std::size_t> part_of_;
};

// {"parts": {"name": [filter indices], ...}}; part order follows the file.
PartAssignment parts_from_json(const nlohmann::ordered_json& j, std::size_t dim);
PartAssignment load_parts(const std::string& path, std::size_t dim);

// Node ids from the root down to a leaf, descending at each level to the
// child with the highest cosine(g, w). Ties go to the smallest id.
std::vector<int> infer_parse_tree(const DecisionTree& tree, std::span<const double> g);

struct Contribution {
  Vector rho;     // w o x
  Vector varrho;  // A rho
};

Contribution contributions(const TreeNode& node, std::span<const double> x,
                           const PartAssignment& parts);

struct PartRatios {
  Vector ratios;           // |varrho_m| / sum |varrho|
  bool degenerate = false; // all varrho zero; ratios are then all zero
};

PartRatios part_ratios(std::span<const double> varrho);

// Explanation of one sample at one node.
struct NodeExplanation {
  int node_id = 0;
  int depth = 0;
  std::size_t omega_size = 0;
  double cosine = 0.0;
  double h = 0.0;
  double b = 0.0;
  Vector rho;
  Vector varrho;
  PartRatios contri;
};

struct Explanation {
  std::string id;
  bool positive = false;
  double y = 0.0;
  std::vector<int> parse_path;
  // One entry per non-root node on the parse path.
  std::vector<NodeExplanation> levels;
  // Node chosen by the tree truncated at each requested layer.
  struct Selection {
    int layer = 0;
    NodeExplanation node;
  };
  std::vector<Selection> selected;
};

NodeExplanation explain_at_node(const DecisionTree& tree, int node_id,
                                const RationaleSample& sample, const PartAssignment& parts);

// Parse path report plus, for each layer, the node selected by
// truncate_at_layer(tree, layer) under the tree's best-child rule.
Explanation explain_sample(const DecisionTree& tree, const RationaleSample& sample,
                           const PartAssignment& parts, std::span<const int> layers = {});

nlohmann::ordered_json explanation_to_json(const Explanation& e, const PartAssignment& parts);

// Header plus one row per (sample, level, part).
std::string explanations_to_csv(const std::vector<Explanation>& explanations,
                                const PartAssignment& parts);

// Pie chart of contri for one node explanation.
std::string contribution_pie_svg(const NodeExplanation& level, const PartAssignment& parts,
                                 const std::string& title);

}  // namespace modetree
