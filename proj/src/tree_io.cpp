#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "modetree/error.hpp"
#include "modetree/tree.hpp"

namespace modetree {

nlohmann::ordered_json tree_to_json(const DecisionTree& tree) {
  nlohmann::ordered_json j;
  j["D"] = tree.dim;
  j["category"] = tree.category;
  auto& h = j["hyper"];
  h["beta"] = tree.hyper.beta;
  h["gamma"] = tree.gamma;
  h["gamma_auto"] = !tree.hyper.gamma.has_value();
  h["lambda_scale"] = tree.hyper.lambda_scale;
  h["exact_alpha_max_dim"] = tree.hyper.exact_alpha_max_dim;
  h["selection"] = to_string(tree.hyper.selection);
  h["best_child_rule"] = to_string(tree.hyper.best_child_rule);
  j["root_id"] = tree.root_id;
  auto& nodes = j["nodes"];
  nodes = nlohmann::ordered_json::array();
  for (const auto& [id, n] : tree.nodes) {
    nlohmann::ordered_json e;
    e["id"] = n.id;
    e["depth"] = n.depth;
    e["children"] = n.children;
    e["b"] = n.b;
    e["g_bar"] = n.g_bar;
    std::vector<std::size_t> ones;
    for (std::size_t d = 0; d < n.alpha.size(); ++d) {
      if (n.alpha[d]) ones.push_back(d);
    }
    e["alpha_ones"] = ones;
    e["omega"] = n.omega;
    nodes.push_back(std::move(e));
  }
  auto& log = j["merge_log"];
  log = nlohmann::ordered_json::array();
  for (const auto& r : tree.merge_log) {
    log.push_back({{"step", r.step},
                   {"v", r.v},
                   {"v2", r.v2},
                   {"u", r.u},
                   {"delta_log_e", r.delta_log_e},
                   {"log_e", r.log_e}});
  }
  return j;
}

namespace {

void check_structure(const DecisionTree& tree) {
  const auto& root = tree.root();
  if (!root.g_bar.empty()) throw FormatError("root node must not carry a decision mode");
  std::map<int, int> parents;
  for (const auto& [id, n] : tree.nodes) {
    for (int c : n.children) {
      if (!tree.nodes.count(c)) throw FormatError(fmt::format("node {} lists unknown child {}", id, c));
      if (c == tree.root_id) throw FormatError("root cannot be a child");
      if (++parents[c] > 1) throw FormatError(fmt::format("node {} has several parents", c));
    }
  }
  for (const auto& [id, n] : tree.nodes) {
    if (id != tree.root_id && !parents.count(id)) {
      throw FormatError(fmt::format("node {} is not reachable from the root", id));
    }
    if (id == tree.root_id) continue;
    if (n.g_bar.size() != tree.dim) {
      throw FormatError(fmt::format("node {}: g_bar has length {}, expected {}", id,
                                    n.g_bar.size(), tree.dim));
    }
    if (std::abs(norm2(n.g_bar) - 1.0) > 1e-6) {
      throw FormatError(fmt::format("node {}: g_bar is not a unit vector", id));
    }
    if (n.omega.empty()) throw FormatError(fmt::format("node {}: empty omega", id));
    if (n.is_leaf() && n.omega.size() != 1) {
      throw FormatError(fmt::format("leaf {} must hold exactly one sample", id));
    }
    if (!n.is_leaf()) {
      std::multiset<std::string> expect;
      for (int c : n.children) {
        const auto& co = tree.node(c).omega;
        expect.insert(co.begin(), co.end());
      }
      if (expect != std::multiset<std::string>(n.omega.begin(), n.omega.end())) {
        throw FormatError(fmt::format("node {}: omega differs from its children's union", id));
      }
    }
  }
}

}  // namespace

DecisionTree tree_from_json(const nlohmann::json& j) {
  try {
    DecisionTree tree;
    tree.dim = j.at("D").get<std::size_t>();
    tree.category = j.at("category").get<std::string>();
    const auto& h = j.at("hyper");
    tree.hyper.beta = h.at("beta").get<double>();
    tree.gamma = h.at("gamma").get<double>();
    if (!h.value("gamma_auto", false)) tree.hyper.gamma = tree.gamma;
    tree.hyper.lambda_scale = h.at("lambda_scale").get<double>();
    tree.hyper.exact_alpha_max_dim = h.value("exact_alpha_max_dim", std::size_t{12});
    tree.hyper.selection = parse_selection_mode(h.value("selection", std::string("greedy")));
    tree.hyper.best_child_rule =
        parse_best_child_rule(h.value("best_child_rule", std::string("cosine")));
    try {
      tree.hyper.validate();
    } catch (const ConfigError& e) {
      throw FormatError(e.what());
    }
    tree.root_id = j.value("root_id", 0);

    for (const auto& e : j.at("nodes")) {
      TreeNode n;
      n.id = e.at("id").get<int>();
      n.depth = e.at("depth").get<int>();
      n.children = e.at("children").get<std::vector<int>>();
      n.b = e.at("b").get<double>();
      n.g_bar = e.at("g_bar").get<Vector>();
      n.omega = e.at("omega").get<std::vector<std::string>>();
      const auto ones = e.at("alpha_ones").get<std::vector<long long>>();
      if (n.id != tree.root_id) {
        n.alpha.assign(tree.dim, 0);
        for (auto d : ones) {
          if (d < 0 || static_cast<std::size_t>(d) >= tree.dim) {
            throw FormatError(fmt::format("node {}: alpha index {} out of range [0, {})", n.id,
                                          d, tree.dim));
          }
          if (n.alpha[static_cast<std::size_t>(d)]) {
            throw FormatError(fmt::format("node {}: alpha index {} repeated", n.id, d));
          }
          n.alpha[static_cast<std::size_t>(d)] = 1;
        }
        n.w.resize(n.g_bar.size());
        for (std::size_t d = 0; d < n.w.size() && d < n.alpha.size(); ++d) {
          n.w[d] = n.alpha[d] ? n.g_bar[d] : 0.0;
        }
      } else if (!ones.empty()) {
        throw FormatError("root node must not carry a decision mode");
      }
      if (!tree.nodes.emplace(n.id, std::move(n)).second) {
        throw FormatError(fmt::format("duplicate node id {}", e.at("id").get<int>()));
      }
    }
    if (!tree.nodes.count(tree.root_id)) throw FormatError("tree has no root node");
    check_structure(tree);
    const auto stored = tree.nodes;
    tree.recompute_depths();
    for (const auto& [id, n] : stored) {
      if (tree.nodes.at(id).depth != n.depth) {
        throw FormatError(fmt::format("node {}: stored depth {} is inconsistent", id, n.depth));
      }
    }

    for (const auto& e : j.at("merge_log")) {
      MergeRecord r;
      r.step = e.at("step").get<int>();
      r.v = e.at("v").get<int>();
      r.v2 = e.at("v2").get<int>();
      r.u = e.at("u").get<int>();
      r.delta_log_e = e.at("delta_log_e").get<double>();
      r.log_e = e.at("log_e").get<double>();
      if (!tree.nodes.count(r.u) || !tree.nodes.count(r.v) || !tree.nodes.count(r.v2)) {
        throw FormatError(fmt::format("merge step {} references unknown nodes", r.step));
      }
      tree.merge_log.push_back(r);
    }
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed tree: {}", e.what()));
  }
}

void save_tree(const DecisionTree& tree, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(fmt::format("cannot write tree file '{}'", path));
  out << tree_to_json(tree).dump(1) << '\n';
}

DecisionTree load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open tree file '{}'", path));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path, e.what()));
  }
  try {
    return tree_from_json(j);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path, e.what()));
  }
}

}  // namespace modetree
