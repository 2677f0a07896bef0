#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "modetree/rationale.hpp"
#include "modetree/util.hpp"

namespace modetree {

enum class SelectionMode { kGreedy, kExact };

// How the tree picks the node that predicts a sample among a set of
// candidates. kCosine maximizes cosine(g_i, w_v); kMaxPrediction maximizes
// h_v(x_i). Ties go to the smallest node id.
enum class BestChildRule { kCosine, kMaxPrediction };

struct HyperParams {
  double beta = 1.0;
  // nullopt means 1 / E_{i in Omega+}[y_i] on normalized scores.
  std::optional<double> gamma;
  // Per-node L1 weight is lambda_scale * sqrt(|Omega_v|).
  double lambda_scale = 1e-6;
  // Largest D for which exhaustive alpha search is allowed.
  std::size_t exact_alpha_max_dim = 12;
  SelectionMode selection = SelectionMode::kGreedy;
  BestChildRule best_child_rule = BestChildRule::kCosine;

  // Throws ConfigError on beta < 0, gamma <= 0 or lambda_scale < 0.
  void validate() const;
  bool operator==(const HyperParams&) const = default;
};

// Throws DegenerateError when gamma is automatic and the mean positive score
// is not positive.
double resolve_gamma(const HyperParams& hyper, const RationaleDataset& dataset);

// A decision mode h_v(x) = w.x + b with w = alpha o g_bar, shared by the
// positive samples in omega.
struct TreeNode {
  int id = 0;
  int depth = 1;
  std::vector<int> children;
  Vector g_bar;
  std::vector<std::uint8_t> alpha;
  double b = 0.0;
  Vector w;
  std::vector<std::string> omega;

  bool is_leaf() const { return children.empty(); }
  bool operator==(const TreeNode&) const = default;
};

struct MergeRecord {
  int step = 0;
  int v = 0;
  int v2 = 0;
  int u = 0;
  double delta_log_e = 0.0;
  double log_e = 0.0;
  bool operator==(const MergeRecord&) const = default;
};

struct DecisionTree {
  std::size_t dim = 0;
  std::string category;
  HyperParams hyper;
  double gamma = 1.0;  // resolved value
  std::map<int, TreeNode> nodes;
  int root_id = 0;
  std::vector<MergeRecord> merge_log;

  const TreeNode& node(int id) const;
  const TreeNode& root() const { return node(root_id); }
  // Children of the root (the second tree layer).
  const std::vector<int>& second_layer() const { return root().children; }
  // Leaves in depth-first, left-to-right order.
  std::vector<int> leaves() const;
  int max_depth() const;
  // Number of nodes at each depth, indexed by depth (entry 0 unused).
  std::vector<std::size_t> nodes_per_depth() const;
  void recompute_depths();

  bool operator==(const DecisionTree&) const = default;
};

// Layer index meaning "all leaves".
inline constexpr int kLeafLayer = std::numeric_limits<int>::max();

// "leaves" for kLeafLayer, else the number.
std::string layer_label(int layer);
// Inverse of layer_label; ConfigError for anything else or k < 2.
int parse_layer(const std::string& s);

// Q = P_0: one leaf per positive (g_bar = g_i, alpha = 1, b = b_i), all
// children of the root. Leaf ids are 1..|Omega+| in dataset order.
DecisionTree init_tree(const RationaleDataset& dataset, const HyperParams& hyper);

// Unit vector maximizing sum_i cosine(g_i, g_bar) for unit-norm g_i:
// the normalized sum. When the sum vanishes, returns the first member
// (callers pass members in ascending sample order).
Vector fit_direction(std::span<const Vector> members);

struct SelectionFit {
  std::vector<std::uint8_t> alpha;
  double b = 0.0;
  double mse = 0.0;
  double objective = 0.0;  // mse + lambda * |alpha|
};

// Minimizes (1/n) sum_i (w.x_i + b - y_i)^2 + lambda |alpha|_1 over binary
// alpha with b at its optimum for that alpha. kExact enumerates all 2^D masks
// (ConfigError when D > exact_max_dim); kGreedy runs single-bit coordinate
// descent from alpha = 1 in ascending index order until a full pass makes no
// strict improvement. Exact ties prefer fewer active bits, then the
// lexicographically smallest alpha.
SelectionFit fit_selection(std::span<const Vector> xs, std::span<const double> ys,
                           std::span<const double> g_bar, double lambda, SelectionMode mode,
                           std::size_t exact_max_dim = 12);

double node_predict(const TreeNode& node, std::span<const double> x);

// argmax over candidates of cosine(g, w_v); zero w counts as -infinity.
// Throws DegenerateError for an empty list or when every w is zero.
int best_child(const DecisionTree& tree, std::span<const int> candidates,
               std::span<const double> g);
int best_child(const DecisionTree& tree, std::span<const int> candidates,
               const RationaleSample& sample, BestChildRule rule);

// Per-sample selection scores under rule (cosine or prediction).
double child_score(const TreeNode& node, const RationaleSample& sample, BestChildRule rule);

// Tree prediction h_hat(x) through the best child of the root.
double tree_predict(const DecisionTree& tree, const RationaleSample& sample);

// log E = sum_{i in Omega+} [log P(x_i) - log Q(x_i)] - beta |V|, computed
// from scratch. Q is the initial tree built from the same dataset.
double log_objective(const DecisionTree& tree, const RationaleDataset& dataset);

// Greedy agglomerative learner. Each step scores every pair of root
// children by the change in log E after merging them, normalized by the
// merged member count, and merges the best pair while its raw gain is
// positive. Candidate node fits and per-sample scores are cached; pair
// evaluation runs on `threads` workers and reduces in (id, id) order.
class TreeLearner {
 public:
  TreeLearner(const RationaleDataset& dataset, const HyperParams& hyper, int threads = 1);
  ~TreeLearner();
  TreeLearner(const TreeLearner&) = delete;
  TreeLearner& operator=(const TreeLearner&) = delete;

  struct Candidate {
    int v = 0;
    int v2 = 0;
    double log_e = 0.0;
    double delta_log_e = 0.0;
    double normalized_gain = 0.0;
  };

  const DecisionTree& tree() const { return tree_; }
  double log_e() const { return log_e_; }
  double initial_log_e() const { return initial_log_e_; }

  // Scores all pairs of the current second layer, ordered by (v, v2).
  std::vector<Candidate> evaluate_candidates();
  // Tree that merging (v, v2) would produce, without committing it.
  DecisionTree preview_merge(int v, int v2);
  void merge(int v, int v2);
  // One greedy step; returns false (and leaves the tree unchanged) when no
  // pair has a positive gain or fewer than two children remain.
  bool step();
  DecisionTree run();

 private:
  struct State;
  struct NodeFit;

  std::unique_ptr<NodeFit> compute_fit(int v, int v2) const;
  const NodeFit& fit_pair(int v, int v2);
  double candidate_log_e(int v, int v2, const NodeFit& fit, std::vector<int>* best_out,
                         Vector* h_out) const;

  const RationaleDataset& dataset_;
  DecisionTree tree_;
  double log_e_ = 0.0;
  double initial_log_e_ = 0.0;
  int threads_ = 1;
  std::unique_ptr<State> state_;
};

DecisionTree learn(const RationaleDataset& dataset, const HyperParams& hyper, int threads = 1);

// Copy of the tree whose root's children are every node at depth k plus
// every leaf shallower than k; ancestors of those nodes are dropped.
// kLeafLayer (or any k beyond the deepest layer) gives all leaves.
// Throws ConfigError for k < 2.
DecisionTree truncate_at_layer(const DecisionTree& tree, int k);

nlohmann::ordered_json tree_to_json(const DecisionTree& tree);
DecisionTree tree_from_json(const nlohmann::json& j);
void save_tree(const DecisionTree& tree, const std::string& path);
DecisionTree load_tree(const std::string& path);

const char* to_string(BestChildRule rule);
const char* to_string(SelectionMode mode);
BestChildRule parse_best_child_rule(const std::string& s);
SelectionMode parse_selection_mode(const std::string& s);

}  // namespace modetree
