#include "modetree/tree.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "modetree/error.hpp"

namespace modetree {

void HyperParams::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be >= 0");
  if (gamma && (!(*gamma > 0.0) || !std::isfinite(*gamma))) {
    throw ConfigError("gamma must be > 0");
  }
  if (!(lambda_scale >= 0.0) || !std::isfinite(lambda_scale)) {
    throw ConfigError("lambda_scale must be >= 0");
  }
}

double resolve_gamma(const HyperParams& hyper, const RationaleDataset& dataset) {
  if (hyper.gamma) return *hyper.gamma;
  double sum = 0.0;
  for (auto i : dataset.positives()) sum += dataset[i].y;
  const double mean = sum / static_cast<double>(dataset.positives().size());
  if (!(mean > 0.0)) {
    throw DegenerateError(fmt::format(
        "automatic gamma needs a positive mean score on positives (got {:.6g})", mean));
  }
  return 1.0 / mean;
}

const TreeNode& DecisionTree::node(int id) const {
  auto it = nodes.find(id);
  if (it == nodes.end()) throw FormatError(fmt::format("tree has no node {}", id));
  return it->second;
}

std::vector<int> DecisionTree::leaves() const {
  std::vector<int> out;
  std::vector<int> stack{root_id};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const auto& n = node(id);
    if (n.is_leaf() && id != root_id) out.push_back(id);
    for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

int DecisionTree::max_depth() const {
  int depth = 1;
  for (const auto& [id, n] : nodes) depth = std::max(depth, n.depth);
  return depth;
}

std::vector<std::size_t> DecisionTree::nodes_per_depth() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(max_depth()) + 1, 0);
  for (const auto& [id, n] : nodes) ++counts[static_cast<std::size_t>(n.depth)];
  return counts;
}

void DecisionTree::recompute_depths() {
  std::vector<std::pair<int, int>> stack{{root_id, 1}};
  while (!stack.empty()) {
    auto [id, depth] = stack.back();
    stack.pop_back();
    auto& n = nodes.at(id);
    n.depth = depth;
    for (int c : n.children) stack.emplace_back(c, depth + 1);
  }
}

namespace {

Vector masked_direction(const std::vector<std::uint8_t>& alpha, const Vector& g_bar) {
  Vector w(g_bar.size());
  for (std::size_t d = 0; d < w.size(); ++d) w[d] = alpha[d] ? g_bar[d] : 0.0;
  return w;
}

// a beats b: higher score, or equal score and smaller id.
bool better(double score_a, int id_a, double score_b, int id_b) {
  return score_a > score_b || (score_a == score_b && id_a < id_b);
}

}  // namespace

DecisionTree init_tree(const RationaleDataset& dataset, const HyperParams& hyper) {
  hyper.validate();
  if (dataset.positives().empty()) throw FormatError("cannot build a tree without positives");
  DecisionTree tree;
  tree.dim = dataset.dim();
  tree.category = dataset.category();
  tree.hyper = hyper;
  tree.gamma = resolve_gamma(hyper, dataset);
  TreeNode root;
  root.id = 0;
  root.depth = 1;
  int next = 1;
  for (auto i : dataset.positives()) {
    const auto& s = dataset[i];
    TreeNode leaf;
    leaf.id = next++;
    leaf.depth = 2;
    leaf.g_bar = s.g;
    leaf.alpha.assign(dataset.dim(), 1);
    leaf.b = s.b;
    leaf.w = masked_direction(leaf.alpha, leaf.g_bar);
    leaf.omega = {s.id};
    root.children.push_back(leaf.id);
    root.omega.push_back(s.id);
    tree.nodes.emplace(leaf.id, std::move(leaf));
  }
  tree.nodes.emplace(root.id, std::move(root));
  return tree;
}

Vector fit_direction(std::span<const Vector> members) {
  if (members.empty()) throw ConfigError("fit_direction needs at least one member");
  const std::size_t D = members.front().size();
  Vector sum(D, 0.0);
  for (const auto& g : members) {
    if (g.size() != D) throw FormatError("fit_direction members differ in dimension");
    for (std::size_t d = 0; d < D; ++d) sum[d] += g[d];
  }
  const double n = norm2(sum);
  if (!(n > 1e-12 * static_cast<double>(members.size()))) {
    spdlog::debug("member gradients cancel; using the first member's direction");
    return members.front();
  }
  for (auto& v : sum) v /= n;
  return sum;
}

namespace {

// Centered second moments of z_d = g_bar_d x_d and y, enough to evaluate
// the selection objective for any alpha.
struct SelectionStats {
  std::size_t dim = 0;
  Vector z_mean;
  double y_mean = 0.0;
  Vector cov;    // dim x dim
  Vector cross;  // dim
  double y_var = 0.0;

  SelectionStats(std::span<const Vector> xs, std::span<const double> ys,
                 std::span<const double> g_bar)
      : dim(g_bar.size()), z_mean(dim, 0.0), cov(dim * dim, 0.0), cross(dim, 0.0) {
    const double n = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (std::size_t d = 0; d < dim; ++d) z_mean[d] += g_bar[d] * xs[i][d];
      y_mean += ys[i];
    }
    for (auto& v : z_mean) v /= n;
    y_mean /= n;
    Vector zc(dim);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (std::size_t d = 0; d < dim; ++d) zc[d] = g_bar[d] * xs[i][d] - z_mean[d];
      const double yc = ys[i] - y_mean;
      y_var += yc * yc;
      for (std::size_t d = 0; d < dim; ++d) {
        cross[d] += zc[d] * yc;
        double* row = cov.data() + d * dim;
        for (std::size_t e = 0; e < dim; ++e) row[e] += zc[d] * zc[e];
      }
    }
    y_var /= n;
    for (auto& v : cross) v /= n;
    for (auto& v : cov) v /= n;
  }

  // Mean squared residual with the optimal intercept for alpha.
  double mse(const std::vector<std::uint8_t>& alpha) const {
    double s = y_var;
    for (std::size_t d = 0; d < dim; ++d) {
      if (!alpha[d]) continue;
      s -= 2.0 * cross[d];
      const double* row = cov.data() + d * dim;
      for (std::size_t e = 0; e < dim; ++e) {
        if (alpha[e]) s += row[e];
      }
    }
    return s;
  }
};

std::size_t count_ones(const std::vector<std::uint8_t>& alpha) {
  return static_cast<std::size_t>(std::count(alpha.begin(), alpha.end(), 1));
}

}  // namespace

SelectionFit fit_selection(std::span<const Vector> xs, std::span<const double> ys,
                           std::span<const double> g_bar, double lambda, SelectionMode mode,
                           std::size_t exact_max_dim) {
  if (xs.empty() || xs.size() != ys.size()) {
    throw ConfigError("fit_selection needs matching, non-empty member lists");
  }
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  const std::size_t D = g_bar.size();
  for (const auto& x : xs) {
    if (x.size() != D) throw FormatError("fit_selection member dimension differs from g_bar");
  }
  if (std::abs(norm2(g_bar) - 1.0) > 1e-9) throw ConfigError("g_bar must be a unit vector");

  const SelectionStats stats(xs, ys, g_bar);
  auto objective = [&](const std::vector<std::uint8_t>& alpha) {
    return stats.mse(alpha) + lambda * static_cast<double>(count_ones(alpha));
  };

  std::vector<std::uint8_t> alpha(D, 1);
  double best = objective(alpha);
  if (mode == SelectionMode::kExact) {
    if (D > exact_max_dim || D >= 63) {
      throw ConfigError(fmt::format("exact alpha search limited to D <= {} (D = {})",
                                    exact_max_dim, D));
    }
    std::vector<std::uint8_t> trial(D);
    std::size_t best_ones = D;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << D); ++mask) {
      for (std::size_t d = 0; d < D; ++d) trial[d] = (mask >> d) & 1U;
      const double obj = objective(trial);
      const std::size_t ones = count_ones(trial);
      if (obj < best ||
          (obj == best && (ones < best_ones || (ones == best_ones && trial < alpha)))) {
        best = obj;
        best_ones = ones;
        alpha = trial;
      }
    }
  } else {
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t d = 0; d < D; ++d) {
        alpha[d] ^= 1U;
        const double obj = objective(alpha);
        if (obj < best) {
          best = obj;
          changed = true;
        } else {
          alpha[d] ^= 1U;
        }
      }
    }
  }

  SelectionFit fit;
  fit.alpha = alpha;
  fit.b = stats.y_mean;
  for (std::size_t d = 0; d < D; ++d) {
    if (alpha[d]) fit.b -= stats.z_mean[d];
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double pred = fit.b;
    for (std::size_t d = 0; d < D; ++d) {
      if (alpha[d]) pred += g_bar[d] * xs[i][d];
    }
    sse += (pred - ys[i]) * (pred - ys[i]);
  }
  fit.mse = sse / static_cast<double>(xs.size());
  fit.objective = best;
  return fit;
}

double node_predict(const TreeNode& node, std::span<const double> x) {
  if (x.size() != node.w.size()) {
    throw FormatError(fmt::format("node {} expects dimension {}, got {}", node.id,
                                  node.w.size(), x.size()));
  }
  return dot(node.w, x) + node.b;
}

double child_score(const TreeNode& node, const RationaleSample& sample, BestChildRule rule) {
  return rule == BestChildRule::kCosine ? cosine(sample.g, node.w)
                                        : node_predict(node, sample.x);
}

namespace {

int best_by_score(const DecisionTree& tree, std::span<const int> candidates,
                  const std::function<double(const TreeNode&)>& score) {
  if (candidates.empty()) throw DegenerateError("best_child: no candidate nodes");
  int best_id = -1;
  double best_score = 0.0;
  for (int id : candidates) {
    const double s = score(tree.node(id));
    if (best_id < 0 || better(s, id, best_score, best_id)) {
      best_id = id;
      best_score = s;
    }
  }
  return best_id;
}

}  // namespace

int best_child(const DecisionTree& tree, std::span<const int> candidates,
               std::span<const double> g) {
  return best_by_score(tree, candidates,
                       [&](const TreeNode& n) { return cosine(g, n.w); });
}

int best_child(const DecisionTree& tree, std::span<const int> candidates,
               const RationaleSample& sample, BestChildRule rule) {
  return best_by_score(tree, candidates,
                       [&](const TreeNode& n) { return child_score(n, sample, rule); });
}

double tree_predict(const DecisionTree& tree, const RationaleSample& sample) {
  const int v = best_child(tree, tree.second_layer(), sample, tree.hyper.best_child_rule);
  return node_predict(tree.node(v), sample.x);
}

namespace {

// sum_{i in Omega+} (gamma h_i - logsumexp_j gamma h_j)
double log_likelihood_sum(const Vector& h, const RationaleDataset& dataset, double gamma) {
  double shift = -std::numeric_limits<double>::infinity();
  for (double v : h) shift = std::max(shift, gamma * v);
  double acc = 0.0;
  for (double v : h) acc += std::exp(gamma * v - shift);
  const double lse = shift + std::log(acc);
  double sum = 0.0;
  for (auto i : dataset.positives()) sum += gamma * h[i] - lse;
  return sum;
}

// Predictions of the initial tree Q. Under the cosine rule every positive
// is explained by its own leaf.
Vector initial_predictions(const RationaleDataset& dataset, const HyperParams& hyper) {
  const DecisionTree q = init_tree(dataset, hyper);
  const auto& leaves = q.second_layer();
  Vector h(dataset.size());
  std::size_t next_positive = 0;
  for (std::size_t j = 0; j < dataset.size(); ++j) {
    const auto& s = dataset[j];
    int v;
    if (s.positive && hyper.best_child_rule == BestChildRule::kCosine) {
      v = leaves[next_positive];
    } else {
      v = best_child(q, leaves, s, hyper.best_child_rule);
    }
    if (s.positive) ++next_positive;
    h[j] = node_predict(q.node(v), s.x);
  }
  return h;
}

}  // namespace

double log_objective(const DecisionTree& tree, const RationaleDataset& dataset) {
  if (tree.second_layer().empty()) throw DegenerateError("tree root has no children");
  if (tree.dim != dataset.dim()) throw FormatError("tree and dataset dimensions differ");
  Vector h(dataset.size());
  for (std::size_t j = 0; j < dataset.size(); ++j) {
    const int v = best_child(tree, tree.second_layer(), dataset[j], tree.hyper.best_child_rule);
    h[j] = node_predict(tree.node(v), dataset[j].x);
  }
  const Vector hq = initial_predictions(dataset, tree.hyper);
  return log_likelihood_sum(h, dataset, tree.gamma) -
         log_likelihood_sum(hq, dataset, tree.gamma) -
         tree.hyper.beta * static_cast<double>(tree.second_layer().size());
}

// ---------------------------------------------------------------------------
// TreeLearner

struct TreeLearner::NodeFit {
  TreeNode node;
  std::vector<std::size_t> members;
  Vector score;
  Vector h;
};

struct TreeLearner::State {
  double gamma = 1.0;
  double log_q = 0.0;
  int next_id = 0;
  std::vector<int> second_layer;
  std::map<int, std::vector<std::size_t>> members;
  std::map<int, Vector> score;
  std::map<int, Vector> h;
  std::vector<int> best;
  Vector h_hat;
  std::map<std::pair<int, int>, std::unique_ptr<NodeFit>> cache;
};

TreeLearner::TreeLearner(const RationaleDataset& dataset, const HyperParams& hyper, int threads)
    : dataset_(dataset), threads_(std::max(threads, 1)), state_(std::make_unique<State>()) {
  tree_ = init_tree(dataset, hyper);
  auto& st = *state_;
  st.gamma = tree_.gamma;
  st.second_layer = tree_.second_layer();
  const std::size_t N = dataset.size();
  for (int id : st.second_layer) {
    const auto& leaf = tree_.node(id);
    st.members[id] = {dataset.positives()[static_cast<std::size_t>(id - 1)]};
    Vector score(N), h(N);
    for (std::size_t j = 0; j < N; ++j) {
      score[j] = child_score(leaf, dataset[j], hyper.best_child_rule);
      h[j] = node_predict(leaf, dataset[j].x);
    }
    st.score[id] = std::move(score);
    st.h[id] = std::move(h);
  }
  st.next_id = static_cast<int>(st.second_layer.size()) + 1;
  st.best.assign(N, -1);
  st.h_hat.assign(N, 0.0);
  for (std::size_t j = 0; j < N; ++j) {
    int b = -1;
    for (int id : st.second_layer) {
      if (b < 0 || better(st.score[id][j], id, st.score[b][j], b)) b = id;
    }
    st.best[j] = b;
    st.h_hat[j] = st.h[b][j];
  }
  st.log_q = log_likelihood_sum(initial_predictions(dataset, hyper), dataset, st.gamma);
  log_e_ = log_likelihood_sum(st.h_hat, dataset, st.gamma) - st.log_q -
           hyper.beta * static_cast<double>(st.second_layer.size());
  initial_log_e_ = log_e_;
}

TreeLearner::~TreeLearner() = default;

std::unique_ptr<TreeLearner::NodeFit> TreeLearner::compute_fit(int v, int v2) const {
  const auto& st = *state_;
  const auto& hyper = tree_.hyper;
  auto fit = std::make_unique<NodeFit>();
  const auto& ma = st.members.at(v);
  const auto& mb = st.members.at(v2);
  std::merge(ma.begin(), ma.end(), mb.begin(), mb.end(), std::back_inserter(fit->members));

  std::vector<Vector> gs, xs;
  Vector ys;
  for (auto i : fit->members) {
    gs.push_back(dataset_[i].g);
    xs.push_back(dataset_[i].x);
    ys.push_back(dataset_[i].y);
  }
  auto& node = fit->node;
  node.depth = 2;
  node.g_bar = fit_direction(gs);
  const double lambda = hyper.lambda_scale * std::sqrt(static_cast<double>(xs.size()));
  const auto sel = fit_selection(xs, ys, node.g_bar, lambda, hyper.selection,
                                 hyper.exact_alpha_max_dim);
  node.alpha = sel.alpha;
  node.b = sel.b;
  node.w = masked_direction(node.alpha, node.g_bar);
  for (auto i : fit->members) node.omega.push_back(dataset_[i].id);

  const std::size_t N = dataset_.size();
  fit->score.resize(N);
  fit->h.resize(N);
  for (std::size_t j = 0; j < N; ++j) {
    fit->score[j] = child_score(node, dataset_[j], hyper.best_child_rule);
    fit->h[j] = node_predict(node, dataset_[j].x);
  }
  return fit;
}

const TreeLearner::NodeFit& TreeLearner::fit_pair(int v, int v2) {
  const auto key = std::minmax(v, v2);
  auto& slot = state_->cache[{key.first, key.second}];
  if (!slot) slot = compute_fit(key.first, key.second);
  return *slot;
}

double TreeLearner::candidate_log_e(int v, int v2, const NodeFit& fit,
                                    std::vector<int>* best_out, Vector* h_out) const {
  const auto& st = *state_;
  const std::size_t N = dataset_.size();
  const int u = st.next_id;
  std::vector<int> best(N);
  Vector h(N);
  for (std::size_t j = 0; j < N; ++j) {
    const int b = st.best[j];
    if (b == v || b == v2) {
      int bi = u;
      double bs = fit.score[j];
      double bh = fit.h[j];
      for (int c : st.second_layer) {
        if (c == v || c == v2) continue;
        const double s = st.score.at(c)[j];
        if (better(s, c, bs, bi)) {
          bi = c;
          bs = s;
          bh = st.h.at(c)[j];
        }
      }
      best[j] = bi;
      h[j] = bh;
    } else if (better(fit.score[j], u, st.score.at(b)[j], b)) {
      best[j] = u;
      h[j] = fit.h[j];
    } else {
      best[j] = b;
      h[j] = st.h_hat[j];
    }
  }
  const double log_e = log_likelihood_sum(h, dataset_, st.gamma) - st.log_q -
                       tree_.hyper.beta * static_cast<double>(st.second_layer.size() - 1);
  if (best_out) *best_out = std::move(best);
  if (h_out) *h_out = std::move(h);
  return log_e;
}

std::vector<TreeLearner::Candidate> TreeLearner::evaluate_candidates() {
  auto& st = *state_;
  std::vector<int> layer = st.second_layer;
  std::sort(layer.begin(), layer.end());
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t a = 0; a < layer.size(); ++a) {
    for (std::size_t b = a + 1; b < layer.size(); ++b) pairs.emplace_back(layer[a], layer[b]);
  }

  std::vector<std::pair<int, int>> missing;
  for (const auto& p : pairs) {
    if (!st.cache.count(p)) missing.push_back(p);
  }
  std::vector<std::unique_ptr<NodeFit>> fits(missing.size());
  parallel_for(missing.size(), threads_, [&](std::size_t k) {
    fits[k] = compute_fit(missing[k].first, missing[k].second);
  });
  for (std::size_t k = 0; k < missing.size(); ++k) st.cache[missing[k]] = std::move(fits[k]);

  std::vector<Candidate> out(pairs.size());
  parallel_for(pairs.size(), threads_, [&](std::size_t k) {
    const auto [v, v2] = pairs[k];
    const auto& fit = *st.cache.at(pairs[k]);
    Candidate c;
    c.v = v;
    c.v2 = v2;
    c.log_e = candidate_log_e(v, v2, fit, nullptr, nullptr);
    c.delta_log_e = c.log_e - log_e_;
    c.normalized_gain =
        c.delta_log_e / static_cast<double>(st.members.at(v).size() + st.members.at(v2).size());
    out[k] = c;
  });
  return out;
}

namespace {

void increment_depths(DecisionTree& tree, int id) {
  std::vector<int> stack{id};
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    auto& node = tree.nodes.at(n);
    ++node.depth;
    for (int c : node.children) stack.push_back(c);
  }
}

void attach_merge(DecisionTree& tree, const TreeNode& fitted, int v, int v2, int u) {
  TreeNode node = fitted;
  node.id = u;
  node.depth = 2;
  node.children = {v, v2};
  auto& root = tree.nodes.at(tree.root_id);
  std::erase(root.children, v);
  std::erase(root.children, v2);
  root.children.push_back(u);
  increment_depths(tree, v);
  increment_depths(tree, v2);
  tree.nodes.emplace(u, std::move(node));
}

}  // namespace

DecisionTree TreeLearner::preview_merge(int v, int v2) {
  const auto& fit = fit_pair(v, v2);
  DecisionTree copy = tree_;
  attach_merge(copy, fit.node, v, v2, state_->next_id);
  return copy;
}

void TreeLearner::merge(int v, int v2) {
  auto& st = *state_;
  if (v == v2 || std::find(st.second_layer.begin(), st.second_layer.end(), v) == st.second_layer.end() ||
      std::find(st.second_layer.begin(), st.second_layer.end(), v2) == st.second_layer.end()) {
    throw ConfigError(fmt::format("cannot merge ({}, {}): not two distinct root children", v, v2));
  }
  const auto& fit = fit_pair(v, v2);
  std::vector<int> best;
  Vector h;
  const double new_log_e = candidate_log_e(v, v2, fit, &best, &h);
  const int u = st.next_id++;
  attach_merge(tree_, fit.node, v, v2, u);

  st.members[u] = fit.members;
  st.score[u] = fit.score;
  st.h[u] = fit.h;
  for (int gone : {v, v2}) {
    st.score.erase(gone);
    st.h.erase(gone);
  }
  st.second_layer = tree_.second_layer();
  st.best = std::move(best);
  st.h_hat = std::move(h);
  for (auto it = st.cache.begin(); it != st.cache.end();) {
    const auto [a, b] = it->first;
    if (a == v || a == v2 || b == v || b == v2) {
      it = st.cache.erase(it);
    } else {
      ++it;
    }
  }

  MergeRecord rec;
  rec.step = static_cast<int>(tree_.merge_log.size()) + 1;
  rec.v = v;
  rec.v2 = v2;
  rec.u = u;
  rec.delta_log_e = new_log_e - log_e_;
  rec.log_e = new_log_e;
  tree_.merge_log.push_back(rec);
  log_e_ = new_log_e;
}

bool TreeLearner::step() {
  if (state_->second_layer.size() < 2) return false;
  const auto candidates = evaluate_candidates();
  const Candidate* best = nullptr;
  for (const auto& c : candidates) {
    if (!best || c.normalized_gain > best->normalized_gain) best = &c;
  }
  if (!best || !(best->delta_log_e > 0.0)) return false;
  const int v = best->v;
  const int v2 = best->v2;
  merge(v, v2);
  const auto& rec = tree_.merge_log.back();
  spdlog::info("merge {}: ({}, {}) -> {}  dlogE={:.6g}  |V|={}", rec.step, rec.v, rec.v2, rec.u,
               rec.delta_log_e, state_->second_layer.size());
  return true;
}

DecisionTree TreeLearner::run() {
  while (step()) {
  }
  return tree_;
}

DecisionTree learn(const RationaleDataset& dataset, const HyperParams& hyper, int threads) {
  TreeLearner learner(dataset, hyper, threads);
  return learner.run();
}

DecisionTree truncate_at_layer(const DecisionTree& tree, int k) {
  if (k < 2) throw ConfigError(fmt::format("layer must be >= 2 (got {})", k));
  std::vector<int> chosen;
  std::vector<int> stack(tree.second_layer().rbegin(), tree.second_layer().rend());
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const auto& n = tree.node(id);
    if (n.depth == k || n.is_leaf()) {
      chosen.push_back(id);
      continue;
    }
    for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
  }

  DecisionTree out;
  out.dim = tree.dim;
  out.category = tree.category;
  out.hyper = tree.hyper;
  out.gamma = tree.gamma;
  out.root_id = tree.root_id;
  TreeNode root = tree.root();
  root.children = chosen;
  out.nodes.emplace(root.id, std::move(root));
  std::vector<int> keep(chosen.begin(), chosen.end());
  while (!keep.empty()) {
    const int id = keep.back();
    keep.pop_back();
    const auto& n = tree.node(id);
    out.nodes.emplace(id, n);
    for (int c : n.children) keep.push_back(c);
  }
  out.recompute_depths();
  return out;
}

const char* to_string(BestChildRule rule) {
  return rule == BestChildRule::kCosine ? "cosine" : "max_prediction";
}

const char* to_string(SelectionMode mode) {
  return mode == SelectionMode::kExact ? "exact" : "greedy";
}

BestChildRule parse_best_child_rule(const std::string& s) {
  if (s == "cosine") return BestChildRule::kCosine;
  if (s == "max_prediction") return BestChildRule::kMaxPrediction;
  throw ConfigError(fmt::format("unknown best-child rule '{}'", s));
}

std::string layer_label(int layer) {
  return layer == kLeafLayer ? std::string("leaves") : std::to_string(layer);
}

int parse_layer(const std::string& s) {
  if (s == "leaves") return kLeafLayer;
  std::size_t used = 0;
  int k = 0;
  try {
    k = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError(fmt::format("bad layer '{}'", s));
  if (k < 2) throw ConfigError(fmt::format("layer must be >= 2 or 'leaves', got {}", k));
  return k;
}

SelectionMode parse_selection_mode(const std::string& s) {
  if (s == "greedy") return SelectionMode::kGreedy;
  if (s == "exact") return SelectionMode::kExact;
  throw ConfigError(fmt::format("unknown selection mode '{}'", s));
}

}  // namespace modetree
