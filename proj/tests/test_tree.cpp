#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "modetree/error.hpp"
#include "modetree/tree.hpp"
#include "support.hpp"

using namespace modetree;
using testsupport::random_nonneg;

namespace {

RationaleSample sample(std::string id, bool positive, Vector x, Vector g, double b) {
  RationaleSample s;
  s.id = std::move(id);
  s.positive = positive;
  s.y = dot(g, x) + b;
  s.x = std::move(x);
  s.g = std::move(g);
  s.b = b;
  return s;
}

// Two positives on orthogonal filters and a negative that the merged node
// would score higher than either leaf does.
RationaleDataset discriminative_leaves() {
  return RationaleDataset(2, "toy",
                          {sample("p0", true, {1, 0}, {1, 0}, 0),
                           sample("p1", true, {0, 1}, {0, 1}, 0),
                           sample("n0", false, {1, 1}, {0.6, 0.8}, 0)});
}

void expect_tree_consistent(const DecisionTree& tree, const RationaleDataset& data) {
  std::multiset<std::string> leaf_members;
  for (int leaf : tree.leaves()) {
    const auto& n = tree.node(leaf);
    ASSERT_EQ(n.omega.size(), 1u);
    leaf_members.insert(n.omega[0]);
  }
  std::multiset<std::string> expected;
  for (auto i : data.positives()) expected.insert(data[i].id);
  EXPECT_EQ(leaf_members, expected);
  for (const auto& [id, n] : tree.nodes) {
    if (id == tree.root_id || n.is_leaf()) continue;
    std::multiset<std::string> u;
    for (int c : n.children) {
      for (const auto& m : tree.node(c).omega) u.insert(m);
    }
    EXPECT_EQ(std::multiset<std::string>(n.omega.begin(), n.omega.end()), u);
    EXPECT_NEAR(norm2(n.g_bar), 1.0, 1e-9);
    for (std::size_t d = 0; d < tree.dim; ++d) {
      EXPECT_EQ(n.w[d], n.alpha[d] ? n.g_bar[d] : 0.0);
    }
  }
}

}  // namespace

TEST(HyperParams, Validation) {
  HyperParams h;
  EXPECT_NO_THROW(h.validate());
  h.beta = 0.0;
  EXPECT_NO_THROW(h.validate());
  h.beta = -1.0;
  EXPECT_THROW(h.validate(), ConfigError);
  h = HyperParams{};
  h.gamma = 0.0;
  EXPECT_THROW(h.validate(), ConfigError);
  h = HyperParams{};
  h.lambda_scale = -1e-3;
  EXPECT_THROW(h.validate(), ConfigError);
}

TEST(HyperParams, AutoGammaIsInverseMeanPositiveScore) {
  const auto ds = testsupport::planted_dataset(2, 10, 4, 3);
  double mean = 0.0;
  for (auto i : ds.positives()) mean += ds[i].y;
  mean /= 10.0;
  EXPECT_NEAR(resolve_gamma(HyperParams{}, ds), 1.0 / mean, 1e-15);
  HyperParams fixed;
  fixed.gamma = 2.5;
  EXPECT_EQ(resolve_gamma(fixed, ds), 2.5);
}

TEST(InitTree, OneLeafPerPositive) {
  const RationaleDataset ds(2, "toy",
                            {sample("a", true, {1, 2}, {0.6, 0.8}, 0.5),
                             sample("n", false, {1, 1}, {1, 0}, 0),
                             sample("b", true, {3, 0}, {1, 0}, -1),
                             sample("c", true, {3, 0}, {1, 0}, -1)});
  const auto q = init_tree(ds, HyperParams{});
  ASSERT_EQ(q.second_layer().size(), 3u);
  EXPECT_EQ(q.second_layer(), (std::vector<int>{1, 2, 3}));
  for (int v : q.second_layer()) {
    const auto& n = q.node(v);
    const auto& s = ds[*ds.find(n.omega[0])];
    EXPECT_EQ(n.g_bar, s.g);
    EXPECT_EQ(n.b, s.b);
    EXPECT_EQ(n.depth, 2);
    EXPECT_NEAR(node_predict(n, s.x), s.y, 1e-15);
    EXPECT_EQ(node_predict(n, Vector{0, 0}), n.b);
  }
  EXPECT_DOUBLE_EQ(log_objective(q, ds), -3.0);
  HyperParams zero;
  zero.beta = 0.0;
  EXPECT_DOUBLE_EQ(log_objective(init_tree(ds, zero), ds), 0.0);
}

TEST(FitDirection, Examples) {
  const Vector e1{1, 0, 0}, e2{0, 1, 0};
  EXPECT_EQ(fit_direction(std::vector<Vector>{e1, e1, e1}), e1);
  const auto g = fit_direction(std::vector<Vector>{e1, e2});
  EXPECT_NEAR(g[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(g[1], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(g[2], 0.0);
  // Opposite members cancel; the first member is returned.
  EXPECT_EQ(fit_direction(std::vector<Vector>{e2, Vector{0, -1, 0}}), e2);
}

TEST(FitDirection, BeatsRandomUnitVectors) {
  Rng rng(2024);
  std::vector<Vector> gs;
  for (int i = 0; i < 7; ++i) gs.push_back(rng.unit_vector(5));
  const double closed = testsupport::sum_cosine(gs, fit_direction(gs));
  for (int t = 0; t < 100000; ++t) {
    ASSERT_LE(testsupport::sum_cosine(gs, rng.unit_vector(5)), closed + 1e-9);
  }
}

TEST(FitSelection, SingleMemberReconstructsExactly) {
  Rng rng(5);
  const Vector g = rng.unit_vector(6);
  const Vector x = random_nonneg(rng, 6);
  const double y = dot(g, x) + 0.3;
  for (auto mode : {SelectionMode::kGreedy, SelectionMode::kExact}) {
    const auto fit = fit_selection(std::vector<Vector>{x}, Vector{y}, g, 0.0, mode);
    EXPECT_NEAR(fit.mse, 0.0, 1e-24);
  }
}

TEST(FitSelection, HugeLambdaSelectsNothing) {
  Rng rng(6);
  std::vector<Vector> xs;
  Vector ys;
  for (int i = 0; i < 5; ++i) {
    xs.push_back(random_nonneg(rng, 4));
    ys.push_back(rng.normal());
  }
  double mean = 0.0;
  for (double y : ys) mean += y / 5.0;
  double var = 0.0;
  for (double y : ys) var += (y - mean) * (y - mean) / 5.0;
  for (auto mode : {SelectionMode::kGreedy, SelectionMode::kExact}) {
    const auto fit = fit_selection(xs, ys, rng.unit_vector(4), 1e6, mode);
    EXPECT_EQ(fit.alpha, std::vector<std::uint8_t>(4, 0));
    EXPECT_NEAR(fit.b, mean, 1e-12);
    EXPECT_NEAR(fit.mse, var, 1e-12);
  }
}

TEST(FitSelection, ExactMatchesEnumerationAndGreedyIsLocalOptimum) {
  Rng rng(77);
  int greedy_close = 0;
  const int instances = 100;
  for (int t = 0; t < instances; ++t) {
    const std::size_t dim = 8;
    std::vector<Vector> xs;
    std::vector<Vector> gs;
    Vector ys;
    for (int i = 0; i < 5; ++i) {
      xs.push_back(random_nonneg(rng, dim));
      gs.push_back(rng.unit_vector(dim));
      ys.push_back(dot(gs.back(), xs.back()) + 0.2 * rng.normal());
    }
    const Vector g_bar = fit_direction(gs);
    const double lambda = 1e-3 * rng.uniform() * std::sqrt(5.0);
    const double best = testsupport::brute_force_selection(xs, ys, g_bar, lambda);
    const auto exact = fit_selection(xs, ys, g_bar, lambda, SelectionMode::kExact);
    const double exact_obj = testsupport::selection_objective(xs, ys, g_bar, exact.alpha, lambda);
    EXPECT_NEAR(exact_obj, best, 1e-12 * std::max(1.0, best));
    EXPECT_NEAR(exact.objective, exact_obj, 1e-10 * std::max(1.0, best));

    const auto greedy = fit_selection(xs, ys, g_bar, lambda, SelectionMode::kGreedy);
    const double greedy_obj = testsupport::selection_objective(xs, ys, g_bar, greedy.alpha, lambda);
    EXPECT_NEAR(greedy.mse + lambda * std::count(greedy.alpha.begin(), greedy.alpha.end(), 1),
                greedy_obj, 1e-10 * std::max(1.0, greedy_obj));
    for (std::size_t d = 0; d < dim; ++d) {
      auto flipped = greedy.alpha;
      flipped[d] ^= 1u;
      EXPECT_GE(testsupport::selection_objective(xs, ys, g_bar, flipped, lambda),
                greedy_obj - 1e-12);
    }
    if (greedy_obj <= best * 1.01 + 1e-15) ++greedy_close;
  }
  EXPECT_GE(greedy_close, 95);
}

TEST(FitSelection, ExactTieBreaksTowardFewerOnes) {
  // Filter 1 is zero in every member, so its bit never changes the fit.
  const std::vector<Vector> xs{{1, 0}, {2, 0}, {3, 0}};
  const Vector ys{1, 2, 3};
  const auto fit = fit_selection(xs, ys, Vector{1, 0}, 0.0, SelectionMode::kExact);
  EXPECT_EQ(fit.alpha, (std::vector<std::uint8_t>{1, 0}));
}

TEST(FitSelection, ExactRefusesLargeDimension) {
  const std::vector<Vector> xs{Vector(13, 1.0)};
  EXPECT_THROW(fit_selection(xs, Vector{1}, Vector(13, 1.0 / std::sqrt(13.0)), 0.0,
                             SelectionMode::kExact, 12),
               ConfigError);
}

TEST(BestChild, MatchesBruteForceAndIsScaleInvariant) {
  const auto ds = testsupport::random_net_dataset(4, 6, {8}, 12, 4);
  const auto q = init_tree(ds, HyperParams{});
  for (std::size_t j = 0; j < ds.size(); ++j) {
    const auto& s = ds[j];
    const int v = best_child(q, q.second_layer(), s.g);
    EXPECT_EQ(v, testsupport::oracle_best_by_cosine(q, q.second_layer(), s.g));
    if (s.positive) EXPECT_NEAR(cosine(s.g, q.node(v).w), 1.0, 1e-12);
    DecisionTree scaled = q;
    for (auto& [id, n] : scaled.nodes) {
      for (auto& w : n.w) w *= 3.7;
    }
    EXPECT_EQ(best_child(scaled, scaled.second_layer(), s.g), v);
  }
}

TEST(BestChild, OrthogonalTiesAndZeroWeights) {
  const RationaleDataset ds(2, "toy",
                            {sample("a", true, {1, 0}, {1, 0}, 0),
                             sample("b", true, {0, 1}, {0, 1}, 0),
                             sample("c", true, {1, 0}, {1, 0}, 0)});
  auto q = init_tree(ds, HyperParams{});
  EXPECT_EQ(best_child(q, q.second_layer(), Vector{1, 0}), 1);
  EXPECT_EQ(best_child(q, std::vector<int>{3, 1}, Vector{1, 0}), 1);
  EXPECT_EQ(best_child(q, q.second_layer(), Vector{0, 2}), 2);
  q.nodes.at(1).w = {0, 0};
  EXPECT_EQ(best_child(q, std::vector<int>{1, 2}, Vector{1, 0}), 2);
  q.nodes.at(2).w = {0, 0};
  // All scores are -inf: the smallest id still wins.
  EXPECT_EQ(best_child(q, std::vector<int>{2, 1}, Vector{1, 0}), 1);
  EXPECT_THROW(best_child(q, std::vector<int>{}, Vector{1, 0}), DegenerateError);
}

TEST(BestChild, MaxPredictionRule) {
  const RationaleDataset ds(2, "toy",
                            {sample("a", true, {1, 0}, {1, 0}, 0),
                             sample("b", true, {0, 1}, {0, 1}, 5)});
  const auto q = init_tree(ds, HyperParams{});
  EXPECT_EQ(best_child(q, q.second_layer(), ds[0], BestChildRule::kCosine), 1);
  EXPECT_EQ(best_child(q, q.second_layer(), ds[0], BestChildRule::kMaxPrediction), 2);
}

TEST(LogObjective, MatchesIndependentOracle) {
  const auto ds = testsupport::random_net_dataset(11, 5, {6}, 10, 6);
  HyperParams hyper;
  hyper.gamma = 0.7;
  TreeLearner learner(ds, hyper);
  for (int step = 0; step < 5 && learner.step(); ++step) {
    const auto& tree = learner.tree();
    EXPECT_NEAR(log_objective(tree, ds), testsupport::oracle_log_e(tree, ds), 1e-10);
    EXPECT_NEAR(learner.log_e(), testsupport::oracle_log_e(tree, ds), 1e-10);
  }
}

TEST(LogObjective, CandidateDeltaMatchesRecompute) {
  const RationaleDataset ds(3, "toy",
                            {sample("p0", true, {1, 0, 0.5}, {0.8, 0.6, 0}, 0.1),
                             sample("p1", true, {0.2, 1, 0}, {0.6, 0.8, 0}, 0.0),
                             sample("p2", true, {0, 0.3, 1}, {0, 0.6, 0.8}, 0.2),
                             sample("p3", true, {1, 1, 1}, {0.48, 0.6, 0.64}, -0.1),
                             sample("n0", false, {0.5, 0.5, 0}, {1, 0, 0}, -0.5),
                             sample("n1", false, {0, 0.5, 0.5}, {0, 0, 1}, -0.4)});
  TreeLearner learner(ds, HyperParams{});
  for (const auto& c : learner.evaluate_candidates()) {
    const auto merged = learner.preview_merge(c.v, c.v2);
    EXPECT_NEAR(c.log_e, log_objective(merged, ds), 1e-10);
    EXPECT_NEAR(c.delta_log_e, log_objective(merged, ds) - learner.log_e(), 1e-10);
    EXPECT_DOUBLE_EQ(c.normalized_gain,
                     c.delta_log_e / static_cast<double>(merged.node(merged.second_layer().back()).omega.size()));
  }
}

TEST(Learn, IdenticalPositivesMergeOnce) {
  const RationaleDataset ds(2, "toy",
                            {sample("p0", true, {1, 2}, {0.6, 0.8}, 0.1),
                             sample("p1", true, {1, 2}, {0.6, 0.8}, 0.1),
                             sample("n0", false, {1, 0}, {1, 0}, -1)});
  const auto tree = learn(ds, HyperParams{});
  ASSERT_EQ(tree.merge_log.size(), 1u);
  EXPECT_EQ(tree.second_layer().size(), 1u);
  // Identical members make alpha = 0 optimal (b = y absorbs the fit), so the
  // merged node scores every sample at y = 2.3. With gamma = 1/2.3 the
  // negative moves from 0.7/2.3 to 1 while both positives stay at 1.
  const double e = std::exp(1.0);
  const double expected = 1.0 + 2.0 * std::log((2.0 * e + std::exp(0.7 / 2.3)) / (3.0 * e));
  EXPECT_NEAR(tree.merge_log[0].delta_log_e, expected, 1e-12);
  const auto& u = tree.node(tree.second_layer()[0]);
  EXPECT_EQ(u.alpha, (std::vector<std::uint8_t>{0, 0}));
  EXPECT_NEAR(node_predict(u, ds[0].x), ds[0].y, 1e-12);
}

TEST(Learn, ZeroBetaDiscriminativeLeavesStopAtQ) {
  const auto ds = discriminative_leaves();
  HyperParams hyper;
  hyper.beta = 0.0;
  TreeLearner learner(ds, hyper);
  for (const auto& c : learner.evaluate_candidates()) EXPECT_LE(c.delta_log_e, 0.0);
  EXPECT_FALSE(learner.step());
  EXPECT_EQ(learner.tree().second_layer().size(), 2u);
  EXPECT_TRUE(learner.tree().merge_log.empty());
  // With the default prior the same pair is worth merging.
  EXPECT_EQ(learn(ds, HyperParams{}).second_layer().size(), 1u);
}

TEST(Learn, TwoPlantedModesRecovered) {
  const auto ds = testsupport::planted_dataset(2, 40, 40, 42);
  const auto tree = learn(ds, HyperParams{});
  EXPECT_EQ(tree.second_layer().size(), 2u);
  EXPECT_DOUBLE_EQ(testsupport::purity(tree, ds), 1.0);
  expect_tree_consistent(tree, ds);
}

TEST(Learn, MergeLogInvariants) {
  const auto ds = testsupport::planted_dataset(3, 30, 30, 5);
  TreeLearner learner(ds, HyperParams{});
  const double start = learner.log_e();
  EXPECT_NEAR(start, log_objective(init_tree(ds, HyperParams{}), ds), 1e-12);
  std::size_t width = learner.tree().second_layer().size();
  const std::size_t leaves = learner.tree().leaves().size();
  while (learner.step()) {
    EXPECT_EQ(learner.tree().second_layer().size(), width - 1);
    EXPECT_EQ(learner.tree().leaves().size(), leaves);
    width = learner.tree().second_layer().size();
  }
  const auto& tree = learner.tree();
  double sum = 0.0;
  for (const auto& m : tree.merge_log) {
    EXPECT_GT(m.delta_log_e, 0.0);
    sum += m.delta_log_e;
  }
  EXPECT_NEAR(sum, log_objective(tree, ds) - start, 1e-8);
  expect_tree_consistent(tree, ds);
}

TEST(Learn, DeterministicAcrossThreadCounts) {
  const auto ds = testsupport::planted_dataset(3, 24, 24, 9);
  const auto a = learn(ds, HyperParams{}, 1);
  const auto b = learn(ds, HyperParams{}, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(tree_to_json(a).dump(), tree_to_json(b).dump());
}

TEST(Learn, ExactSelectionRunsOnSmallDimension) {
  const auto ds = testsupport::planted_dataset(2, 10, 10, 3, 8);
  HyperParams hyper;
  hyper.selection = SelectionMode::kExact;
  const auto tree = learn(ds, hyper);
  expect_tree_consistent(tree, ds);
  hyper.exact_alpha_max_dim = 4;
  EXPECT_THROW(learn(ds, hyper), ConfigError);
}

TEST(Merge, RejectsInvalidPairs) {
  const auto ds = testsupport::planted_dataset(2, 4, 2, 1);
  TreeLearner learner(ds, HyperParams{});
  EXPECT_THROW(learner.merge(1, 1), ConfigError);
  EXPECT_THROW(learner.merge(1, 99), ConfigError);
  learner.merge(1, 2);
  EXPECT_THROW(learner.merge(1, 3), ConfigError);
}

TEST(Truncate, Layers) {
  const auto ds = testsupport::planted_dataset(2, 4, 2, 1);
  TreeLearner learner(ds, HyperParams{});
  learner.merge(1, 2);  // 5
  learner.merge(3, 4);  // 6
  const DecisionTree tree = learner.tree();
  EXPECT_EQ(truncate_at_layer(tree, 2).second_layer(), tree.second_layer());
  auto leaves = truncate_at_layer(tree, 3).second_layer();
  std::sort(leaves.begin(), leaves.end());
  EXPECT_EQ(leaves, (std::vector<int>{1, 2, 3, 4}));
  EXPECT_EQ(truncate_at_layer(tree, kLeafLayer).second_layer().size(), 4u);
  EXPECT_EQ(truncate_at_layer(tree, 50).second_layer().size(), 4u);
  EXPECT_THROW(truncate_at_layer(tree, 1), ConfigError);

  learner.merge(5, 6);  // 7: chain of depth 4
  const DecisionTree deep = learner.tree();
  EXPECT_EQ(deep.max_depth(), 4);
  EXPECT_EQ(truncate_at_layer(deep, 3).second_layer(), (std::vector<int>{5, 6}));
  EXPECT_EQ(deep.nodes_per_depth(), (std::vector<std::size_t>{0, 1, 1, 2, 4}));
  const DecisionTree copy = deep;
  truncate_at_layer(deep, 3);
  EXPECT_EQ(deep, copy);
}

TEST(Truncate, ShallowLeavesAreKept) {
  const auto ds = testsupport::planted_dataset(2, 3, 2, 1);
  TreeLearner learner(ds, HyperParams{});
  learner.merge(1, 2);  // 4 at depth 2, leaf 3 at depth 2
  const auto cut = truncate_at_layer(learner.tree(), 3);
  std::vector<int> ids = cut.second_layer();
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(ids, (std::vector<int>{1, 2, 3}));
}

TEST(TreeIo, RoundTripAndTamper) {
  const auto ds = testsupport::planted_dataset(3, 15, 10, 4);
  const auto tree = learn(ds, HyperParams{});
  testsupport::TempDir dir;
  save_tree(tree, dir.file("t.json"));
  const auto back = load_tree(dir.file("t.json"));
  EXPECT_EQ(back, tree);
  EXPECT_EQ(log_objective(back, ds), log_objective(tree, ds));

  auto j = nlohmann::json::parse(testsupport::read_file(dir.file("t.json")));
  for (auto& n : j["nodes"]) {
    if (!n["alpha_ones"].empty()) {
      n["alpha_ones"].push_back(tree.dim);
      break;
    }
  }
  EXPECT_THROW(tree_from_json(j), FormatError);

  j = nlohmann::json::parse(testsupport::read_file(dir.file("t.json")));
  j["nodes"][1]["g_bar"].push_back(0.0);
  EXPECT_THROW(tree_from_json(j), FormatError);

  j = nlohmann::json::parse(testsupport::read_file(dir.file("t.json")));
  j["nodes"][1]["depth"] = 9;
  EXPECT_THROW(tree_from_json(j), FormatError);

  testsupport::write_file(dir.file("bad.json"), "{");
  try {
    load_tree(dir.file("bad.json"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json"), std::string::npos);
  }
}

TEST(TreeIo, ParseHelpers) {
  EXPECT_EQ(parse_best_child_rule("max_prediction"), BestChildRule::kMaxPrediction);
  EXPECT_EQ(parse_selection_mode("exact"), SelectionMode::kExact);
  EXPECT_THROW(parse_selection_mode("fast"), ConfigError);
  EXPECT_EQ(parse_layer("leaves"), kLeafLayer);
  EXPECT_EQ(parse_layer("3"), 3);
  EXPECT_THROW(parse_layer("1"), ConfigError);
  EXPECT_THROW(parse_layer("2x"), ConfigError);
  EXPECT_EQ(layer_label(kLeafLayer), "leaves");
  EXPECT_EQ(layer_label(4), "4");
}
