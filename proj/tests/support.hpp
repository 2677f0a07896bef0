#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "modetree/plnet.hpp"
#include "modetree/rationale.hpp"
#include "modetree/tree.hpp"
#include "modetree/util.hpp"

namespace testsupport {

using modetree::Vector;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            fmt::format("modetree_{}_{}", ::getpid(), counter++);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline Vector random_unit(modetree::Rng& rng, std::size_t dim) { return rng.unit_vector(dim); }

inline Vector random_nonneg(modetree::Rng& rng, std::size_t dim, double hi = 1.0) {
  Vector x(dim);
  for (auto& v : x) v = rng.uniform(0.0, hi);
  return x;
}

// Planted-mode dataset through the library's own generator.
inline modetree::RationaleDataset planted_dataset(std::size_t modes, std::size_t n_pos,
                                                  std::size_t n_neg, std::uint64_t seed,
                                                  std::size_t dim = 16) {
  modetree::SyntheticSpec spec;
  spec.dim = dim;
  spec.modes = modes;
  spec.n_pos = n_pos;
  spec.n_neg = n_neg;
  spec.seed = seed;
  const auto net = modetree::plant_net(spec);
  return modetree::build_dataset(net, modetree::generate_dataset(spec, net), "planted");
}

// Random ReLU net; inputs uniform in [0, 1]^D, the n_pos highest scores
// are labeled positive.
inline modetree::RationaleDataset random_net_dataset(std::uint64_t seed, std::size_t dim,
                                                     const std::vector<std::size_t>& hidden,
                                                     std::size_t n_pos, std::size_t n_neg,
                                                     modetree::PiecewiseLinearNet* net_out = nullptr) {
  const auto net = modetree::generate_net(dim, hidden, seed);
  modetree::Rng rng(seed * 7919 + 1);
  std::vector<std::pair<double, Vector>> xs;
  for (std::size_t i = 0; i < n_pos + n_neg; ++i) {
    Vector x = random_nonneg(rng, dim);
    xs.emplace_back(net.forward(x), std::move(x));
  }
  std::stable_sort(xs.begin(), xs.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<modetree::RawSample> raw;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    modetree::RawSample r;
    r.positive = i < n_pos;
    r.id = fmt::format("{}{:03}", r.positive ? "p" : "n", i);
    r.x = xs[i].second;
    raw.push_back(std::move(r));
  }
  if (net_out) *net_out = net;
  return modetree::build_dataset(net, raw, "random");
}

// Direct evaluation of the selection objective for one mask:
// b = mean(y - w.x), mse on that b, plus lambda * |alpha|.
inline double selection_objective(const std::vector<Vector>& xs, const Vector& ys,
                                  const Vector& g_bar, const std::vector<std::uint8_t>& alpha,
                                  double lambda) {
  const std::size_t n = xs.size();
  Vector z(n, 0.0);
  double ones = 0.0;
  for (std::size_t d = 0; d < g_bar.size(); ++d) ones += alpha[d];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < g_bar.size(); ++d) {
      if (alpha[d]) z[i] += g_bar[d] * xs[i][d];
    }
  }
  double b = 0.0;
  for (std::size_t i = 0; i < n; ++i) b += ys[i] - z[i];
  b /= static_cast<double>(n);
  double mse = 0.0;
  for (std::size_t i = 0; i < n; ++i) mse += (z[i] + b - ys[i]) * (z[i] + b - ys[i]);
  return mse / static_cast<double>(n) + lambda * ones;
}

inline std::vector<std::uint8_t> mask_bits(std::uint64_t mask, std::size_t dim) {
  std::vector<std::uint8_t> a(dim);
  for (std::size_t d = 0; d < dim; ++d) a[d] = (mask >> d) & 1u;
  return a;
}

// Minimum objective over all 2^D masks.
inline double brute_force_selection(const std::vector<Vector>& xs, const Vector& ys,
                                    const Vector& g_bar, double lambda) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t dim = g_bar.size();
  for (std::uint64_t m = 0; m < (1ull << dim); ++m) {
    best = std::min(best, selection_objective(xs, ys, g_bar, mask_bits(m, dim), lambda));
  }
  return best;
}

inline double sum_cosine(const std::vector<Vector>& gs, const Vector& u) {
  double s = 0.0;
  for (const auto& g : gs) s += modetree::cosine(g, u);
  return s;
}

// Node chosen by cosine among candidates, ties to the smallest id, zero w
// never chosen while a nonzero one exists.
inline int oracle_best_by_cosine(const modetree::DecisionTree& tree,
                                 const std::vector<int>& candidates, const Vector& g) {
  int best = -1;
  double best_c = -std::numeric_limits<double>::infinity();
  for (int id : candidates) {
    const auto& w = tree.node(id).w;
    double nw = 0.0, dg = 0.0, ng = 0.0;
    for (std::size_t d = 0; d < w.size(); ++d) {
      nw += w[d] * w[d];
      dg += w[d] * g[d];
      ng += g[d] * g[d];
    }
    if (nw == 0.0) continue;
    const double c = dg / (std::sqrt(nw) * std::sqrt(ng));
    if (best < 0 || c > best_c || (c == best_c && id < best)) {
      best = id;
      best_c = c;
    }
  }
  return best;
}

inline double oracle_h(const modetree::TreeNode& node, const Vector& x) {
  double h = node.b;
  for (std::size_t d = 0; d < x.size(); ++d) h += node.w[d] * x[d];
  return h;
}

inline double log_sum_exp(const Vector& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : v) m = std::max(m, a);
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

// From-scratch log E for the cosine rule: positives in Q use their own
// leaf; every other prediction goes through the best child by cosine.
inline double oracle_log_e(const modetree::DecisionTree& tree,
                           const modetree::RationaleDataset& data) {
  const auto q = modetree::init_tree(data, tree.hyper);
  const double gamma = tree.gamma;
  const std::size_t n = data.size();
  Vector hp(n), hq(n);
  std::map<std::string, int> own_leaf;
  for (const auto& [id, node] : q.nodes) {
    if (id != q.root_id) own_leaf[node.omega.front()] = id;
  }
  for (std::size_t j = 0; j < n; ++j) {
    const auto& s = data[j];
    hp[j] = gamma * oracle_h(tree.node(oracle_best_by_cosine(tree, tree.second_layer(), s.g)), s.x);
    const int qv = s.positive ? own_leaf.at(s.id) : oracle_best_by_cosine(q, q.second_layer(), s.g);
    hq[j] = gamma * oracle_h(q.node(qv), s.x);
  }
  const double lp = log_sum_exp(hp), lq = log_sum_exp(hq);
  double total = 0.0;
  for (auto i : data.positives()) total += (hp[i] - lp) - (hq[i] - lq);
  return total - tree.hyper.beta * static_cast<double>(tree.second_layer().size());
}

// Share of positives whose node's majority mode matches their own.
inline double purity(const modetree::DecisionTree& tree, const modetree::RationaleDataset& data) {
  std::size_t agree = 0, total = 0;
  for (int v : tree.second_layer()) {
    std::map<int, std::size_t> counts;
    for (const auto& id : tree.node(v).omega) counts[data[*data.find(id)].mode_id.value_or(-1)]++;
    std::size_t best = 0;
    for (const auto& [mode, c] : counts) best = std::max(best, c);
    agree += best;
    total += tree.node(v).omega.size();
  }
  return static_cast<double>(agree) / static_cast<double>(total);
}

inline int run_cli(const std::string& args, const std::string& out_path = "/dev/null",
                   const std::string& err_path = "/dev/null") {
  const std::string cmd = fmt::format("{} {} > {} 2> {}", MODETREE_CLI, args, out_path, err_path);
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace testsupport
