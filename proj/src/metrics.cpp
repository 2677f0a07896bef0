#include "modetree/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "modetree/error.hpp"

namespace modetree {

void AblationTable::set(const std::string& id, const std::string& part, double y_hat) {
  values_[{id, part}] = y_hat;
}

std::optional<double> AblationTable::find(const std::string& id, const std::string& part) const {
  auto it = values_.find({id, part});
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

AblationTable compute_ablations(const PiecewiseLinearNet& net, const RationaleDataset& dataset,
                                const PartAssignment& parts) {
  if (net.input_dim() != dataset.dim() || parts.dim() != dataset.dim()) {
    throw FormatError(fmt::format("net D = {}, dataset D = {}, parts D = {} must agree",
                                  net.input_dim(), dataset.dim(), parts.dim()));
  }
  AblationTable table;
  for (auto i : dataset.positives()) {
    const auto& s = dataset[i];
    for (std::size_t m = 0; m < parts.size(); ++m) {
      table.set(s.id, parts.names()[m], net.ablate(s.x, parts.filters()[m]));
    }
  }
  return table;
}

std::string ablations_to_csv(const AblationTable& table) {
  std::string out = "id,part,y_hat\n";
  for (const auto& [key, v] : table.values()) {
    out += fmt::format("{},{},{}\n", key.first, key.second, format_real(v));
  }
  return out;
}

AblationTable ablations_from_csv(const std::string& text, const std::string& source) {
  AblationTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "id,part,y_hat") {
        throw FormatError(fmt::format("{}:{}: expected header 'id,part,y_hat'", source, lineno));
      }
      header = true;
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
      throw FormatError(fmt::format("{}:{}: expected 3 fields", source, lineno));
    }
    const std::string id = line.substr(0, c1);
    const std::string part = line.substr(c1 + 1, c2 - c1 - 1);
    const std::string num = line.substr(c2 + 1);
    char* end = nullptr;
    const double v = std::strtod(num.c_str(), &end);
    if (num.empty() || end != num.c_str() + num.size() || !std::isfinite(v)) {
      throw FormatError(fmt::format("{}:{}: bad y_hat '{}'", source, lineno, num));
    }
    if (table.find(id, part)) {
      throw FormatError(fmt::format("{}:{}: duplicate record ({}, {})", source, lineno, id, part));
    }
    table.set(id, part, v);
  }
  if (!header) throw FormatError(fmt::format("{}: empty ablation file", source));
  return table;
}

void save_ablations(const AblationTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write ablation file '{}'", path));
  out << ablations_to_csv(table);
}

AblationTable load_ablations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open ablation file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return ablations_from_csv(buf.str(), path);
}

int explanation_node(const DecisionTree& tree, const RationaleSample& sample) {
  return best_child(tree, tree.second_layer(), sample, tree.hyper.best_child_rule);
}

PartErrors part_contribution_error(const DecisionTree& tree, const RationaleDataset& dataset,
                                   const PartAssignment& parts, const AblationTable& ablations) {
  const std::size_t M = parts.size();
  Vector sum_signed(M, 0.0), sum_abs(M, 0.0);
  double sum_y = 0.0;
  for (auto i : dataset.positives()) {
    const auto& s = dataset[i];
    const auto& node = tree.node(explanation_node(tree, s));
    const auto c = contributions(node, s.x, parts);
    const double y_raw = s.y * s.g_norm;
    for (std::size_t m = 0; m < M; ++m) {
      const auto y_hat = ablations.find(s.id, parts.names()[m]);
      if (!y_hat) {
        throw FormatError(fmt::format("no ablation record for ({}, {})", s.id, parts.names()[m]));
      }
      const double truth = (y_raw - *y_hat) / s.g_norm;
      const double diff = c.varrho[m] - truth;
      sum_signed[m] += diff;
      sum_abs[m] += std::abs(diff);
    }
    sum_y += s.y;
  }
  const double n = static_cast<double>(dataset.positives().size());
  const double mean_y = sum_y / n;
  PartErrors e;
  e.signed_error.resize(M);
  e.abs_error.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    e.signed_error[m] = sum_signed[m] / n / mean_y;
    e.abs_error[m] = sum_abs[m] / n / mean_y;
    e.signed_avg += e.signed_error[m];
    e.abs_avg += e.abs_error[m];
  }
  e.signed_avg /= static_cast<double>(M);
  e.abs_avg /= static_cast<double>(M);
  return e;
}

double image_fitness(std::span<const double> rho, std::span<const double> t) {
  if (rho.size() != t.size()) throw FormatError("fitness: rho and t differ in length");
  double num = 0.0, den = 0.0;
  for (std::size_t d = 0; d < t.size(); ++d) {
    const double sign = t[d] > 0.0 ? 1.0 : (t[d] < 0.0 ? -1.0 : 0.0);
    const double rho_hat = std::max(rho[d] * sign, 0.0);
    num += std::min(rho_hat, std::abs(t[d]));
    den += std::max(rho_hat, std::abs(t[d]));
  }
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return num / den;
}

double fitness(const DecisionTree& tree, const RationaleDataset& dataset) {
  double sum = 0.0;
  std::size_t count = 0;
  Vector rho(dataset.dim()), t(dataset.dim());
  for (auto i : dataset.positives()) {
    const auto& s = dataset[i];
    const auto& node = tree.node(explanation_node(tree, s));
    for (std::size_t d = 0; d < s.x.size(); ++d) {
      rho[d] = node.w[d] * s.x[d];
      t[d] = s.g[d] * s.x[d];
    }
    const double f = image_fitness(rho, t);
    if (std::isnan(f)) {
      spdlog::warn("fitness: sample {} has no contribution mass; skipped", s.id);
      continue;
    }
    sum += f;
    ++count;
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / static_cast<double>(count);
}

Accuracy classification_accuracy(const DecisionTree& tree, const RationaleDataset& dataset,
                                 ThresholdMode mode) {
  const std::size_t N = dataset.size();
  Vector h(N);
  std::size_t net_correct = 0;
  for (std::size_t j = 0; j < N; ++j) {
    h[j] = tree_predict(tree, dataset[j]);
    if ((dataset[j].y > 0.0) == dataset[j].positive) ++net_correct;
  }
  auto correct_at = [&](double threshold) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < N; ++j) {
      if ((h[j] > threshold) == dataset[j].positive) ++c;
    }
    return c;
  };
  Accuracy acc;
  acc.net = static_cast<double>(net_correct) / static_cast<double>(N);
  if (mode == ThresholdMode::kZero) {
    acc.threshold = 0.0;
  } else {
    Vector sorted = h;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    Vector candidates{sorted.front() - 1.0};
    for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
      candidates.push_back(0.5 * (sorted[k] + sorted[k + 1]));
    }
    std::size_t best = 0;
    for (double c : candidates) {
      const std::size_t n = correct_at(c);
      if (n > best) {
        best = n;
        acc.threshold = c;
      }
    }
  }
  acc.tree = static_cast<double>(correct_at(acc.threshold)) / static_cast<double>(N);
  return acc;
}

double prediction_error(const DecisionTree& tree, const RationaleDataset& dataset) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : dataset.samples()) {
    lo = std::min(lo, s.y);
    hi = std::max(hi, s.y);
  }
  if (!(hi > lo)) throw DegenerateError("prediction error undefined: y has zero range");
  double sum = 0.0;
  for (auto i : dataset.positives()) {
    sum += std::abs(tree_predict(tree, dataset[i]) - dataset[i].y);
  }
  return sum / static_cast<double>(dataset.positives().size()) / (hi - lo);
}

std::vector<int> default_layers(const DecisionTree& tree) {
  std::vector<int> layers;
  for (int k = 2; k <= tree.max_depth(); ++k) layers.push_back(k);
  layers.push_back(kLeafLayer);
  return layers;
}

MetricsReport evaluate_layers(const DecisionTree& tree, const RationaleDataset& dataset,
                              const std::vector<int>& layers, const PartAssignment* parts,
                              const AblationTable* ablations, ThresholdMode mode, int threads) {
  if (tree.dim != dataset.dim()) throw FormatError("tree and dataset dimensions differ");
  MetricsReport report;
  if (parts) report.part_names = parts->names();
  report.rows.resize(layers.size());
  parallel_for(layers.size(), threads, [&](std::size_t k) {
    const DecisionTree cut = truncate_at_layer(tree, layers[k]);
    LayerMetrics& row = report.rows[k];
    row.layer = layers[k];
    row.node_count = cut.second_layer().size();
    row.fitness = fitness(cut, dataset);
    row.accuracy = classification_accuracy(cut, dataset, mode);
    row.prediction_error = prediction_error(cut, dataset);
    if (parts && ablations) row.part_errors = part_contribution_error(cut, dataset, *parts, *ablations);
  });
  return report;
}

std::string metrics_to_csv(const MetricsReport& report) {
  std::string out = "layer,k_node_count,fitness,cls_accuracy,pred_error,part_err_avg";
  for (const auto& n : report.part_names) out += ",part_err_" + n;
  out += ",part_err_abs_avg";
  for (const auto& n : report.part_names) out += ",part_err_abs_" + n;
  out += ",net_accuracy\n";
  for (const auto& r : report.rows) {
    out += fmt::format("{},{},{},{},{}", layer_label(r.layer), r.node_count,
                       format_real(r.fitness), format_real(r.accuracy.tree),
                       format_real(r.prediction_error));
    auto cells = [&](bool abs_variant) {
      if (!r.part_errors) {
        out += std::string(report.part_names.size() + 1, ',');
        return;
      }
      const auto& e = *r.part_errors;
      out += "," + format_real(abs_variant ? e.abs_avg : e.signed_avg);
      for (double v : abs_variant ? e.abs_error : e.signed_error) out += "," + format_real(v);
    };
    cells(false);
    cells(true);
    out += "," + format_real(r.accuracy.net) + "\n";
  }
  return out;
}

std::string metrics_summary(const MetricsReport& report) {
  std::string out = fmt::format("{:>8} {:>7} {:>8} {:>8} {:>9} {:>10}\n", "layer", "nodes",
                                "fitness", "acc", "pred_err", "part_err");
  for (const auto& r : report.rows) {
    out += fmt::format("{:>8} {:>7} {:>8.4f} {:>8.4f} {:>9.4f} ", layer_label(r.layer),
                       r.node_count, r.fitness, r.accuracy.tree, r.prediction_error);
    out += r.part_errors ? fmt::format("{:>10.4f}\n", r.part_errors->signed_avg)
                         : fmt::format("{:>10}\n", "-");
  }
  if (!report.rows.empty()) {
    out += fmt::format("network accuracy {:.4f}\n", report.rows.front().accuracy.net);
  }
  return out;
}

}  // namespace modetree
