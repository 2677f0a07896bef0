#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modetree/explain.hpp"
#include "modetree/plnet.hpp"
#include "modetree/rationale.hpp"
#include "modetree/tree.hpp"

namespace modetree {

// Network output with one part's filters zeroed, in raw (un-normalized)
// units, keyed by (sample id, part name).
class AblationTable {
 public:
  void set(const std::string& id, const std::string& part, double y_hat);
  std::optional<double> find(const std::string& id, const std::string& part) const;
  std::size_t size() const { return values_.size(); }
  const std::map<std::pair<std::string, std::string>, double>& values() const { return values_; }

  bool operator==(const AblationTable&) const = default;

 private:
  std::map<std::pair<std::string, std::string>, double> values_;
};

// Ablates every (positive sample, part) pair through net.ablate.
AblationTable compute_ablations(const PiecewiseLinearNet& net, const RationaleDataset& dataset,
                                const PartAssignment& parts);

// CSV with header id,part,y_hat.
std::string ablations_to_csv(const AblationTable& table);
AblationTable ablations_from_csv(const std::string& text, const std::string& source);
void save_ablations(const AblationTable& table, const std::string& path);
AblationTable load_ablations(const std::string& path);

// Node that explains the sample in a (possibly truncated) tree.
int explanation_node(const DecisionTree& tree, const RationaleSample& sample);

struct PartErrors {
  // E_{Omega+}[varrho_m - varrho*_m] / E_{Omega+}[y] per part.
  Vector signed_error;
  // Same with |varrho_m - varrho*_m|.
  Vector abs_error;
  double signed_avg = 0.0;
  double abs_avg = 0.0;
};

// varrho*_m = (y_raw - y_hat_raw) / g_norm is the ground-truth contribution
// on the normalized scale. Throws FormatError on a missing ablation record.
PartErrors part_contribution_error(const DecisionTree& tree, const RationaleDataset& dataset,
                                   const PartAssignment& parts, const AblationTable& ablations);

// Per-image fitness sum_d min(rho_hat, |t|) / sum_d max(rho_hat, |t|) with
// t = g o x and rho_hat = max(rho sign(t), 0).
double image_fitness(std::span<const double> rho, std::span<const double> t);

// Mean image fitness over positives; images whose denominator is zero are
// skipped with a warning. NaN when every image is skipped.
double fitness(const DecisionTree& tree, const RationaleDataset& dataset);

enum class ThresholdMode { kZero, kRefit };

struct Accuracy {
  double tree = 0.0;
  double net = 0.0;        // sign of the network's own score
  double threshold = 0.0;  // threshold applied to h_hat
};

// Positive iff h_hat > threshold, scored over all samples. kRefit picks the
// accuracy-maximizing threshold among midpoints of sorted h_hat values (and
// one below the minimum); ties go to the smallest threshold.
Accuracy classification_accuracy(const DecisionTree& tree, const RationaleDataset& dataset,
                                 ThresholdMode mode = ThresholdMode::kZero);

// E_{Omega+}|h_hat - y| / (max y - min y over all samples). Throws
// DegenerateError when the range is zero.
double prediction_error(const DecisionTree& tree, const RationaleDataset& dataset);

struct LayerMetrics {
  int layer = 0;  // kLeafLayer for the leaves row
  std::size_t node_count = 0;
  double fitness = 0.0;
  Accuracy accuracy;
  double prediction_error = 0.0;
  std::optional<PartErrors> part_errors;
};

struct MetricsReport {
  std::vector<std::string> part_names;
  std::vector<LayerMetrics> rows;
};

// Every depth from 2 to the deepest layer, then the leaves.
std::vector<int> default_layers(const DecisionTree& tree);

// Truncates the tree at each layer and evaluates it. Part errors are
// computed only when both parts and ablations are given.
MetricsReport evaluate_layers(const DecisionTree& tree, const RationaleDataset& dataset,
                              const std::vector<int>& layers, const PartAssignment* parts,
                              const AblationTable* ablations,
                              ThresholdMode mode = ThresholdMode::kZero, int threads = 1);

std::string metrics_to_csv(const MetricsReport& report);
// Fixed-width table for terminals.
std::string metrics_summary(const MetricsReport& report);

}  // namespace modetree
