#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modetree/plnet.hpp"
#include "modetree/util.hpp"

namespace modetree {

// One image's rationale: y ~= g.x + b over D filter activations.
struct RationaleSample {
  std::string id;
  bool positive = false;
  Vector x;  // non-negative
  Vector g;  // unit norm once normalized
  double b = 0.0;
  double y = 0.0;
  // ||g|| before normalization; multiply y, g, b by it to recover raw units.
  double g_norm = 1.0;
  std::optional<int> mode_id;

  bool operator==(const RationaleSample&) const = default;
};

// Samples for one category. Positives form Omega+, the rest Omega-.
class RationaleDataset {
 public:
  RationaleDataset() = default;
  // Throws FormatError on mismatched D, duplicate ids, negative or
  // non-finite values, or an empty positive set.
  RationaleDataset(std::size_t dim, std::string category,
                   std::vector<RationaleSample> samples);

  std::size_t dim() const { return dim_; }
  const std::string& category() const { return category_; }
  const std::vector<RationaleSample>& samples() const { return samples_; }
  const RationaleSample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  const std::vector<std::size_t>& positives() const { return positives_; }
  const std::vector<std::size_t>& negatives() const { return negatives_; }
  std::optional<std::size_t> find(const std::string& id) const;

  bool operator==(const RationaleDataset& o) const {
    return dim_ == o.dim_ && category_ == o.category_ && samples_ == o.samples_;
  }

 private:
  std::size_t dim_ = 0;
  std::string category_;
  std::vector<RationaleSample> samples_;
  std::vector<std::size_t> positives_;
  std::vector<std::size_t> negatives_;
};

// Un-normalized rationale of net at x: g = dy/dx, b = y - g.x.
RationaleSample extract_rationale(const PiecewiseLinearNet& net, std::span<const double> x,
                                  std::string id, bool positive);

// Divides y, g and b by ||g||; x is left untouched. Throws DegenerateError
// when g is the zero vector.
RationaleSample normalize(RationaleSample sample);

// Extracts and normalizes every raw sample; zero-gradient samples are
// dropped with a warning.
RationaleDataset build_dataset(const PiecewiseLinearNet& net,
                               const std::vector<RawSample>& raw, std::string category);

// L x L x D tensor stored (h, w, d) row-major.
struct SpatialTensor {
  std::size_t side = 0;
  std::size_t channels = 0;
  Vector values;

  double at(std::size_t h, std::size_t w, std::size_t d) const {
    return values[(h * side + w) * channels + d];
  }
};

// Per-channel normalizers s_d = E_I E_{h,w} x^(h,w,d). Channels that never
// activate have s_d = 0 and are listed in zero_channels.
struct ChannelScale {
  Vector s;
  std::vector<std::size_t> zero_channels;
};

enum class ScaleScope { kAllImages, kPositivesOnly };

// Throws FormatError on empty input, mismatched shapes or negative values.
ChannelScale compute_scale(std::span<const SpatialTensor> maps);

// Restricts the average to positives when scope is kPositivesOnly.
ChannelScale compute_scale(std::span<const SpatialTensor> maps,
                           const std::vector<bool>& positive, ScaleScope scope);

// x_d = sum_{h,w} map / s_d and g_d = s_d / L^2 * sum_{h,w} grad. Channels
// with s_d == 0 yield x_d = g_d = 0; negative s_d throws ConfigError.
std::pair<Vector, Vector> aggregate_spatial(const SpatialTensor& map,
                                            const SpatialTensor& grad_map,
                                            std::span<const double> s);

// Captured top-layer activations and their gradient for one image.
struct FeatureMapRecord {
  std::string id;
  bool positive = false;
  SpatialTensor activations;
  SpatialTensor gradients;
  double y = 0.0;
};

// Two passes: compute_scale over the chosen scope, then aggregate, set
// b = y - g.x and normalize. Zero-gradient records are dropped.
std::pair<RationaleDataset, ChannelScale> build_dataset_from_feature_maps(
    const std::vector<FeatureMapRecord>& records, std::string category,
    ScaleScope scope = ScaleScope::kAllImages);

// Invariant violations (unit g, reconstruction, non-negative x) as
// human-readable strings; empty when the dataset is clean.
std::vector<std::string> check_invariants(const RationaleDataset& dataset,
                                          double reconstruction_tol = 1e-6);

// JSON Lines: header {"D", "category"} then one record per sample.
void save_dataset(const RationaleDataset& dataset, const std::string& path);
RationaleDataset load_dataset(const std::string& path);
std::string dataset_to_jsonl(const RationaleDataset& dataset);
RationaleDataset dataset_from_jsonl(const std::string& text, const std::string& source);

// s_d sidecar: {"s": [...], "zero_channels": [...]}.
void save_scale(const ChannelScale& scale, const std::string& path);
ChannelScale load_scale(const std::string& path);

}  // namespace modetree
