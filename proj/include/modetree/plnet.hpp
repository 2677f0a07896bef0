#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "modetree/util.hpp"

namespace modetree {

enum class Activation { kIdentity, kRelu };

// One affine map followed by an optional ReLU.
struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Vector weights;  // row-major, out_dim x in_dim
  Vector bias;     // out_dim
  Activation activation = Activation::kIdentity;
};

// A stack of dense layers with ReLU on every hidden layer and an affine
// scalar output. Immutable after construction; every method is const and
// safe to call concurrently.
class PiecewiseLinearNet {
 public:
  // Throws ConfigError unless the layers chain, the last layer has one
  // output and identity activation, and all hidden layers use ReLU.
  explicit PiecewiseLinearNet(std::vector<DenseLayer> layers);

  std::size_t input_dim() const { return layers_.front().in_dim; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  double forward(std::span<const double> x) const;

  // Exact gradient of forward() w.r.t. x with ReLU'(0) = 0.
  Vector gradient(std::span<const double> x) const;

  // forward() with the listed input dimensions set to zero.
  double ablate(std::span<const double> x,
                std::span<const std::size_t> zero_dims) const;

  // Smallest |pre-activation| over all ReLU units at x; +inf for nets
  // without hidden layers. Used to pick kink-free points.
  double min_preactivation_margin(std::span<const double> x) const;

  // Concatenated on/off pattern of every ReLU unit at x.
  std::vector<bool> activation_pattern(std::span<const double> x) const;

  nlohmann::ordered_json to_json() const;
  static PiecewiseLinearNet from_json(const nlohmann::json& j);

 private:
  void check_input(std::span<const double> x) const;

  std::vector<DenseLayer> layers_;
};

// Random net with weights and biases drawn uniformly from
// [-1/sqrt(fan_in), +1/sqrt(fan_in)]. An empty hidden list gives a purely
// affine net.
PiecewiseLinearNet generate_net(std::size_t input_dim,
                                const std::vector<std::size_t>& hidden_sizes,
                                std::uint64_t seed);

void save_net(const PiecewiseLinearNet& net, const std::string& path);
PiecewiseLinearNet load_net(const std::string& path);

// Synthetic data with planted decision modes.
struct SyntheticSpec {
  std::size_t dim = 16;
  std::size_t modes = 3;
  std::size_t n_pos = 60;
  std::size_t n_neg = 60;
  std::uint64_t seed = 42;
  // Empty means "derive from seed" (see make_mode_directions).
  std::vector<Vector> mode_directions;
  double noise_scale = 0.1;
  // Length of the noiseless positive activation vector.
  double signal_scale = 3.0;

  // Throws ConfigError on K < 1, D < 2, non-unit or repeated directions.
  void validate() const;
};

// K non-negative unit directions. Filter d belongs to block floor(d*K/D);
// direction k is supported on block k with magnitudes uniform in [0.5, 1].
// Requires D >= K.
std::vector<Vector> make_mode_directions(std::size_t dim, std::size_t modes,
                                         std::uint64_t seed);

// A net with one hidden ReLU layer: a background unit that is always on,
// one detector per mode direction (threshold 0.3 * signal_scale), and +/-
// pairs of small "texture" units along directions orthogonal to both. All
// output weights are non-negative, so the net is convex. Detectors give each
// planted mode its own rationale; texture units give every image in a mode
// a slightly different one.
PiecewiseLinearNet plant_net(const SyntheticSpec& spec);

struct RawSample {
  std::string id;
  bool positive = false;
  Vector x;
  std::optional<int> mode_id;
};

// Positive i gets mode i mod K and
//   x = max(0, a_i * signal_scale * mode_dir + noise_scale * N(0, I)),
// with amplitude a_i uniform in [0.8, 1.2]. Negatives are half-normal with
// per-filter scale signal_scale / (2 sqrt(D)), unrelated to any mode.
// Positives come first; ids are "p0000".. and "n0000"...
std::vector<RawSample> generate_dataset(const SyntheticSpec& spec,
                                        const PiecewiseLinearNet& net);

}  // namespace modetree
