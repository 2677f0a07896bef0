#include "modetree/plnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "modetree/error.hpp"

namespace modetree {

namespace {

// Pre-activations of every layer, ReLU applied in place for the next input.
std::vector<Vector> forward_trace(const std::vector<DenseLayer>& layers,
                                  std::span<const double> x) {
  std::vector<Vector> pre;
  pre.reserve(layers.size());
  Vector in(x.begin(), x.end());
  for (const auto& layer : layers) {
    Vector out(layer.out_dim);
    for (std::size_t r = 0; r < layer.out_dim; ++r) {
      double s = layer.bias[r];
      const double* row = layer.weights.data() + r * layer.in_dim;
      for (std::size_t c = 0; c < layer.in_dim; ++c) s += row[c] * in[c];
      out[r] = s;
    }
    pre.push_back(out);
    if (layer.activation == Activation::kRelu) {
      for (auto& v : out) v = std::max(v, 0.0);
    }
    in = std::move(out);
  }
  return pre;
}

const char* activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "identity";
}

}  // namespace

PiecewiseLinearNet::PiecewiseLinearNet(std::vector<DenseLayer> layers)
    : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("net has no layers");
  if (layers_.front().in_dim < 1) throw ConfigError("net input_dim must be >= 1");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.out_dim < 1) throw ConfigError(fmt::format("layer {} has no outputs", i));
    if (i > 0 && l.in_dim != layers_[i - 1].out_dim) {
      throw ConfigError(fmt::format("layer {} expects {} inputs, previous layer gives {}",
                                    i, l.in_dim, layers_[i - 1].out_dim));
    }
    if (l.weights.size() != l.in_dim * l.out_dim || l.bias.size() != l.out_dim) {
      throw ConfigError(fmt::format("layer {} parameter sizes do not match its shape", i));
    }
    const bool last = i + 1 == layers_.size();
    if (last && (l.out_dim != 1 || l.activation != Activation::kIdentity)) {
      throw ConfigError("final layer must be affine with a scalar output");
    }
    if (!last && l.activation != Activation::kRelu) {
      throw ConfigError(fmt::format("hidden layer {} must use ReLU", i));
    }
  }
}

void PiecewiseLinearNet::check_input(std::span<const double> x) const {
  if (x.size() != input_dim()) {
    throw FormatError(fmt::format("input has dimension {}, net expects {}", x.size(),
                                  input_dim()));
  }
}

double PiecewiseLinearNet::forward(std::span<const double> x) const {
  check_input(x);
  return forward_trace(layers_, x).back()[0];
}

Vector PiecewiseLinearNet::gradient(std::span<const double> x) const {
  check_input(x);
  const auto pre = forward_trace(layers_, x);
  Vector upstream{1.0};
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& layer = layers_[li];
    if (layer.activation == Activation::kRelu) {
      for (std::size_t r = 0; r < layer.out_dim; ++r) {
        if (!(pre[li][r] > 0.0)) upstream[r] = 0.0;
      }
    }
    Vector down(layer.in_dim, 0.0);
    for (std::size_t r = 0; r < layer.out_dim; ++r) {
      if (upstream[r] == 0.0) continue;
      const double* row = layer.weights.data() + r * layer.in_dim;
      for (std::size_t c = 0; c < layer.in_dim; ++c) down[c] += upstream[r] * row[c];
    }
    upstream = std::move(down);
  }
  return upstream;
}

double PiecewiseLinearNet::ablate(std::span<const double> x,
                                  std::span<const std::size_t> zero_dims) const {
  check_input(x);
  Vector masked(x.begin(), x.end());
  for (auto d : zero_dims) {
    if (d >= masked.size()) {
      throw FormatError(fmt::format("ablation index {} out of range for D={}", d,
                                    masked.size()));
    }
    masked[d] = 0.0;
  }
  return forward(masked);
}

double PiecewiseLinearNet::min_preactivation_margin(std::span<const double> x) const {
  check_input(x);
  const auto pre = forward_trace(layers_, x);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    if (layers_[li].activation != Activation::kRelu) continue;
    for (double v : pre[li]) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

std::vector<bool> PiecewiseLinearNet::activation_pattern(std::span<const double> x) const {
  check_input(x);
  const auto pre = forward_trace(layers_, x);
  std::vector<bool> pattern;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    if (layers_[li].activation != Activation::kRelu) continue;
    for (double v : pre[li]) pattern.push_back(v > 0.0);
  }
  return pattern;
}

nlohmann::ordered_json PiecewiseLinearNet::to_json() const {
  nlohmann::ordered_json j;
  std::vector<std::size_t> dims{input_dim()};
  auto weights = nlohmann::ordered_json::array();
  auto biases = nlohmann::ordered_json::array();
  auto activations = nlohmann::ordered_json::array();
  for (const auto& l : layers_) {
    dims.push_back(l.out_dim);
    weights.push_back(l.weights);
    biases.push_back(l.bias);
    activations.push_back(activation_name(l.activation));
  }
  j["dims"] = dims;
  j["weights"] = weights;
  j["biases"] = biases;
  j["activations"] = activations;
  return j;
}

PiecewiseLinearNet PiecewiseLinearNet::from_json(const nlohmann::json& j) {
  try {
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    const auto& activations = j.at("activations");
    if (dims.size() < 2 || weights.size() + 1 != dims.size() ||
        biases.size() + 1 != dims.size() || activations.size() + 1 != dims.size()) {
      throw FormatError("net JSON: dims/weights/biases/activations lengths disagree");
    }
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      DenseLayer l;
      l.in_dim = dims[i];
      l.out_dim = dims[i + 1];
      l.weights = weights[i].get<Vector>();
      l.bias = biases[i].get<Vector>();
      const auto act = activations[i].get<std::string>();
      if (act == "relu") {
        l.activation = Activation::kRelu;
      } else if (act == "identity") {
        l.activation = Activation::kIdentity;
      } else {
        throw FormatError(fmt::format("net JSON: unknown activation '{}'", act));
      }
      layers.push_back(std::move(l));
    }
    return PiecewiseLinearNet(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("net JSON: {}", e.what()));
  } catch (const ConfigError& e) {
    throw FormatError(fmt::format("net JSON: {}", e.what()));
  }
}

PiecewiseLinearNet generate_net(std::size_t input_dim,
                                const std::vector<std::size_t>& hidden_sizes,
                                std::uint64_t seed) {
  if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
  for (auto h : hidden_sizes) {
    if (h < 1) throw ConfigError("hidden layer sizes must be >= 1");
  }
  Rng rng(seed);
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden_sizes.begin(), hidden_sizes.end());
  dims.push_back(1);
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.in_dim = dims[i];
    l.out_dim = dims[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
    l.weights.resize(l.in_dim * l.out_dim);
    for (auto& w : l.weights) w = rng.uniform(-bound, bound);
    l.bias.resize(l.out_dim);
    for (auto& b : l.bias) b = rng.uniform(-bound, bound);
    l.activation = i + 2 == dims.size() ? Activation::kIdentity : Activation::kRelu;
    layers.push_back(std::move(l));
  }
  return PiecewiseLinearNet(std::move(layers));
}

void save_net(const PiecewiseLinearNet& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(fmt::format("cannot write net file '{}'", path));
  out << net.to_json().dump(1) << '\n';
}

PiecewiseLinearNet load_net(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open net file '{}'", path));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path, e.what()));
  }
  return PiecewiseLinearNet::from_json(j);
}

void SyntheticSpec::validate() const {
  if (modes < 1) throw ConfigError("number of modes must be >= 1");
  if (dim < 2) throw ConfigError("D must be >= 2");
  if (n_pos < 1) throw ConfigError("need at least one positive sample");
  if (!(noise_scale >= 0.0)) throw ConfigError("noise_scale must be >= 0");
  if (!(signal_scale > 0.0)) throw ConfigError("signal_scale must be > 0");
  if (mode_directions.empty()) {
    if (dim < modes) {
      throw ConfigError(fmt::format("derived mode directions need D >= K (D={}, K={})",
                                    dim, modes));
    }
    return;
  }
  if (mode_directions.size() != modes) {
    throw ConfigError("mode_directions must have exactly K entries");
  }
  for (std::size_t k = 0; k < modes; ++k) {
    const auto& m = mode_directions[k];
    if (m.size() != dim) throw ConfigError(fmt::format("mode direction {} is not in R^D", k));
    if (std::abs(norm2(m) - 1.0) > 1e-9) {
      throw ConfigError(fmt::format("mode direction {} is not a unit vector", k));
    }
    for (std::size_t k2 = 0; k2 < k; ++k2) {
      if (mode_directions[k2] == m) {
        throw ConfigError(fmt::format("mode directions {} and {} are identical", k2, k));
      }
    }
  }
}

std::vector<Vector> make_mode_directions(std::size_t dim, std::size_t modes,
                                         std::uint64_t seed) {
  if (modes < 1 || dim < modes) {
    throw ConfigError("make_mode_directions needs 1 <= K <= D");
  }
  Rng rng(seed ^ 0x6d6f646573ULL);
  std::vector<Vector> dirs(modes, Vector(dim, 0.0));
  for (std::size_t d = 0; d < dim; ++d) {
    dirs[d * modes / dim][d] = rng.uniform(0.5, 1.0);
  }
  for (auto& m : dirs) {
    const double n = norm2(m);
    for (auto& v : m) v /= n;
  }
  return dirs;
}

namespace {

double negative_sigma(const SyntheticSpec& spec) {
  return spec.signal_scale / (2.0 * std::sqrt(static_cast<double>(spec.dim)));
}

std::vector<Vector> resolved_directions(const SyntheticSpec& spec) {
  return spec.mode_directions.empty()
             ? make_mode_directions(spec.dim, spec.modes, spec.seed)
             : spec.mode_directions;
}

}  // namespace

PiecewiseLinearNet plant_net(const SyntheticSpec& spec) {
  spec.validate();
  const auto dirs = resolved_directions(spec);
  const std::size_t D = spec.dim;
  const std::size_t K = spec.modes;
  const double texture_weight = 0.1;
  const double detector_threshold = 0.3 * spec.signal_scale;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
  Rng rng(spec.seed ^ 0x706c616e74ULL);

  // Background evidence: non-negative weights, always active.
  Vector background(D);
  for (auto& u : background) u = rng.uniform(0.2, 1.0) * inv_sqrt_d;
  std::vector<Vector> detectors(K, Vector(D));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d < D; ++d) {
      detectors[k][d] = dirs[k][d] + 0.05 * rng.uniform(-1.0, 1.0) * inv_sqrt_d;
    }
  }
  // Texture directions: orthonormal, and orthogonal to the background and
  // every detector. Each feeds a +/- unit pair computing |r.x|, which splits
  // every mode into many activation regions while keeping ||g|| constant
  // within a mode.
  std::vector<Vector> basis;
  auto orthogonalize = [&](Vector v) {
    for (const auto& e : basis) {
      const double c = dot(v, e);
      for (std::size_t d = 0; d < D; ++d) v[d] -= c * e[d];
    }
    const double n = norm2(v);
    if (n < 1e-9) return false;
    for (auto& x : v) x /= n;
    basis.push_back(std::move(v));
    return true;
  };
  orthogonalize(background);
  for (const auto& det : detectors) orthogonalize(det);
  const std::size_t fixed = basis.size();
  while (basis.size() < D) {
    Vector v(D);
    for (auto& x : v) x = rng.normal();
    orthogonalize(std::move(v));
  }
  const std::size_t T = D - fixed;
  const std::size_t H = 1 + K + 2 * T;

  DenseLayer hidden;
  hidden.in_dim = D;
  hidden.out_dim = H;
  hidden.activation = Activation::kRelu;
  hidden.weights.assign(H * D, 0.0);
  hidden.bias.assign(H, 0.0);
  auto row = [&](std::size_t unit) { return hidden.weights.data() + unit * D; };
  std::copy(background.begin(), background.end(), row(0));
  hidden.bias[0] = 1.0;
  for (std::size_t k = 0; k < K; ++k) {
    std::copy(detectors[k].begin(), detectors[k].end(), row(1 + k));
    hidden.bias[1 + k] = -detector_threshold;
  }
  for (std::size_t t = 0; t < T; ++t) {
    const auto& r = basis[fixed + t];
    for (std::size_t d = 0; d < D; ++d) {
      row(1 + K + 2 * t)[d] = r[d];
      row(2 + K + 2 * t)[d] = -r[d];
    }
  }

  DenseLayer output;
  output.in_dim = H;
  output.out_dim = 1;
  output.activation = Activation::kIdentity;
  output.weights.assign(H, 0.0);
  const double background_weight = 0.25;
  output.weights[0] = background_weight;
  for (std::size_t k = 0; k < K; ++k) output.weights[1 + k] = rng.uniform(1.4, 1.6);
  for (std::size_t t = 0; t < T; ++t) {
    const double v = texture_weight * rng.uniform(0.5, 1.0);
    output.weights[1 + K + 2 * t] = v;
    output.weights[2 + K + 2 * t] = v;
  }
  // Centre negatives below zero: subtract the expected background response.
  const double mean_neg = negative_sigma(spec) * std::sqrt(2.0 / M_PI);
  double expected_background = 1.0;
  for (double u : background) expected_background += u * mean_neg;
  output.bias = {-background_weight * expected_background - 0.25 * spec.signal_scale};

  return PiecewiseLinearNet({std::move(hidden), std::move(output)});
}

std::vector<RawSample> generate_dataset(const SyntheticSpec& spec,
                                        const PiecewiseLinearNet& net) {
  spec.validate();
  if (net.input_dim() != spec.dim) {
    throw ConfigError(fmt::format("net input_dim {} differs from D={}", net.input_dim(),
                                  spec.dim));
  }
  const auto dirs = resolved_directions(spec);
  Rng rng(spec.seed ^ 0x64617461ULL);
  std::vector<RawSample> out;
  out.reserve(spec.n_pos + spec.n_neg);
  for (std::size_t i = 0; i < spec.n_pos; ++i) {
    RawSample s;
    s.id = fmt::format("p{:04d}", i);
    s.positive = true;
    const std::size_t mode = i % spec.modes;
    s.mode_id = static_cast<int>(mode);
    const double amplitude = rng.uniform(0.8, 1.2) * spec.signal_scale;
    s.x.resize(spec.dim);
    for (std::size_t d = 0; d < spec.dim; ++d) {
      const double noise = spec.noise_scale > 0.0 ? spec.noise_scale * rng.normal() : 0.0;
      s.x[d] = std::max(0.0, amplitude * dirs[mode][d] + noise);
    }
    out.push_back(std::move(s));
  }
  const double sigma = negative_sigma(spec);
  for (std::size_t i = 0; i < spec.n_neg; ++i) {
    RawSample s;
    s.id = fmt::format("n{:04d}", i);
    s.x.resize(spec.dim);
    for (auto& v : s.x) v = std::abs(sigma * rng.normal());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace modetree
