#include "modetree/rationale.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "modetree/error.hpp"

namespace modetree {

RationaleDataset::RationaleDataset(std::size_t dim, std::string category,
                                   std::vector<RationaleSample> samples)
    : dim_(dim), category_(std::move(category)), samples_(std::move(samples)) {
  if (dim_ < 1) throw FormatError("dataset D must be >= 1");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (s.x.size() != dim_ || s.g.size() != dim_) {
      throw FormatError(fmt::format("sample '{}' has x/g of length {}/{}, expected D={}",
                                    s.id, s.x.size(), s.g.size(), dim_));
    }
    if (!ids.insert(s.id).second) throw FormatError(fmt::format("duplicate sample id '{}'", s.id));
    for (double v : s.x) {
      if (!std::isfinite(v) || v < 0.0) {
        throw FormatError(fmt::format("sample '{}' has a negative or non-finite activation", s.id));
      }
    }
    for (double v : s.g) {
      if (!std::isfinite(v)) throw FormatError(fmt::format("sample '{}' has a non-finite gradient", s.id));
    }
    if (!std::isfinite(s.y) || !std::isfinite(s.b) || !std::isfinite(s.g_norm)) {
      throw FormatError(fmt::format("sample '{}' has a non-finite scalar", s.id));
    }
    (s.positive ? positives_ : negatives_).push_back(i);
  }
  if (positives_.empty()) throw FormatError("dataset has no positive samples");
}

std::optional<std::size_t> RationaleDataset::find(const std::string& id) const {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i].id == id) return i;
  }
  return std::nullopt;
}

RationaleSample extract_rationale(const PiecewiseLinearNet& net, std::span<const double> x,
                                  std::string id, bool positive) {
  RationaleSample s;
  s.id = std::move(id);
  s.positive = positive;
  s.x.assign(x.begin(), x.end());
  s.y = net.forward(x);
  s.g = net.gradient(x);
  s.b = s.y - dot(s.g, s.x);
  s.g_norm = 1.0;
  return s;
}

RationaleSample normalize(RationaleSample sample) {
  const double n = norm2(sample.g);
  if (!(n > 0.0)) {
    throw DegenerateError(fmt::format("sample '{}' has a zero gradient", sample.id));
  }
  for (auto& v : sample.g) v /= n;
  sample.y /= n;
  sample.b /= n;
  sample.g_norm *= n;
  return sample;
}

RationaleDataset build_dataset(const PiecewiseLinearNet& net,
                               const std::vector<RawSample>& raw, std::string category) {
  std::vector<RationaleSample> samples;
  samples.reserve(raw.size());
  for (const auto& r : raw) {
    auto s = extract_rationale(net, r.x, r.id, r.positive);
    s.mode_id = r.mode_id;
    try {
      samples.push_back(normalize(std::move(s)));
    } catch (const DegenerateError& e) {
      spdlog::warn("rejecting sample: {}", e.what());
    }
  }
  return RationaleDataset(net.input_dim(), std::move(category), std::move(samples));
}

namespace {

void check_tensor(const SpatialTensor& t, const char* what) {
  if (t.side < 1 || t.channels < 1 || t.values.size() != t.side * t.side * t.channels) {
    throw FormatError(fmt::format("{} tensor has inconsistent shape", what));
  }
}

}  // namespace

ChannelScale compute_scale(std::span<const SpatialTensor> maps) {
  if (maps.empty()) throw FormatError("compute_scale needs at least one feature map");
  const std::size_t D = maps.front().channels;
  ChannelScale out;
  out.s.assign(D, 0.0);
  for (const auto& m : maps) {
    check_tensor(m, "feature map");
    if (m.channels != D) throw FormatError("feature maps disagree on channel count");
    Vector sum(D, 0.0);
    for (std::size_t p = 0; p < m.side * m.side; ++p) {
      for (std::size_t d = 0; d < D; ++d) {
        const double v = m.values[p * D + d];
        if (v < 0.0) throw FormatError("feature map has a negative activation");
        sum[d] += v;
      }
    }
    const double area = static_cast<double>(m.side * m.side);
    for (std::size_t d = 0; d < D; ++d) out.s[d] += sum[d] / area;
  }
  for (std::size_t d = 0; d < D; ++d) {
    out.s[d] /= static_cast<double>(maps.size());
    if (out.s[d] == 0.0) out.zero_channels.push_back(d);
  }
  return out;
}

ChannelScale compute_scale(std::span<const SpatialTensor> maps,
                           const std::vector<bool>& positive, ScaleScope scope) {
  if (scope == ScaleScope::kAllImages) return compute_scale(maps);
  if (positive.size() != maps.size()) throw FormatError("label count differs from map count");
  std::vector<SpatialTensor> chosen;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (positive[i]) chosen.push_back(maps[i]);
  }
  return compute_scale(chosen);
}

std::pair<Vector, Vector> aggregate_spatial(const SpatialTensor& map,
                                            const SpatialTensor& grad_map,
                                            std::span<const double> s) {
  check_tensor(map, "feature map");
  check_tensor(grad_map, "gradient map");
  if (map.side != grad_map.side || map.channels != grad_map.channels) {
    throw FormatError("feature map and gradient map shapes differ");
  }
  const std::size_t D = map.channels;
  if (s.size() != D) throw FormatError("scale vector length differs from channel count");
  Vector x(D, 0.0);
  Vector g(D, 0.0);
  for (std::size_t p = 0; p < map.side * map.side; ++p) {
    for (std::size_t d = 0; d < D; ++d) {
      x[d] += map.values[p * D + d];
      g[d] += grad_map.values[p * D + d];
    }
  }
  const double area = static_cast<double>(map.side * map.side);
  for (std::size_t d = 0; d < D; ++d) {
    if (!(s[d] >= 0.0) || !std::isfinite(s[d])) {
      throw ConfigError(fmt::format("scale s_{} = {} is not positive", d, s[d]));
    }
    if (s[d] == 0.0) {
      x[d] = 0.0;
      g[d] = 0.0;
      continue;
    }
    x[d] /= s[d];
    g[d] *= s[d] / area;
  }
  return {std::move(x), std::move(g)};
}

std::pair<RationaleDataset, ChannelScale> build_dataset_from_feature_maps(
    const std::vector<FeatureMapRecord>& records, std::string category, ScaleScope scope) {
  if (records.empty()) throw FormatError("no feature-map records");
  std::vector<SpatialTensor> maps;
  std::vector<bool> positive;
  maps.reserve(records.size());
  for (const auto& r : records) {
    maps.push_back(r.activations);
    positive.push_back(r.positive);
  }
  auto scale = compute_scale(maps, positive, scope);

  std::vector<RationaleSample> samples;
  for (const auto& r : records) {
    auto [x, g] = aggregate_spatial(r.activations, r.gradients, scale.s);
    RationaleSample s;
    s.id = r.id;
    s.positive = r.positive;
    s.x = std::move(x);
    s.g = std::move(g);
    s.y = r.y;
    s.b = r.y - dot(s.g, s.x);
    try {
      samples.push_back(normalize(std::move(s)));
    } catch (const DegenerateError& e) {
      spdlog::warn("rejecting sample: {}", e.what());
    }
  }
  const std::size_t D = maps.front().channels;
  return {RationaleDataset(D, std::move(category), std::move(samples)), std::move(scale)};
}

std::vector<std::string> check_invariants(const RationaleDataset& dataset,
                                          double reconstruction_tol) {
  std::vector<std::string> problems;
  for (const auto& s : dataset.samples()) {
    const double n = norm2(s.g);
    if (std::abs(n - 1.0) > 1e-9) {
      problems.push_back(fmt::format("{}: |g| = {:.17g}", s.id, n));
    }
    const double residual = dot(s.g, s.x) + s.b - s.y;
    if (std::abs(residual) > reconstruction_tol * std::max(1.0, std::abs(s.y))) {
      problems.push_back(fmt::format("{}: g.x + b - y = {:.3e}", s.id, residual));
    }
    for (double v : s.x) {
      if (v < 0.0) {
        problems.push_back(fmt::format("{}: negative activation", s.id));
        break;
      }
    }
  }
  return problems;
}

namespace {

void append_vector(std::string& out, const Vector& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_real(v[i]);
  }
  out += ']';
}

}  // namespace

std::string dataset_to_jsonl(const RationaleDataset& dataset) {
  std::string out;
  out += fmt::format("{{\"D\":{},\"category\":{}}}\n", dataset.dim(),
                     nlohmann::json(dataset.category()).dump());
  for (const auto& s : dataset.samples()) {
    out += fmt::format("{{\"id\":{},\"label\":{},\"y\":{},\"b\":{},\"g_norm\":{},\"x\":",
                       nlohmann::json(s.id).dump(), s.positive ? 1 : 0, format_real(s.y),
                       format_real(s.b), format_real(s.g_norm));
    append_vector(out, s.x);
    out += ",\"g\":";
    append_vector(out, s.g);
    if (s.mode_id) out += fmt::format(",\"mode_id\":{}", *s.mode_id);
    out += "}\n";
  }
  return out;
}

RationaleDataset dataset_from_jsonl(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  std::string category;
  bool have_header = false;
  std::vector<RationaleSample> samples;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(fmt::format("{}:{}: malformed JSON: {}", source, line_no, e.what()));
    }
    if (!have_header) {
      if (!j.is_object() || !j.contains("D") || !j.contains("category") || j.contains("id")) {
        throw FormatError(fmt::format("{}:{}: missing header line {{\"D\", \"category\"}}",
                                      source, line_no));
      }
      try {
        dim = j.at("D").get<std::size_t>();
        category = j.at("category").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}:{}: bad header: {}", source, line_no, e.what()));
      }
      have_header = true;
      continue;
    }
    RationaleSample s;
    try {
      s.id = j.at("id").get<std::string>();
      const int label = j.at("label").get<int>();
      if (label != 0 && label != 1) throw FormatError("label must be 0 or 1");
      s.positive = label == 1;
      s.y = j.at("y").get<double>();
      s.b = j.at("b").get<double>();
      s.g_norm = j.at("g_norm").get<double>();
      s.x = j.at("x").get<Vector>();
      s.g = j.at("g").get<Vector>();
      if (j.contains("mode_id") && !j.at("mode_id").is_null()) {
        s.mode_id = j.at("mode_id").get<int>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(fmt::format("{}:{}: bad record: {}", source, line_no, e.what()));
    } catch (const FormatError& e) {
      throw FormatError(fmt::format("{}:{}: {}", source, line_no, e.what()));
    }
    if (s.x.size() != dim || s.g.size() != dim) {
      throw FormatError(fmt::format("{}:{}: record '{}' has vectors of length {}/{}, header says D={}",
                                    source, line_no, s.id, s.x.size(), s.g.size(), dim));
    }
    samples.push_back(std::move(s));
  }
  if (!have_header) throw FormatError(fmt::format("{}: empty dataset file (no header)", source));
  try {
    return RationaleDataset(dim, std::move(category), std::move(samples));
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", source, e.what()));
  }
}

void save_dataset(const RationaleDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write dataset file '{}'", path));
  out << dataset_to_jsonl(dataset);
}

RationaleDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open dataset file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return dataset_from_jsonl(buf.str(), path);
}

void save_scale(const ChannelScale& scale, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(fmt::format("cannot write scale file '{}'", path));
  nlohmann::ordered_json j;
  j["s"] = scale.s;
  j["zero_channels"] = scale.zero_channels;
  out << j.dump() << '\n';
}

ChannelScale load_scale(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open scale file '{}'", path));
  try {
    nlohmann::json j;
    in >> j;
    ChannelScale scale;
    scale.s = j.at("s").get<Vector>();
    if (j.contains("zero_channels")) {
      scale.zero_channels = j.at("zero_channels").get<std::vector<std::size_t>>();
    }
    for (auto d : scale.zero_channels) {
      if (d >= scale.s.size() || scale.s[d] != 0.0) {
        throw FormatError(fmt::format("{}: zero_channels entry {} is inconsistent", path, d));
      }
    }
    return scale;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path, e.what()));
  }
}

}  // namespace modetree
