// Copyright 2026 The dpfed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Layered parameter vectors: the common currency for model parameters,
// per-user updates and noise. Also hosts flat / per-layer L2 clipping and the
// Gaussian noise step.

#ifndef DPFED_PARAM_VECTOR_HPP_
#define DPFED_PARAM_VECTOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpfed/error.hpp"
#include "dpfed/rng.hpp"

namespace dpfed {

struct LayerSpec {
  std::string name;
  std::size_t size = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Ordered layer names and lengths. Two ParamVectors are compatible iff their
// shapes compare equal.
using Shape = std::vector<LayerSpec>;

struct Layer {
  std::string name;
  std::vector<double> values;
};

class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("ParamVector needs at least one layer");
  }

  static ParamVector Zeros(const Shape& shape) {
    std::vector<Layer> layers;
    layers.reserve(shape.size());
    for (const auto& spec : shape) {
      layers.push_back({spec.name, std::vector<double>(spec.size, 0.0)});
    }
    return ParamVector(std::move(layers));
  }

  std::size_t num_layers() const { return layers_.size(); }
  const Layer& layer(std::size_t j) const { return layers_.at(j); }
  std::span<const double> values(std::size_t j) const { return layers_.at(j).values; }
  std::span<double> mutable_values(std::size_t j) { return layers_.at(j).values; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.values.size();
    return n;
  }

  Shape shape() const {
    Shape s;
    s.reserve(layers_.size());
    for (const auto& l : layers_) s.push_back({l.name, l.values.size()});
    return s;
  }

  bool SameShape(const ParamVector& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      if (layers_[j].name != other.layers_[j].name ||
          layers_[j].values.size() != other.layers_[j].values.size()) {
        return false;
      }
    }
    return true;
  }

  bool AllFinite() const {
    for (const auto& l : layers_) {
      for (double x : l.values) {
        if (!std::isfinite(x)) return false;
      }
    }
    return true;
  }

  ParamVector& operator+=(const ParamVector& other) {
    CheckCompatible(other, "add");
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      auto& a = layers_[j].values;
      const auto& b = other.layers_[j].values;
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    }
    return *this;
  }

  ParamVector& operator-=(const ParamVector& other) {
    CheckCompatible(other, "subtract");
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      auto& a = layers_[j].values;
      const auto& b = other.layers_[j].values;
      for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
    }
    return *this;
  }

  ParamVector& operator*=(double c) {
    for (auto& l : layers_) {
      for (double& x : l.values) x *= c;
    }
    return *this;
  }

  // this += c * other
  ParamVector& AddScaled(const ParamVector& other, double c) {
    CheckCompatible(other, "add");
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      auto& a = layers_[j].values;
      const auto& b = other.layers_[j].values;
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += c * b[i];
    }
    return *this;
  }

  // this = a + b, reusing this vector's storage. Requires a, b and this to
  // share a shape.
  void AssignSum(const ParamVector& a, const ParamVector& b) {
    CheckCompatible(a, "assign");
    a.CheckCompatible(b, "add");
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      auto& out = layers_[j].values;
      const auto& x = a.layers_[j].values;
      const auto& y = b.layers_[j].values;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    }
  }

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(ParamVector a, double c) { return a *= c; }
  friend ParamVector operator*(double c, ParamVector a) { return a *= c; }

  // Exact (bitwise) equality of names and values.
  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    if (!a.SameShape(b)) return false;
    for (std::size_t j = 0; j < a.layers_.size(); ++j) {
      if (a.layers_[j].values != b.layers_[j].values) return false;
    }
    return true;
  }

 private:
  void CheckCompatible(const ParamVector& other, const char* op) const {
    if (!SameShape(other)) {
      throw ShapeError(std::string("cannot ") + op +
                       " ParamVectors with different layer shapes");
    }
  }

  std::vector<Layer> layers_;
};

inline double SquaredNorm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double LayerNorm(const ParamVector& v, std::size_t j) {
  return std::sqrt(SquaredNorm(v.values(j)));
}

// sqrt(sum_j ||v(j)||^2)
inline double FlatNorm(const ParamVector& v) {
  double s = 0.0;
  for (std::size_t j = 0; j < v.num_layers(); ++j) s += SquaredNorm(v.values(j));
  return std::sqrt(s);
}

namespace internal {

inline void RequireFinite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("corrupt update: non-finite entry");
  }
}

// Scales v in place so that its L2 norm is at most bound and returns the norm
// before scaling. Vectors already inside the ball (including zero) are left
// untouched. The scale is nudged down until the recomputed norm is <= bound,
// which also makes clipping exactly idempotent.
inline double ProjectToBall(std::span<double> v, double bound) {
  const double norm = std::sqrt(SquaredNorm(v));
  if (norm <= bound) return norm;
  const std::vector<double> original(v.begin(), v.end());
  double scale = bound / norm;
  for (;;) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = original[i] * scale;
    if (std::sqrt(SquaredNorm(v)) <= bound) return norm;
    scale = std::nextafter(scale, 0.0);
  }
}

}  // namespace internal

namespace internal {

// Scales every layer of v in place by the largest factor <= bound / norm
// that keeps the recomputed flat norm <= bound.
inline void ScaleIntoBall(ParamVector& v, double norm, double bound) {
  std::vector<std::vector<double>> original;
  original.reserve(v.num_layers());
  for (std::size_t j = 0; j < v.num_layers(); ++j) {
    original.emplace_back(v.values(j).begin(), v.values(j).end());
  }
  double scale = bound / norm;
  for (;;) {
    for (std::size_t j = 0; j < v.num_layers(); ++j) {
      auto out = v.mutable_values(j);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = original[j][i] * scale;
    }
    if (FlatNorm(v) <= bound) return;
    scale = std::nextafter(scale, 0.0);
  }
}

}  // namespace internal

// Delta * min(1, S / ||Delta||). S may be +infinity (no clipping).
inline ParamVector FlatClip(ParamVector delta, double bound) {
  if (!(bound > 0.0)) throw ConfigError("clip bound S must be positive");
  for (std::size_t j = 0; j < delta.num_layers(); ++j) internal::RequireFinite(delta.values(j));
  const double norm = FlatNorm(delta);
  if (norm > bound) internal::ScaleIntoBall(delta, norm, bound);
  return delta;
}

// Clips each layer j to its own bound S_j.
inline ParamVector PerLayerClip(ParamVector delta, std::span<const double> bounds) {
  if (bounds.size() != delta.num_layers()) {
    throw ConfigError("per-layer clip: got " + std::to_string(bounds.size()) +
                      " bounds for " + std::to_string(delta.num_layers()) + " layers");
  }
  for (double b : bounds) {
    if (!(b > 0.0)) throw ConfigError("per-layer clip bounds must be positive");
  }
  for (std::size_t j = 0; j < delta.num_layers(); ++j) {
    internal::RequireFinite(delta.values(j));
    internal::ProjectToBall(delta.mutable_values(j), bounds[j]);
  }
  return delta;
}

enum class ClipMode { kFlat, kPerLayer };

// Flat: one bound S on the concatenated update. PerLayer: bounds S_j with
// S = sqrt(sum_j S_j^2).
class ClipConfig {
 public:
  ClipConfig() = default;

  static ClipConfig Flat(double bound) {
    if (!(bound > 0.0)) throw ConfigError("clip bound S must be positive");
    ClipConfig c;
    c.mode_ = ClipMode::kFlat;
    c.total_ = bound;
    return c;
  }

  // The even split S_j = S / sqrt(m).
  static ClipConfig PerLayer(double total, std::size_t num_layers) {
    if (!(total > 0.0)) throw ConfigError("clip bound S must be positive");
    if (num_layers == 0) throw ConfigError("per-layer clipping needs at least one layer");
    return PerLayer(std::vector<double>(num_layers, total / std::sqrt(static_cast<double>(num_layers))));
  }

  static ClipConfig PerLayer(std::vector<double> bounds) {
    if (bounds.empty()) throw ConfigError("per-layer clipping needs at least one bound");
    double sq = 0.0;
    for (double b : bounds) {
      if (!(b > 0.0)) throw ConfigError("per-layer clip bounds must be positive");
      sq += b * b;
    }
    ClipConfig c;
    c.mode_ = ClipMode::kPerLayer;
    c.bounds_ = std::move(bounds);
    c.total_ = std::sqrt(sq);
    return c;
  }

  // No clipping: flat with S = +infinity.
  static ClipConfig None() { return Flat(std::numeric_limits<double>::infinity()); }

  ClipMode mode() const { return mode_; }
  double total_bound() const { return total_; }
  const std::vector<double>& layer_bounds() const { return bounds_; }
  bool enabled() const { return std::isfinite(total_); }

 private:
  ClipMode mode_ = ClipMode::kFlat;
  double total_ = std::numeric_limits<double>::infinity();
  std::vector<double> bounds_;
};

struct ClipInfo {
  double norm_before = 0.0;
  bool clipped = false;
};

// Clips delta in place according to cfg.
inline ClipInfo ClipInPlace(ParamVector& delta, const ClipConfig& cfg) {
  ClipInfo info;
  for (std::size_t j = 0; j < delta.num_layers(); ++j) internal::RequireFinite(delta.values(j));
  info.norm_before = FlatNorm(delta);
  if (cfg.mode() == ClipMode::kFlat) {
    if (info.norm_before > cfg.total_bound()) {
      internal::ScaleIntoBall(delta, info.norm_before, cfg.total_bound());
      info.clipped = true;
    }
    return info;
  }
  const auto& bounds = cfg.layer_bounds();
  if (bounds.size() != delta.num_layers()) {
    throw ConfigError("per-layer clip: got " + std::to_string(bounds.size()) + " bounds for " +
                      std::to_string(delta.num_layers()) + " layers");
  }
  for (std::size_t j = 0; j < bounds.size(); ++j) {
    const double before = internal::ProjectToBall(delta.mutable_values(j), bounds[j]);
    info.clipped = info.clipped || before > bounds[j];
  }
  return info;
}

struct ClipResult {
  ParamVector value;
  double norm_before = 0.0;
  bool clipped = false;
};

inline ClipResult ApplyClip(ParamVector delta, const ClipConfig& cfg) {
  const ClipInfo info = ClipInPlace(delta, cfg);
  return {std::move(delta), info.norm_before, info.clipped};
}

// Adds an independent N(0, sigma^2) draw to every coordinate, in layer order.
inline ParamVector AddGaussianNoise(ParamVector v, double sigma, Rng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("noise sigma must be finite and non-negative");
  }
  if (sigma == 0.0) return v;
  std::normal_distribution<double> normal(0.0, sigma);
  for (std::size_t j = 0; j < v.num_layers(); ++j) {
    for (double& x : v.mutable_values(j)) x += normal(rng);
  }
  return v;
}

// Checkpoint format (JSON):
//   {"format": "dpfed.param_vector.v1",
//    "layers": [{"name": str, "length": int, "values": [double, ...]}, ...]}
// Doubles are written with round-trip precision, so Load(Save(v)) == v
// bitwise.
inline nlohmann::json ToJson(const ParamVector& v) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : v.layers()) {
    layers.push_back({{"name", l.name}, {"length", l.values.size()}, {"values", l.values}});
  }
  return {{"format", "dpfed.param_vector.v1"}, {"layers", std::move(layers)}};
}

inline ParamVector ParamVectorFromJson(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "dpfed.param_vector.v1") {
    throw ConfigError("not a dpfed.param_vector.v1 document");
  }
  std::vector<Layer> layers;
  for (const auto& lj : j.at("layers")) {
    Layer l{lj.at("name").get<std::string>(), lj.at("values").get<std::vector<double>>()};
    if (l.values.size() != lj.at("length").get<std::size_t>()) {
      throw ConfigError("layer '" + l.name + "': length field does not match values");
    }
    layers.push_back(std::move(l));
  }
  return ParamVector(std::move(layers));
}

inline nlohmann::json ToJson(const Shape& shape) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : shape) out.push_back({{"name", s.name}, {"length", s.size}});
  return out;
}

}  // namespace dpfed

#endif  // DPFED_PARAM_VECTOR_HPP_
