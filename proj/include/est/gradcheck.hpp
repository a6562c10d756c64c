#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "est/core.hpp"
#include "est/depth.hpp"
#include "est/geometry.hpp"
#include "est/transformer.hpp"

// Analytic gradients against central finite differences.
namespace est::gradcheck {

struct Options {
  std::uint64_t seed = 0;
  int instances = 100;
  int half_channels = 2;
  int memories = 2;
  int planes = 4;
  int height = 3;
  int width = 3;
  double step = 1e-6;
  double tolerance = 1e-5;
  // Negative control: perturbs every analytic gradient before comparison.
  bool corrupt = false;
};

struct SuiteReport {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

/// ||a - n|| / max(||a||, ||n||), or 0 when both vanish.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Central differences of `f` with respect to every entry of `x`.
inline std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

namespace detail {

inline void fill_normal(Volume<double>& v, Rng& rng) {
  for (auto& x : v.data()) x = rng.normal();
}

inline double dot(const Volume<double>& a, const Volume<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

inline void corrupt(Volume<double>& g) {
  for (auto& x : g.data()) x = x * 1.01 + 1e-3;
}

}  // namespace detail

/// One random attention + retrieval instance: ~20% of memory voxels masked.
inline double attention_instance(const Options& o, std::uint64_t seed) {
  Rng rng(seed);
  const int C = o.half_channels, D = o.planes, H = o.height, W = o.width;
  transformer::KeyValuePair<double> query{Volume<double>(C, D, H, W), Volume<double>(C, D, H, W), Mask(1, D, H, W, 1),
                                          {}};
  detail::fill_normal(query.key, rng);
  std::vector<transformer::KeyValuePair<double>> mem;
  for (int i = 0; i < o.memories; ++i) {
    transformer::KeyValuePair<double> m{Volume<double>(C, D, H, W), Volume<double>(C, D, H, W), Mask(1, D, H, W), {}};
    detail::fill_normal(m.key, rng);
    detail::fill_normal(m.value, rng);
    for (auto& b : m.mask.data()) b = rng.uniform() < 0.8 ? 1 : 0;
    mem.push_back(std::move(m));
  }
  Volume<double> upstream(C, D, H, W);
  detail::fill_normal(upstream, rng);

  auto grads = transformer::grad_attention_retrieve(query, mem, upstream);
  const auto loss = [&] { return detail::dot(upstream, transformer::retrieve(transformer::attention(query, mem), mem)); };

  std::vector<double> analytic, numeric;
  auto check = [&](Volume<double>& wrt, Volume<double>& g) {
    if (o.corrupt) detail::corrupt(g);
    const auto n = numeric_gradient(wrt.data(), loss, o.step);
    analytic.insert(analytic.end(), g.data().begin(), g.data().end());
    numeric.insert(numeric.end(), n.begin(), n.end());
  };
  check(query.key, grads.query_key);
  for (int i = 0; i < o.memories; ++i) {
    check(mem[i].key, grads.memory_keys[i]);
    check(mem[i].value, grads.memory_values[i]);
  }
  return relative_error(analytic, numeric);
}

/// One random soft-argmax instance over logits in the range [-3, 3].
inline double soft_argmax_instance(const Options& o, std::uint64_t seed) {
  Rng rng(seed);
  const int D = o.planes, H = o.height, W = o.width;
  const geometry::DepthHypotheses hyp(rng.uniform(0.3, 1.0), rng.uniform(2.0, 6.0), D);
  Volume<double> scores(1, D, H, W);
  for (auto& x : scores.data()) x = rng.uniform(-3.0, 3.0);
  Image<double> upstream(H, W);
  for (auto& x : upstream.data()) x = rng.normal();
  const std::vector<double> reduce{1.0};

  const auto loss = [&] {
    const auto dm = depth::soft_argmax(depth::probability_volume(scores, std::span<const double>(reduce)), hyp);
    double s = 0.0;
    for (std::size_t i = 0; i < upstream.size(); ++i) s += upstream.data()[i] * dm.depth.data()[i];
    return s;
  };
  auto g = depth::grad_soft_argmax(depth::probability_volume(scores, std::span<const double>(reduce)), hyp, upstream);
  if (o.corrupt) detail::corrupt(g);
  const auto n = numeric_gradient(scores.data(), loss, o.step);
  return relative_error(g.data(), n);
}

inline std::vector<SuiteReport> run(const Options& o) {
  if (o.instances < 1 || o.half_channels < 1 || o.memories < 1 || o.planes < 2 || o.height < 1 || o.width < 1)
    throw ConfigError("gradcheck: instance sizes must be positive (planes >= 2)");
  std::vector<SuiteReport> out;
  auto suite = [&](const char* name, double (*fn)(const Options&, std::uint64_t), std::uint64_t tag) {
    SuiteReport r{name, o.instances, 0.0, false};
    for (int i = 0; i < o.instances; ++i)
      r.max_rel_error = std::max(r.max_rel_error, fn(o, hash_combine(hash_combine(o.seed, tag), i)));
    r.pass = r.max_rel_error <= o.tolerance;
    out.push_back(r);
  };
  suite("attention_retrieve", attention_instance, 1);
  suite("soft_argmax", soft_argmax_instance, 2);
  return out;
}

}  // namespace est::gradcheck
