#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "est/core.hpp"
#include "est/geometry.hpp"
#include "est/volume.hpp"

// Epipolar spatio-temporal attention over key/value volumes.
namespace est::transformer {

using geometry::Camera;
using geometry::DepthHypotheses;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
struct KeyValuePair {
  Volume<T> key;    // C/2 x D x H x W
  Volume<T> value;  // C/2 x D x H x W
  Mask mask;        // 1 x D x H x W
  Camera camera;
};

/// Attention weights x_i per memory: N x D x H x W.
template <typename T>
struct AttentionVolume {
  Volume<T> weights;
  int memories() const { return weights.channels(); }
};

template <typename T>
struct FusionParams {
  Volume<T> w_raw;  // 1 x D x H x W, squashed by the logistic function
  Volume<T> r_raw;  // 1 x D x H x W
  Matrix<T> g;      // C/2 x C, applied to [v_q ; r*y]

  static FusionParams defaults(int half_channels, int depth, int height, int width) {
    FusionParams p{Volume<T>(1, depth, height, width), Volume<T>(1, depth, height, width),
                   Matrix<T>::Zero(half_channels, 2 * half_channels)};
    p.g.leftCols(half_channels).setIdentity();
    return p;
  }
};

template <typename T>
T logistic(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

namespace detail {

template <typename T>
void require_same(const Volume<T>& a, const Volume<T>& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(what);
}

// Trilinear sample at a fractional voxel; false if any corner with nonzero
// weight is masked out. Zero-weight corners are never read.
template <typename T>
bool trilinear(const KeyValuePair<T>& kv, double u, double v, double d, std::vector<T>& key, std::vector<T>& val) {
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const int d0 = static_cast<int>(std::floor(d));
  const double ax = u - x0, ay = v - y0, ad = d - d0;
  std::fill(key.begin(), key.end(), T(0));
  std::fill(val.begin(), val.end(), T(0));
  const int C = kv.key.channels();
  for (int k = 0; k < 8; ++k) {
    const int dx = k & 1, dy = (k >> 1) & 1, dd = k >> 2;
    const double w = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay) * (dd ? ad : 1.0 - ad);
    if (w == 0.0) continue;
    if (!kv.mask(0, d0 + dd, y0 + dy, x0 + dx)) return false;
    for (int c = 0; c < C; ++c) {
      key[c] += static_cast<T>(w) * kv.key(c, d0 + dd, y0 + dy, x0 + dx);
      val[c] += static_cast<T>(w) * kv.value(c, d0 + dd, y0 + dy, x0 + dx);
    }
  }
  return true;
}

}  // namespace detail

/// Pointwise key and value projections of a hybrid volume. Masked voxels
/// are zero in both outputs.
inline KeyValuePair<float> encode_key_value(const volume::HybridVolume& hybrid, const Eigen::MatrixXf& p_key,
                                            const Eigen::MatrixXf& p_value) {
  const Volume<float>& h = hybrid.values;
  if (p_key.cols() != h.channels() || p_value.cols() != h.channels())
    throw std::invalid_argument("encode_key_value: projection does not match hybrid channel count");
  if (p_key.rows() != p_value.rows()) throw std::invalid_argument("encode_key_value: key/value widths differ");
  if (!hybrid.mask.same_extent(h)) throw std::invalid_argument("encode_key_value: mask shape mismatch");

  const int out_c = static_cast<int>(p_key.rows()), in_c = h.channels();
  const int D = h.depth(), H = h.height(), W = h.width();
  KeyValuePair<float> kv{Volume<float>(out_c, D, H, W), Volume<float>(out_c, D, H, W), hybrid.mask, hybrid.camera};
  const std::size_t in_stride = h.channel_stride();
  parallel_for(D, [&](int d) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!hybrid.mask(0, d, y, x)) continue;
        const float* in = &h(0, d, y, x);
        for (int o = 0; o < out_c; ++o) {
          float sk = 0.0f, sv = 0.0f;
          for (int c = 0; c < in_c; ++c) {
            sk += p_key(o, c) * in[c * in_stride];
            sv += p_value(o, c) * in[c * in_stride];
          }
          kv.key(o, d, y, x) = sk;
          kv.value(o, d, y, x) = sv;
        }
      }
  });
  return kv;
}

/// Resamples a memory key/value pair into the frustum of `query_camera`.
/// Cameras attached to volumes carry intrinsics at volume resolution; the
/// memory and the query share them and `hyp`.
template <typename T>
KeyValuePair<T> epipolar_warp_kv(const KeyValuePair<T>& mem, const Camera& query_camera,
                                 const DepthHypotheses& hyp) {
  const int C = mem.key.channels(), D = mem.key.depth(), H = mem.key.height(), W = mem.key.width();
  if (D != hyp.count()) throw std::invalid_argument("epipolar_warp_kv: depth planes do not match hypotheses");
  const geometry::Intrinsics& K = query_camera.intrinsics;
  if (K.width != W || K.height != H) throw std::invalid_argument("epipolar_warp_kv: camera does not match volume");
  const geometry::Pose rel = geometry::relative_pose(query_camera.pose, mem.camera.pose);

  KeyValuePair<T> out{Volume<T>(C, D, H, W), Volume<T>(C, D, H, W), Mask(1, D, H, W), query_camera};
  parallel_for(D, [&](int d) {
    std::vector<T> key(C), val(C);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const auto m = geometry::epipolar_voxel_map(x, y, d, hyp, K, rel);
        if (!m.valid || !detail::trilinear(mem, m.u, m.v, m.d, key, val)) continue;
        out.mask(0, d, y, x) = 1;
        for (int c = 0; c < C; ++c) {
          out.key(c, d, y, x) = key[c];
          out.value(c, d, y, x) = val[c];
        }
      }
  });
  return out;
}

/// Per-voxel softmax over the dot products of the query key with each
/// warped key. Memories that are masked at a voxel get weight 0.
template <typename T>
AttentionVolume<T> attention(const KeyValuePair<T>& query, const std::vector<KeyValuePair<T>>& warped) {
  if (warped.empty()) throw std::invalid_argument("attention: no memories");
  for (const auto& w : warped) detail::require_same(query.key, w.key, "attention: memory shape mismatch");

  const int N = static_cast<int>(warped.size());
  const int C = query.key.channels(), D = query.key.depth(), H = query.key.height(), W = query.key.width();
  AttentionVolume<T> att{Volume<T>(N, D, H, W)};
  parallel_for(D, [&](int d) {
    std::vector<T> logit(N);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        T peak = -std::numeric_limits<T>::infinity();
        for (int i = 0; i < N; ++i) {
          if (!warped[i].mask(0, d, y, x)) continue;
          T s = T(0);
          for (int c = 0; c < C; ++c) s += query.key(c, d, y, x) * warped[i].key(c, d, y, x);
          logit[i] = s;
          peak = std::max(peak, s);
        }
        if (peak == -std::numeric_limits<T>::infinity()) continue;  // no valid memory
        T total = T(0);
        for (int i = 0; i < N; ++i)
          if (warped[i].mask(0, d, y, x)) total += (logit[i] = std::exp(logit[i] - peak));
        for (int i = 0; i < N; ++i)
          if (warped[i].mask(0, d, y, x)) att.weights(i, d, y, x) = logit[i] / total;
      }
  });
  return att;
}

/// y = sum_i x_i * v_i, summed in memory order.
template <typename T>
Volume<T> retrieve(const AttentionVolume<T>& att, const std::vector<KeyValuePair<T>>& warped) {
  if (static_cast<int>(warped.size()) != att.memories() || warped.empty())
    throw std::invalid_argument("retrieve: attention/memory count mismatch");
  const auto& v0 = warped.front().value;
  if (!att.weights.same_extent(v0)) throw std::invalid_argument("retrieve: attention shape mismatch");
  Volume<T> y(v0.channels(), v0.depth(), v0.height(), v0.width());
  for (int c = 0; c < v0.channels(); ++c)
    for (int d = 0; d < v0.depth(); ++d)
      for (int r = 0; r < v0.height(); ++r)
        for (int x = 0; x < v0.width(); ++x) {
          T s = T(0);
          for (int i = 0; i < att.memories(); ++i) s += att.weights(i, d, r, x) * warped[i].value(c, d, r, x);
          y(c, d, r, x) = s;
        }
  return y;
}

template <typename T>
Volume<T> fuse_concat(const Volume<T>& v_q, const Volume<T>& y) {
  detail::require_same(v_q, y, "fuse_concat: shape mismatch");
  Volume<T> out(2 * v_q.channels(), v_q.depth(), v_q.height(), v_q.width());
  std::copy(v_q.data().begin(), v_q.data().end(), out.data().begin());
  std::copy(y.data().begin(), y.data().end(), out.data().begin() + v_q.size());
  return out;
}

/// f = w*y + (1-w) * g([v_q ; r*y]) with w, r squashed per voxel and
/// broadcast over channels.
template <typename T>
Volume<T> fuse_adaptive(const Volume<T>& v_q, const Volume<T>& y, const FusionParams<T>& p) {
  detail::require_same(v_q, y, "fuse_adaptive: shape mismatch");
  const int C = v_q.channels(), D = v_q.depth(), H = v_q.height(), W = v_q.width();
  if (!p.w_raw.same_extent(v_q) || !p.r_raw.same_extent(v_q))
    throw std::invalid_argument("fuse_adaptive: weight volumes do not match");
  if (p.g.rows() != C || p.g.cols() != 2 * C) throw std::invalid_argument("fuse_adaptive: g must be C/2 x C");

  Volume<T> out(C, D, H, W);
  parallel_for(D, [&](int d) {
    std::vector<T> in(2 * C);
    for (int r = 0; r < H; ++r)
      for (int x = 0; x < W; ++x) {
        const T w = logistic(p.w_raw(0, d, r, x));
        const T rr = logistic(p.r_raw(0, d, r, x));
        for (int c = 0; c < C; ++c) {
          in[c] = v_q(c, d, r, x);
          in[C + c] = rr * y(c, d, r, x);
        }
        for (int o = 0; o < C; ++o) {
          T g = T(0);
          for (int c = 0; c < 2 * C; ++c) g += p.g(o, c) * in[c];
          out(o, d, r, x) = w * y(o, d, r, x) + (T(1) - w) * g;
        }
      }
  });
  return out;
}

template <typename T>
struct AttentionGradients {
  Volume<T> query_key;
  std::vector<Volume<T>> memory_keys;
  std::vector<Volume<T>> memory_values;
};

/// Analytic gradients of <upstream, retrieve(attention(query, warped))>.
template <typename T>
AttentionGradients<T> grad_attention_retrieve(const KeyValuePair<T>& query, const std::vector<KeyValuePair<T>>& warped,
                                              const Volume<T>& upstream) {
  const AttentionVolume<T> att = attention(query, warped);
  const int N = att.memories();
  const int Ck = query.key.channels(), Cv = upstream.channels();
  const int D = query.key.depth(), H = query.key.height(), W = query.key.width();
  if (!upstream.same_shape(warped.front().value)) throw std::invalid_argument("grad: upstream shape mismatch");

  AttentionGradients<T> g{Volume<T>(Ck, D, H, W), {}, {}};
  for (int i = 0; i < N; ++i) {
    g.memory_keys.emplace_back(Ck, D, H, W);
    g.memory_values.emplace_back(Cv, D, H, W);
  }
  std::vector<T> a(N), b(N);
  for (int d = 0; d < D; ++d)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        // dL/dv_i = x_i * g;  dL/dx_i = <g, v_i>;  softmax backward to logits.
        T mean_a = T(0);
        for (int i = 0; i < N; ++i) {
          const T xi = att.weights(i, d, y, x);
          T s = T(0);
          for (int c = 0; c < Cv; ++c) {
            g.memory_values[i](c, d, y, x) = xi * upstream(c, d, y, x);
            s += upstream(c, d, y, x) * warped[i].value(c, d, y, x);
          }
          a[i] = s;
          mean_a += xi * s;
        }
        for (int i = 0; i < N; ++i) b[i] = att.weights(i, d, y, x) * (a[i] - mean_a);
        for (int c = 0; c < Ck; ++c) {
          T s = T(0);
          for (int i = 0; i < N; ++i) {
            s += b[i] * warped[i].key(c, d, y, x);
            g.memory_keys[i](c, d, y, x) = b[i] * query.key(c, d, y, x);
          }
          g.query_key(c, d, y, x) = s;
        }
      }
  return g;
}

}  // namespace est::transformer
