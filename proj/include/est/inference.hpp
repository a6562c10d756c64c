#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "est/core.hpp"
#include "est/depth.hpp"
#include "est/geometry.hpp"
#include "est/io.hpp"
#include "est/transformer.hpp"
#include "est/volume.hpp"

namespace est::inference {

using depth::DepthMap;
using geometry::Camera;
using geometry::DepthHypotheses;
using transformer::KeyValuePair;

enum class Mode { Independent, Joint, Estm };
enum class Fusion { Concat, Adaptive };

struct ModelConfig {
  double z_min = 0.5;
  double z_max = 5.0;
  int planes = 64;
  int channels = 32;
  std::uint64_t seed = 0;
  Fusion fusion = Fusion::Adaptive;
  double sharpness = 60.0;  // scale of the negative matching cost fed to the depth softmax
  depth::RefineParams refine;
};

/// Every fixed operator of the pipeline, sized for one image resolution.
struct Model {
  DepthHypotheses hyp;
  int channels;
  Fusion fusion;
  geometry::Intrinsics intrinsics;  // full resolution
  volume::LinearMap w_reduce;       // C x 2C
  Eigen::MatrixXf context_map;      // D x descriptor
  Eigen::MatrixXf p_key;            // C/2 x (C+1)
  Eigen::MatrixXf p_value;          // C/2 x (C+1)
  transformer::FusionParams<float> fusion_params;
  double sharpness;
  depth::RefineParams refine;

  static Model create(const ModelConfig& cfg, const geometry::Intrinsics& K) {
    K.validate();
    if (cfg.channels < 2 || cfg.channels % 2 != 0) throw ConfigError("model: channel count must be even and >= 2");
    if (K.width % volume::kPool != 0 || K.height % volume::kPool != 0 || K.width < 8 || K.height < 8)
      throw ConfigError("model: image size must be a multiple of 4 and at least 8x8");
    const int C = cfg.channels, half = C / 2;
    const DepthHypotheses hyp(cfg.z_min, cfg.z_max, cfg.planes);
    const geometry::Intrinsics kq = K.scaled(volume::kPool);

    Model m{hyp,
            C,
            cfg.fusion,
            K,
            volume::default_reduce_map(C, cfg.seed),
            volume::default_context_map(cfg.planes, cfg.seed),
            Eigen::MatrixXf::Zero(half, C + 1),
            Eigen::MatrixXf::Zero(half, C + 1),
            transformer::FusionParams<float>::defaults(half, cfg.planes, kq.height, kq.width),
            cfg.sharpness,
            cfg.refine};
    // Values pool adjacent matching-cost channels so the summed cost is
    // preserved; keys are a seeded projection that includes the context.
    for (int j = 0; j < half; ++j) m.p_value(j, 2 * j) = m.p_value(j, 2 * j + 1) = 1.0f;
    Rng rng(hash_combine(cfg.seed, 0x6B65790ULL));
    for (int j = 0; j < half; ++j)
      for (int c = 0; c <= C; ++c) m.p_key(j, c) = static_cast<float>(rng.normal() / std::sqrt(C + 1.0));
    return m;
  }

  geometry::Intrinsics volume_intrinsics() const { return intrinsics.scaled(volume::kPool); }

  // Depth-score reductions for each representation of the cost.
  std::vector<double> hybrid_reduce() const {
    std::vector<double> r(channels + 1, -sharpness);
    r.back() = 0.0;
    return r;
  }
  std::vector<double> value_reduce() const { return std::vector<double>(channels / 2, -sharpness); }
  std::vector<double> concat_reduce() const { return std::vector<double>(channels, -0.5 * sharpness); }
};

/// Loads transformer parameters from a JSON sidecar naming raw float32 blobs:
/// {"P_k": {"blob": "pk.f32", "shape": [rows, cols]}, "w_raw": {"blob": ...,
/// "shape": [D, H, W]}, ...}. Missing entries keep their defaults.
inline void load_transformer_params(Model& m, const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw IoError("cannot open " + sidecar.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(sidecar.string() + ": " + e.what());
  }
  const auto dir = sidecar.parent_path();
  auto load_matrix = [&](const char* name, Eigen::MatrixXf& dst) {
    if (!j.contains(name)) return;
    const auto shape = j[name].at("shape").get<std::vector<int>>();
    if (shape.size() != 2 || shape[0] != dst.rows() || shape[1] != dst.cols())
      throw ConfigError(std::string("params: unexpected shape for ") + name);
    const auto data = io::read_raw_f32(dir / j[name].at("blob").get<std::string>(), dst.size());
    for (int r = 0; r < dst.rows(); ++r)
      for (int c = 0; c < dst.cols(); ++c) dst(r, c) = data[static_cast<std::size_t>(r) * dst.cols() + c];
  };
  auto load_volume = [&](const char* name, Volume<float>& dst) {
    if (!j.contains(name)) return;
    const auto shape = j[name].at("shape").get<std::vector<int>>();
    if (shape != std::vector<int>{dst.depth(), dst.height(), dst.width()})
      throw ConfigError(std::string("params: unexpected shape for ") + name);
    const auto data = io::read_raw_f32(dir / j[name].at("blob").get<std::string>(), dst.size());
    std::copy(data.begin(), data.end(), dst.data().begin());
  };
  load_matrix("P_k", m.p_key);
  load_matrix("P_v", m.p_value);
  load_matrix("g", m.fusion_params.g);
  load_volume("w_raw", m.fusion_params.w_raw);
  load_volume("r_raw", m.fusion_params.r_raw);
}

/// Writes the transformer parameters in the layout read by
/// load_transformer_params.
inline void save_transformer_params(const Model& m, const std::filesystem::path& sidecar) {
  const auto dir = sidecar.parent_path();
  nlohmann::json j;
  auto put_matrix = [&](const char* name, const Eigen::MatrixXf& src) {
    std::vector<float> data(src.size());
    for (int r = 0; r < src.rows(); ++r)
      for (int c = 0; c < src.cols(); ++c) data[static_cast<std::size_t>(r) * src.cols() + c] = src(r, c);
    const std::string blob = std::string(name) + ".f32";
    io::write_raw_f32(dir / blob, data);
    j[name] = {{"blob", blob}, {"shape", {src.rows(), src.cols()}}};
  };
  auto put_volume = [&](const char* name, const Volume<float>& src) {
    const std::string blob = std::string(name) + ".f32";
    io::write_raw_f32(dir / blob, src.data());
    j[name] = {{"blob", blob}, {"shape", {src.depth(), src.height(), src.width()}}};
  };
  put_matrix("P_k", m.p_key);
  put_matrix("P_v", m.p_value);
  put_matrix("g", m.fusion_params.g);
  put_volume("w_raw", m.fusion_params.w_raw);
  put_volume("r_raw", m.fusion_params.r_raw);
  std::ofstream out(sidecar);
  if (!out) throw IoError("cannot write " + sidecar.string());
  out << j.dump(2) << '\n';
}

struct Frame {
  Image<float> image;
  Camera camera;  // full-resolution intrinsics
};

struct FrameResult {
  int frame = 0;
  std::array<DepthMap, 4> stages;
  std::optional<depth::ProbabilityVolume> probability;
  double milliseconds = 0.0;
};

using ClipResult = std::vector<FrameResult>;

/// Oldest-first ring buffer of past key/value pairs.
class MemoryBank {
 public:
  struct Entry {
    KeyValuePair<float> kv;
    int frame;
  };

  explicit MemoryBank(int capacity = 2) : capacity_(capacity) {
    if (capacity < 0) throw ConfigError("memory bank: capacity must be non-negative");
  }

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  const std::deque<Entry>& entries() const { return entries_; }

  std::vector<int> frames() const {
    std::vector<int> f;
    for (const auto& e : entries_) f.push_back(e.frame);
    return f;
  }

  void push(KeyValuePair<float> kv, int frame) {
    if (capacity_ == 0) return;
    if (!entries_.empty() && frame <= entries_.back().frame)
      throw std::invalid_argument("memory bank: frames must be pushed in increasing order");
    if (size() == capacity_) entries_.pop_front();
    entries_.push_back({std::move(kv), frame});
  }

 private:
  int capacity_;
  std::deque<Entry> entries_;
};

// ---------------------------------------------------------------------------

namespace detail {

inline void check_frames(const std::vector<Frame>& frames, const Model& m) {
  for (const auto& f : frames) {
    if (f.image.height() != m.intrinsics.height || f.image.width() != m.intrinsics.width)
      throw ConfigError("frame size does not match the model intrinsics");
    f.camera.pose.validate();
  }
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Hybrid cost volume of frame `target` with the given source frames.
inline volume::HybridVolume build_hybrid(const std::vector<Frame>& frames, int target, const std::vector<int>& sources,
                                         const Model& m) {
  const geometry::Intrinsics kq = m.volume_intrinsics();
  const auto ref = volume::extract_features(frames[target].image, m.channels);
  std::vector<volume::FeatureVolume> raws;
  for (int s : sources) {
    const auto src = volume::extract_features(frames[s].image, m.channels);
    const auto rel = geometry::relative_pose(frames[target].camera.pose, frames[s].camera.pose);
    raws.push_back(volume::build_raw_matching_volume(ref, src, kq, rel, m.hyp));
  }
  const auto matching = volume::aggregate_and_regularize(raws, m.w_reduce);
  return volume::context_and_fuse(frames[target].image, matching, m.context_map, {kq, frames[target].camera.pose});
}

/// Stage 2 and 3 from a stage-1 map.
inline void finish_stages(FrameResult& r, const Image<float>& guide, const Model& m) {
  auto [half, full] = depth::upsample_refine(r.stages[1], guide, m.hyp, m.refine);
  r.stages[2] = std::move(half);
  r.stages[3] = std::move(full);
}

/// Depth straight from the hybrid volume (stages 0 and 1 coincide).
inline FrameResult depth_from_hybrid(const volume::HybridVolume& hybrid, const Image<float>& guide, const Model& m,
                                     int frame) {
  const auto reduce = m.hybrid_reduce();
  FrameResult r;
  r.frame = frame;
  r.probability = depth::probability_volume(hybrid.values, reduce, &hybrid.mask);
  r.stages[0] = depth::soft_argmax(*r.probability, m.hyp, 0);
  r.stages[1] = r.stages[0];
  r.stages[1].stage = 1;
  finish_stages(r, guide, m);
  return r;
}

struct TransformOutput {
  Volume<float> fused;
  transformer::AttentionVolume<float> attention;
};

/// Attends from `query` to memories already warped into its frustum and
/// fuses the retrieved values.
inline TransformOutput transform(const KeyValuePair<float>& query, const std::vector<KeyValuePair<float>>& warped,
                                 const Model& m) {
  auto att = transformer::attention(query, warped);
  const auto y = transformer::retrieve(att, warped);
  Volume<float> fused = m.fusion == Fusion::Adaptive ? transformer::fuse_adaptive(query.value, y, m.fusion_params)
                                                     : transformer::fuse_concat(query.value, y);
  return {std::move(fused), std::move(att)};
}

/// Stage 0 from the hybrid volume, stage 1 from the transformed volume.
namespace detail {

// Pixels whose every query-valid plane is supported by at least one memory.
// Elsewhere the fused cost mixes planes with and without retrieved values,
// which are not comparable, so those pixels keep the hybrid-volume estimate.
inline Image<std::uint8_t> memory_coverage(const Mask& query, const transformer::AttentionVolume<float>& att) {
  const int N = att.memories(), D = query.depth(), H = query.height(), W = query.width();
  Image<std::uint8_t> out(H, W, 1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int d = 0; d < D && out(y, x); ++d) {
        if (!query(0, d, y, x)) continue;
        bool s = false;
        for (int i = 0; i < N && !s; ++i) s = att.weights(i, d, y, x) > 0.0f;
        out(y, x) = s;
      }
  return out;
}

}  // namespace detail

inline FrameResult depth_from_transformed(const volume::HybridVolume& hybrid, const Volume<float>& fused,
                                          const transformer::AttentionVolume<float>& att, const Image<float>& guide,
                                          const Model& m, int frame) {
  FrameResult r;
  r.frame = frame;
  const auto p0 = depth::probability_volume(hybrid.values, m.hybrid_reduce(), &hybrid.mask);
  r.stages[0] = depth::soft_argmax(p0, m.hyp, 0);
  const auto reduce = m.fusion == Fusion::Adaptive ? m.value_reduce() : m.concat_reduce();
  r.probability = depth::probability_volume(fused, reduce, &hybrid.mask);
  const auto covered = detail::memory_coverage(hybrid.mask, att);
  for (int y = 0; y < covered.height(); ++y)
    for (int x = 0; x < covered.width(); ++x)
      if (!covered(y, x))
        for (int d = 0; d < m.hyp.count(); ++d) r.probability->p(0, d, y, x) = p0.p(0, d, y, x);
  r.stages[1] = depth::soft_argmax(*r.probability, m.hyp, 1);
  finish_stages(r, guide, m);
  return r;
}

/// Every interior frame from its own 3-frame window; no transformer.
inline ClipResult estimate_independent(const std::vector<Frame>& frames, const Model& m) {
  if (frames.size() < 3) throw ConfigError("independent mode needs at least 3 frames");
  detail::check_frames(frames, m);
  ClipResult out;
  for (int t = 1; t + 1 < static_cast<int>(frames.size()); ++t) {
    const auto start = std::chrono::steady_clock::now();
    const auto hybrid = build_hybrid(frames, t, {t - 1, t + 1}, m);
    out.push_back(depth_from_hybrid(hybrid, frames[t].image, m, t));
    out.back().milliseconds = detail::elapsed_ms(start);
  }
  return out;
}

struct JointResult {
  ClipResult frames;  // targets 1, 2, 3 of the clip
  std::vector<transformer::AttentionVolume<float>> attention;
};

/// Five-frame clip; the three middle frames each attend to the other two.
inline JointResult estimate_joint(const std::vector<Frame>& clip, const Model& m) {
  if (clip.size() != 5) throw ConfigError("joint mode needs exactly 5 frames");
  detail::check_frames(clip, m);
  const auto start = std::chrono::steady_clock::now();
  std::vector<volume::HybridVolume> hybrids;
  std::vector<KeyValuePair<float>> kvs;
  for (int t = 1; t <= 3; ++t) {
    hybrids.push_back(build_hybrid(clip, t, {t - 1, t + 1}, m));
    kvs.push_back(transformer::encode_key_value(hybrids.back(), m.p_key, m.p_value));
  }
  const double shared_ms = detail::elapsed_ms(start);

  JointResult out;
  for (int q = 0; q < 3; ++q) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<KeyValuePair<float>> warped;
    for (int k = 0; k < 3; ++k)
      if (k != q) warped.push_back(transformer::epipolar_warp_kv(kvs[k], kvs[q].camera, m.hyp));
    auto tr = transform(kvs[q], warped, m);
    out.frames.push_back(depth_from_transformed(hybrids[q], tr.fused, tr.attention, clip[q + 1].image, m, q + 1));
    out.frames.back().milliseconds = shared_ms / 3.0 + detail::elapsed_ms(t0);
    out.attention.push_back(std::move(tr.attention));
  }
  return out;
}

/// Sliding-window inference with a key/value memory of past frames. The
/// current frame's pre-fusion key/value enters the bank only after its depth
/// has been extracted; an empty bank bypasses the transformer.
inline ClipResult estimate_estm(const std::vector<Frame>& frames, const Model& m, MemoryBank& bank) {
  if (frames.size() < 3) throw ConfigError("ESTM mode needs at least 3 frames");
  detail::check_frames(frames, m);
  ClipResult out;
  for (int t = 1; t + 1 < static_cast<int>(frames.size()); ++t) {
    const auto start = std::chrono::steady_clock::now();
    const auto hybrid = build_hybrid(frames, t, {t - 1, t + 1}, m);
    if (bank.capacity() == 0) {
      out.push_back(depth_from_hybrid(hybrid, frames[t].image, m, t));
    } else {
      auto kv = transformer::encode_key_value(hybrid, m.p_key, m.p_value);
      if (bank.empty()) {
        out.push_back(depth_from_hybrid(hybrid, frames[t].image, m, t));
      } else {
        std::vector<KeyValuePair<float>> warped;
        for (const auto& e : bank.entries()) warped.push_back(transformer::epipolar_warp_kv(e.kv, kv.camera, m.hyp));
        const auto tr = transform(kv, warped, m);
        out.push_back(depth_from_transformed(hybrid, tr.fused, tr.attention, frames[t].image, m, t));
      }
      bank.push(std::move(kv), t);
    }
    out.back().milliseconds = detail::elapsed_ms(start);
  }
  return out;
}

}  // namespace est::inference
