#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "est/config.hpp"
#include "est/core.hpp"
#include "est/depth.hpp"
#include "est/eval.hpp"
#include "est/geometry.hpp"
#include "est/gradcheck.hpp"
#include "est/inference.hpp"
#include "est/io.hpp"
#include "est/synth.hpp"

// Subcommand implementations. Each returns a process exit code.
namespace est::commands {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kBadConfig = 2, kBadInput = 3, kMissingGroundTruth = 4 };

/// Runs `fn`, mapping the library's exception types onto exit codes.
inline int guarded(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const MissingGroundTruth& e) {
    err << "error: " << e.what() << '\n';
    return kMissingGroundTruth;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  }
}

namespace detail {

inline std::string numbered(const char* stem, int index, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d%s", stem, index, suffix);
  return buf;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// A missing file is an input error; a malformed one is a configuration error.
inline json read_config_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline Image<float> to_float(const Image<double>& img) {
  Image<float> out(img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) out.data()[i] = static_cast<float>(img.data()[i]);
  return out;
}

inline std::string cap_label(double cap) {
  std::ostringstream os;
  os << cap;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scene specification

inline Eigen::Vector3d vec3(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError("scene: expected a 3-vector");
  return {v[0], v[1], v[2]};
}

inline synth::Texture texture_from_json(const json& j, std::uint64_t default_seed) {
  synth::Texture t;
  t.seed = default_seed;
  if (j.is_null()) return t;
  t.seed = j.value("seed", default_seed);
  t.frequency = j.value("frequency", t.frequency);
  t.octaves = j.value("octaves", t.octaves);
  t.contrast = j.value("contrast", t.contrast);
  return t;
}

struct SceneSpec {
  synth::Scene scene;
  geometry::Intrinsics intrinsics;
  int frames = 5;
  synth::Motion motion;
  double noise = 0.0;
};

/// Parses a scene document:
/// {"intrinsics": [fx, fy, cx, cy, w, h], "z_min": .., "z_max": ..,
///  "primitives": [{"type": "fronto"|"slanted"|"sphere", ...}],
///  "background": {"depth": .., "texture": {..}},
///  "trajectory": {"kind": "lateral"|"forward"|"orbit", "frames": n,
///                 "baseline": b, "radius": r}, "noise": sigma}
/// Textures without an explicit seed derive one from `seed`.
inline SceneSpec scene_from_json(const json& j, std::uint64_t seed) {
  SceneSpec s;
  try {
    if (!j.is_object()) throw ConfigError("scene: expected a JSON object");
    if (j.contains("intrinsics")) {
      const auto k = j.at("intrinsics").get<std::vector<double>>();
      if (k.size() != 6) throw ConfigError("scene: intrinsics need 6 numbers");
      s.intrinsics = {k[0], k[1], k[2], k[3], static_cast<int>(k[4]), static_cast<int>(k[5])};
    } else {
      s.intrinsics = {64.0, 64.0, 31.5, 31.5, 64, 64};
    }
    s.scene.z_min = j.value("z_min", s.scene.z_min);
    s.scene.z_max = j.value("z_max", s.scene.z_max);
    std::uint64_t index = 0;
    for (const auto& p : j.value("primitives", json::array())) {
      const auto tex = texture_from_json(p.value("texture", json()), hash_combine(seed, index++));
      const auto type = p.at("type").get<std::string>();
      if (type == "fronto")
        s.scene.primitives.push_back(synth::FrontoPlane{p.at("depth").get<double>(), tex});
      else if (type == "slanted")
        s.scene.primitives.push_back(synth::SlantedPlane{vec3(p.at("point")), vec3(p.at("normal")), tex});
      else if (type == "sphere")
        s.scene.primitives.push_back(synth::Sphere{vec3(p.at("center")), p.at("radius").get<double>(), tex});
      else
        throw ConfigError("scene: unknown primitive type '" + type + "'");
    }
    if (j.contains("background")) {
      const auto& b = j.at("background");
      s.scene.background_depth = b.value("depth", 0.0);
      s.scene.background = texture_from_json(b.value("texture", json()), hash_combine(seed, 0xBAC6ULL));
    }
    if (j.contains("trajectory")) {
      const auto& t = j.at("trajectory");
      s.frames = t.value("frames", s.frames);
      s.motion.baseline = t.value("baseline", s.motion.baseline);
      s.motion.radius = t.value("radius", s.motion.radius);
      const auto kind = t.value("kind", std::string("lateral"));
      if (kind == "lateral") s.motion.kind = synth::MotionKind::Lateral;
      else if (kind == "forward") s.motion.kind = synth::MotionKind::Forward;
      else if (kind == "orbit") s.motion.kind = synth::MotionKind::Orbit;
      else throw ConfigError("scene: unknown trajectory kind '" + kind + "'");
    }
    s.noise = j.value("noise", 0.0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dataset manifest

struct Dataset {
  geometry::Intrinsics intrinsics;
  std::vector<inference::Frame> frames;
  std::vector<std::optional<fs::path>> depth_gt;
};

/// Reads manifest.json and every image and pose it references. Ground-truth
/// files are only located here; reading them is up to the caller.
inline Dataset load_dataset(const fs::path& manifest) {
  const json j = config::read_json(manifest);
  const fs::path root = manifest.parent_path();
  Dataset ds;
  try {
    ds.intrinsics = io::read_intrinsics(root / j.at("intrinsics").get<std::string>());
    const auto poses = io::read_poses(root / j.at("poses").get<std::string>());
    const auto& frames = j.at("frames");
    if (frames.empty()) throw IoError("manifest: no frames");
    for (const auto& f : frames) {
      const auto pose_index = f.at("pose").get<std::size_t>();
      if (pose_index >= poses.size()) throw IoError("manifest: pose index out of range");
      ds.frames.push_back({io::read_pgm(root / f.at("image").get<std::string>()), {ds.intrinsics, poses[pose_index]}});
      if (f.contains("depth") && !f.at("depth").is_null())
        ds.depth_gt.emplace_back(root / f.at("depth").get<std::string>());
      else
        ds.depth_gt.emplace_back();
    }
  } catch (const json::exception& e) {
    throw IoError(manifest.string() + ": " + e.what());
  }
  ds.intrinsics.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  fs::path scene;
  fs::path out;
  std::optional<int> frames;
  std::optional<double> baseline;
  std::optional<double> noise;
  std::uint64_t seed = 0;
};

/// Renders the sequence in memory first, so an invalid specification leaves
/// nothing behind.
inline int cmd_synth(const SynthOptions& o, std::ostream& log) {
  SceneSpec spec = scene_from_json(detail::read_config_json(o.scene), o.seed);
  if (o.frames) spec.frames = *o.frames;
  if (o.baseline) spec.motion.baseline = *o.baseline;
  if (o.noise) spec.noise = *o.noise;
  if (spec.noise < 0.0) throw ConfigError("scene: noise must be non-negative");
  spec.intrinsics.validate();
  spec.scene.validate();
  const auto poses = synth::make_trajectory(spec.frames, spec.motion);

  std::vector<synth::RenderedFrame> rendered;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    rendered.push_back(synth::render(spec.scene, {spec.intrinsics, poses[i]}));
    synth::add_noise(rendered.back().image, spec.noise, hash_combine(hash_combine(o.seed, 0x401535ULL), i));
  }

  fs::create_directories(o.out);
  json manifest{{"seed", o.seed}, {"intrinsics", "intrinsics.txt"}, {"poses", "poses.txt"}, {"frames", json::array()}};
  io::write_intrinsics(o.out / "intrinsics.txt", spec.intrinsics);
  io::write_poses(o.out / "poses.txt", poses);
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const int n = static_cast<int>(i);
    const auto image = detail::numbered("frame", n, ".pgm");
    const auto depth = detail::numbered("depth", n, ".pfm");
    io::write_pgm(o.out / image, rendered[i].image);
    io::write_pfm(o.out / depth, rendered[i].depth_gt);
    manifest["frames"].push_back({{"image", image}, {"depth", depth}, {"pose", i}});
  }
  manifest["scene"] = config::read_json(o.scene);
  manifest["trajectory"] = {{"frames", spec.frames}, {"baseline", spec.motion.baseline}, {"noise", spec.noise}};
  detail::write_json(o.out / "manifest.json", manifest);
  log << "synth: wrote " << rendered.size() << " frames to " << o.out.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  fs::path manifest;
  fs::path out;
  config::RunConfig config;
  bool dump_probability = false;
};

/// Joint mode over a long sequence: 5-frame clips with stride 3, plus one
/// clip flush with the end; targets already produced are not repeated.
inline inference::ClipResult run_joint(const std::vector<inference::Frame>& frames, const inference::Model& m) {
  const int n = static_cast<int>(frames.size());
  if (n < 5) throw ConfigError("joint mode needs at least 5 frames");
  inference::ClipResult out;
  int next_target = 1;
  for (int start = 0;; start += 3) {
    start = std::min(start, n - 5);
    const std::vector<inference::Frame> clip(frames.begin() + start, frames.begin() + start + 5);
    auto res = inference::estimate_joint(clip, m);
    for (auto& r : res.frames) {
      r.frame += start;
      if (r.frame >= next_target) {
        out.push_back(std::move(r));
        next_target = out.back().frame + 1;
      }
    }
    if (start == n - 5) break;
  }
  return out;
}

inline int cmd_run(const RunOptions& o, std::ostream& log) {
  const auto& cfg = o.config;
  cfg.validate();
  set_num_threads(cfg.threads);
  const Dataset ds = load_dataset(o.manifest);
  auto model = inference::Model::create(cfg.model(), ds.intrinsics);
  if (!cfg.params.empty()) inference::load_transformer_params(model, cfg.params);

  const auto start = std::chrono::steady_clock::now();
  inference::ClipResult results;
  switch (cfg.mode) {
    case inference::Mode::Independent:
      results = inference::estimate_independent(ds.frames, model);
      break;
    case inference::Mode::Joint:
      results = run_joint(ds.frames, model);
      break;
    case inference::Mode::Estm: {
      inference::MemoryBank bank(cfg.capacity);
      results = inference::estimate_estm(ds.frames, model, bank);
      break;
    }
  }
  const double total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  fs::create_directories(o.out);
  json manifest{{"mode", config::to_string(cfg.mode)},
                {"config", config::to_json(cfg)},
                {"dataset", fs::absolute(o.manifest).string()},
                {"total_milliseconds", total_ms},
                {"frames", json::array()}};
  for (const auto& r : results) {
    json entry{{"frame", r.frame}, {"milliseconds", r.milliseconds}, {"stages", json::array()}};
    for (int s = 0; s < 4; ++s) {
      const auto name = detail::numbered("depth", r.frame, ("_s" + std::to_string(s) + ".pfm").c_str());
      io::write_pfm(o.out / name, detail::to_float(r.stages[s].depth));
      entry["stages"].push_back(name);
    }
    if (o.dump_probability && r.probability) {
      const auto stem = detail::numbered("probability", r.frame, "");
      io::dump_volume(o.out / stem, r.probability->p.cast<float>(),
                      {{"hypotheses", {model.hyp.z_min(), model.hyp.z_max(), model.hyp.count()}},
                       {"camera", io::camera_json({model.volume_intrinsics(), ds.frames[r.frame].camera.pose})}});
      entry["probability"] = stem + ".json";
    }
    manifest["frames"].push_back(entry);
  }
  detail::write_json(o.out / "run.json", manifest);
  log << "run: " << config::to_string(cfg.mode) << ", " << results.size() << " frames, " << std::fixed
      << std::setprecision(1) << total_ms << " ms\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  fs::path results;  // directory holding run.json
  fs::path manifest;
  fs::path out;      // defaults to `results` when empty
  std::vector<double> caps{5.0, 10.0};
  bool pooled = false;  // summary over all pixels pooled instead of per-frame mean
  int stage = 3;
  config::RunConfig config;  // lambda and stage weighting for the loss report
};

namespace detail {

// Concatenates frames side by side so pooled metrics reuse depth_metrics.
template <typename T>
Image<T> stack_rows(const std::vector<Image<T>>& images) {
  std::size_t total = 0;
  for (const auto& i : images) total += i.size();
  Image<T> out(1, static_cast<int>(total));
  std::size_t k = 0;
  for (const auto& i : images)
    for (T v : i.data()) out.data()[k++] = v;
  return out;
}

}  // namespace detail

inline int cmd_eval(const EvalOptions& o, std::ostream& log) {
  if (o.stage < 0 || o.stage > 3) throw ConfigError("eval: stage must be 0..3");
  if (o.caps.empty()) throw ConfigError("eval: need at least one range cap");
  for (double c : o.caps)
    if (!(c > 0.0)) throw ConfigError("eval: range caps must be positive");
  o.config.validate();

  const json run = config::read_json(o.results / "run.json");
  const Dataset ds = load_dataset(o.manifest);
  const fs::path out_dir = o.out.empty() ? o.results : o.out;

  std::vector<int> frames;
  std::vector<std::array<Image<float>, 4>> preds;
  std::vector<Image<float>> gts;
  try {
    for (const auto& f : run.at("frames")) {
      const int t = f.at("frame").get<int>();
      if (t < 0 || t >= static_cast<int>(ds.frames.size())) throw IoError("eval: frame index outside the dataset");
      const auto& gt_path = ds.depth_gt[t];
      if (!gt_path || !fs::exists(*gt_path))
        throw MissingGroundTruth("eval: no ground truth for frame " + std::to_string(t));
      std::array<Image<float>, 4> stages;
      for (int s = 0; s < 4; ++s) stages[s] = io::read_pfm(o.results / f.at("stages").at(s).get<std::string>());
      frames.push_back(t);
      preds.push_back(std::move(stages));
      gts.push_back(io::read_pfm(*gt_path));
    }
  } catch (const json::exception& e) {
    throw IoError("run.json: " + std::string(e.what()));
  }
  if (frames.empty()) throw IoError("eval: run contains no frames");

  fs::create_directories(out_dir);
  json summary{{"stage", o.stage},
               {"aggregation", o.pooled ? "pooled" : "per-frame"},
               {"frames", frames},
               {"caps", json::array()}};

  for (double cap : o.caps) {
    const auto label = detail::cap_label(cap);
    std::ofstream csv(out_dir / ("eval_cap" + label + ".csv"));
    if (!csv) throw IoError("cannot write CSV report");
    csv << eval::kCsvHeader << '\n';
    std::vector<eval::MetricReport> reports;
    std::vector<Image<float>> pooled_pred, pooled_gt;
    json skipped = json::array();
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const Image<float>& pred = preds[i][o.stage];
      const Image<float> gt = depth::downsize_nearest(gts[i], gts[i].width() / pred.width());
      try {
        reports.push_back(eval::depth_metrics(pred, gt, cap));
        eval::write_csv_row(csv, std::to_string(frames[i]), reports.back());
      } catch (const eval::EmptyReport&) {
        skipped.push_back(frames[i]);
      }
      pooled_pred.push_back(pred);
      pooled_gt.push_back(gt);
    }
    json entry{{"cap", cap}, {"skipped", skipped}};
    if (!reports.empty()) {
      const auto mean = eval::mean_report(reports);
      eval::write_csv_row(csv, "mean", mean);
      entry["mean"] = eval::to_json(mean);
      entry["summary"] = entry["mean"];
      entry["per_frame_abs"] = json::array();
      for (const auto& r : reports) entry["per_frame_abs"].push_back(r.abs);
      entry["temporal_std"] = reports.size() >= 2 ? json(eval::temporal_std(reports).std) : json(nullptr);
    }
    if (o.pooled) {
      try {
        const auto pooled =
            eval::depth_metrics(detail::stack_rows(pooled_pred), detail::stack_rows(pooled_gt), cap);
        eval::write_csv_row(csv, "pooled", pooled);
        entry["pooled"] = eval::to_json(pooled);
        entry["summary"] = entry["pooled"];
      } catch (const eval::EmptyReport&) {
      }
    }
    summary["caps"].push_back(entry);
  }

  // Multi-view loss of each frame over its four stages.
  json losses = json::array();
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    depth::ViewPrediction vp;
    for (int s = 0; s < 4; ++s) {
      depth::DepthMap dm;
      dm.stage = s;
      dm.depth = Image<double>(preds[i][s].height(), preds[i][s].width());
      for (std::size_t k = 0; k < dm.depth.size(); ++k) dm.depth.data()[k] = preds[i][s].data()[k];
      vp.stages[s] = std::move(dm);
    }
    try {
      const double l = depth::multiview_loss({vp}, {gts[i]}, o.config.lambda, o.config.weighting);
      losses.push_back(l);
      loss_sum += l;
    } catch (const Error&) {
      losses.push_back(nullptr);
    }
  }
  summary["loss"] = {{"lambda", o.config.lambda},
                     {"weighting", config::to_string(o.config.weighting)},
                     {"per_frame", losses},
                     {"mean", loss_sum / static_cast<double>(frames.size())}};
  detail::write_json(out_dir / "eval.json", summary);

  for (const auto& c : summary["caps"]) {
    log << "eval cap " << c["cap"].get<double>() << " m:";
    if (c.contains("summary"))
      log << " abs_rel " << c["summary"]["abs_rel"].get<double>() << ", abs " << c["summary"]["abs"].get<double>()
          << ", delta1 " << c["summary"]["delta1"].get<double>();
    if (c.contains("temporal_std") && !c["temporal_std"].is_null())
      log << ", temporal std " << c["temporal_std"].get<double>();
    log << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

inline int cmd_gradcheck(const gradcheck::Options& o, std::ostream& log) {
  const auto reports = gradcheck::run(o);
  bool ok = true;
  for (const auto& r : reports) {
    log << std::left << std::setw(20) << r.name << " instances=" << r.instances << " max_rel_error=" << std::scientific
        << std::setprecision(3) << r.max_rel_error << std::defaultfloat << "  " << (r.pass ? "PASS" : "FAIL") << '\n';
    ok = ok && r.pass;
  }
  log << "gradcheck: " << (ok ? "PASS" : "FAIL") << " (tolerance " << o.tolerance << ")\n";
  return ok ? kOk : kCheckFailed;
}

}  // namespace est::commands
