#include "pmslam/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pmslam {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

MatchSet swapped(const MatchSet& matches) {
  MatchSet out = matches;
  for (auto& m : out.matches) std::swap(m.pixel_a, m.pixel_b);
  return out;
}

// Calibrated mode: canonical points must stay on the known pixel rays, so
// only the depth is free.
void constrain_to_rays(Pointmap& pm, const PinholeIntrinsics& K) {
  for (int v = 0; v < pm.height; ++v) {
    for (int u = 0; u < pm.width; ++u) {
      const int idx = pm.index(u, v);
      if (!pm.valid[idx]) continue;
      const double z = pm.points[idx].z();
      if (z <= 0.0) {
        pm.valid[idx] = 0;
        continue;
      }
      pm.points[idx] =
          z * Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
    }
  }
}

FramePrediction to_frame_prediction(const PredictionPair& pair) {
  // Frame i of the pair is the current frame, frame j the keyframe image.
  return FramePrediction{pair.X_i_in_i, pair.X_j_in_i, pair.C_i,
                         pair.C_j,      pair.F_i,      pair.F_j};
}

}  // namespace

SolvePoseParams SlamConfig::solve_pose_params() const {
  SolvePoseParams params;
  params.weights = weights;
  params.matching = matching;
  params.refinement = refinement;
  if (calibrated) params.intrinsics = intrinsics;
  return params;
}

// --- Config ---------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw std::runtime_error("config: invalid boolean for " + key + ": " + value);
}

}  // namespace

void apply_config_entry(SlamConfig& config, const std::string& key,
                        const std::string& value) {
  const auto d = [&] { return std::stod(value); };
  const auto i = [&] { return std::stoi(value); };
  if (key == "omega_k") config.omega_k = d();
  else if (key == "omega_r") config.omega_r = d();
  else if (key == "omega_l") config.omega_l = d();
  else if (key == "reloc_match_fraction") config.reloc_match_fraction = d();
  else if (key == "reloc_score_factor") config.reloc_score_factor = d();
  else if (key == "track_mode") config.track_mode = track_mode_from_string(value);
  else if (key == "calibrated") config.calibrated = parse_bool(value, key);
  else if (key == "fx") config.intrinsics.fx = d();
  else if (key == "fy") config.intrinsics.fy = d();
  else if (key == "cx") config.intrinsics.cx = d();
  else if (key == "cy") config.intrinsics.cy = d();
  else if (key == "retrieval_top_k") config.retrieval_top_k = i();
  else if (key == "codebook_size") config.codebook_size = i();
  else if (key == "retrieval_alpha") config.retrieval.alpha = d();
  else if (key == "max_descriptors_per_keyframe")
    config.retrieval.max_descriptors_per_keyframe = i();
  else if (key == "loop_closure") config.loop_closure = parse_bool(value, key);
  else if (key == "map_confidence_percentile")
    config.map_confidence_percentile = d();
  else if (key == "seed") config.seed = std::stoull(value);
  else if (key == "height") config.height = i();
  else if (key == "width") config.width = i();
  else if (key == "sigma2_point") config.weights.sigma2_point = d();
  else if (key == "sigma2_ray") config.weights.sigma2_ray = d();
  else if (key == "sigma2_pixel") config.weights.sigma2_pixel = d();
  else if (key == "q_min_fraction") config.weights.q_min_fraction = d();
  else if (key == "huber_delta") config.weights.huber_delta = d();
  else if (key == "distance_weight") config.weights.distance_weight = d();
  else if (key == "noise_depth_sigma") config.noise.depth_sigma = d();
  else if (key == "noise_outlier_fraction") config.noise.outlier_fraction = d();
  else if (key == "noise_outlier_magnitude") config.noise.outlier_magnitude = d();
  else if (key == "noise_scale_jitter_sigma")
    config.noise.scale_jitter_sigma = d();
  else throw std::runtime_error("config: unknown key: " + key);
}

SlamConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_config: cannot open " + path);
  SlamConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("load_config: missing '=' at line " +
                               std::to_string(line_no));
    }
    apply_config_entry(config, trim(line.substr(0, eq)),
                       trim(line.substr(eq + 1)));
  }
  return config;
}

// --- Pipeline -------------------------------------------------------------

SlamPipeline::SlamPipeline(SlamConfig config, PredictorInterface& predictor)
    : config_(std::move(config)), predictor_(predictor) {}

Keyframe SlamPipeline::make_keyframe(int frame,
                                     const FramePrediction& prediction,
                                     const Sim3Pose& T_WF) {
  Keyframe kf;
  kf.id = next_keyframe_id_++;
  kf.frame_id = frame;
  kf.canonical = prediction.X_f_f;
  kf.canonical_confidence =
      ConfidenceMap(prediction.X_f_f.height, prediction.X_f_f.width);
  kf.canonical_confidence.values = prediction.C_f.values;
  kf.features = prediction.F_f;
  kf.T_WC = T_WF;
  if (config_.calibrated) constrain_to_rays(kf.canonical, config_.intrinsics);
  return kf;
}

BackendParams SlamPipeline::backend_params() const {
  BackendParams params;
  params.weights = config_.weights;
  params.mode = config_.track_mode;
  if (config_.calibrated) params.intrinsics = config_.intrinsics;
  return params;
}

void SlamPipeline::run_backend() {
  const auto start = Clock::now();
  const OptimizeResult result = global_optimize(graph_, backend_params());
  stats_.backend_iterations += result.iterations;
  stats_.backend_ms += ms_since(start);
}

void SlamPipeline::initialize(int frame) {
  if (initialized()) throw std::logic_error("initialize: already initialized");
  const auto t_pred = Clock::now();
  const PredictionPair pair = predictor_.predict(frame, frame);
  stats_.predict_ms += ms_since(t_pred);

  Keyframe kf = make_keyframe(frame, to_frame_prediction(pair), Sim3Pose());

  const auto t_retr = Clock::now();
  const DescriptorSet signature = predictor_.encode(frame);
  kf.retrieval_signature = signature;
  // The first frame's descriptors double as the codebook training sample.
  const int words =
      std::min(config_.codebook_size,
               std::max<int>(1, static_cast<int>(signature.cols()) / 4));
  Codebook codebook = build_codebook(signature, words, config_.seed);
  retrieval_ = std::make_unique<RetrievalIndex>(std::move(codebook),
                                                config_.retrieval);
  retrieval_->add(kf.id, signature);
  stats_.retrieval_ms += ms_since(t_retr);

  current_kf_id_ = kf.id;
  add_keyframe(graph_, std::move(kf), nullptr);
  ++stats_.keyframes;

  last_T_kf_ = Sim3Pose();
  have_seed_ = false;
  lost_ = false;
  frames_.push_back({predictor_.timestamp(frame), frame, current_kf_id_,
                     Sim3Pose(), false});
}

void SlamPipeline::promote_keyframe(int frame, const FramePrediction& prediction,
                                    const Sim3Pose& T_WF,
                                    const MatchSet* edge_matches,
                                    int edge_to_kf) {
  Keyframe kf = make_keyframe(frame, prediction, T_WF);
  const int new_id = kf.id;

  const auto t_retr = Clock::now();
  const DescriptorSet signature = predictor_.encode(frame);
  kf.retrieval_signature = signature;
  stats_.retrieval_ms += ms_since(t_retr);

  if (edge_to_kf == graph_.keyframes.back().id) {
    add_keyframe(graph_, std::move(kf), edge_matches);
  } else {
    // Relocalisation attaches to the retrieved keyframe, not the last one.
    Edge edge;
    edge.i = edge_to_kf;
    edge.j = new_id;
    edge.matches = *edge_matches;
    graph_.keyframes.push_back(std::move(kf));
    graph_.edges.push_back(std::move(edge));
  }
  ++stats_.keyframes;

  // Loop closure: query before indexing, skipping the predecessor.
  if (config_.loop_closure) {
    const auto t_query = Clock::now();
    const auto candidates = retrieval_->query(signature, config_.retrieval_top_k,
                                              config_.omega_r, edge_to_kf);
    stats_.retrieval_ms += ms_since(t_query);
    for (const auto& candidate : candidates) {
      const Keyframe* other = graph_.find(candidate.kf_id);
      const auto t_pred = Clock::now();
      const PredictionPair pair = predictor_.predict(frame, other->frame_id);
      stats_.predict_ms += ms_since(t_pred);
      auto edge = accept_loop_edge(new_id, candidate.kf_id, pair.X_i_in_i,
                                   pair.X_j_in_i, pair.F_i, pair.F_j,
                                   config_.omega_l, config_.matching,
                                   config_.refinement);
      if (edge) {
        graph_.edges.push_back(std::move(*edge));
        ++stats_.loop_edges;
      }
    }
  }
  {
    const auto t_add = Clock::now();
    retrieval_->add(new_id, signature);
    stats_.retrieval_ms += ms_since(t_add);
  }

  run_backend();
  current_kf_id_ = new_id;
  last_T_kf_ = Sim3Pose();
  have_seed_ = false;
}

void SlamPipeline::process_frame(int frame) {
  if (!initialized()) {
    ++stats_.frames;
    initialize(frame);
    return;
  }
  ++stats_.frames;
  if (lost_) {
    relocalize(frame);
    return;
  }

  Keyframe* kf = graph_.find(current_kf_id_);
  const auto t_pred = Clock::now();
  const PredictionPair pair = predictor_.predict(frame, kf->frame_id);
  stats_.predict_ms += ms_since(t_pred);
  const FramePrediction prediction = to_frame_prediction(pair);

  const auto t_track = Clock::now();
  const TrackResult track =
      solve_pose(*kf, prediction, last_T_kf_, config_.track_mode,
                 config_.solve_pose_params(),
                 have_seed_ ? &last_matches_ : nullptr);
  stats_.track_ms += ms_since(t_track);

  if (track.lost) {
    lost_ = true;
    ++stats_.lost_frames;
    frames_.push_back({predictor_.timestamp(frame), frame, current_kf_id_,
                       last_T_kf_, true});
    return;
  }
  last_T_kf_ = track.T_kf;
  last_matches_ = track.matches;
  have_seed_ = true;

  const auto t_fuse = Clock::now();
  fuse_canonical(*kf, prediction.X_k_f, prediction.C_k, track.T_kf);
  if (config_.calibrated) constrain_to_rays(kf->canonical, config_.intrinsics);
  stats_.fuse_ms += ms_since(t_fuse);

  const Sim3Pose T_WF = kf->T_WC * track.T_kf;
  frames_.push_back(
      {predictor_.timestamp(frame), frame, current_kf_id_, track.T_kf, false});

  if (keyframe_decision(track.matches, kf->canonical.height,
                        kf->canonical.width, config_.omega_k)) {
    // Tracking matches carry pixel_a in the frame; the edge needs pixel_a in
    // the predecessor keyframe.
    const MatchSet edge_matches = swapped(track.matches);
    const int predecessor = current_kf_id_;
    promote_keyframe(frame, prediction, T_WF, &edge_matches, predecessor);
    // The promoted frame is the new keyframe itself.
    frames_.back().keyframe_id = current_kf_id_;
    frames_.back().T_kf = Sim3Pose();
  }
}

void SlamPipeline::relocalize(int frame) {
  const auto t_retr = Clock::now();
  const DescriptorSet signature = predictor_.encode(frame);
  const auto candidates =
      retrieval_->query(signature, config_.retrieval_top_k,
                        config_.reloc_score_factor * config_.omega_r, -1);
  stats_.retrieval_ms += ms_since(t_retr);

  for (const auto& candidate : candidates) {
    const Keyframe* other = graph_.find(candidate.kf_id);
    const auto t_pred = Clock::now();
    const PredictionPair pair = predictor_.predict(frame, other->frame_id);
    stats_.predict_ms += ms_since(t_pred);

    MatchSet matches = match_pointmaps(pair.X_i_in_i, pair.X_j_in_i, pair.F_i,
                                       pair.F_j, nullptr, config_.matching);
    matches = feature_refine(matches, pair.F_i, pair.F_j, config_.refinement);
    if (!(matches.valid_fraction() > config_.reloc_match_fraction)) continue;

    const FramePrediction prediction = to_frame_prediction(pair);
    const auto t_track = Clock::now();
    const TrackResult track =
        solve_pose(*other, prediction, Sim3Pose(), config_.track_mode,
                   config_.solve_pose_params(), &matches);
    stats_.track_ms += ms_since(t_track);
    if (track.lost) continue;

    const Sim3Pose T_WF = other->T_WC * track.T_kf;
    const MatchSet edge_matches = swapped(track.matches);
    promote_keyframe(frame, prediction, T_WF, &edge_matches, other->id);
    lost_ = false;
    ++stats_.relocalisations;
    frames_.push_back({predictor_.timestamp(frame), frame, current_kf_id_,
                       Sim3Pose(), false});
    return;
  }
  // Still lost: emit the last known pose so every frame has one.
  ++stats_.lost_frames;
  frames_.push_back({predictor_.timestamp(frame), frame, current_kf_id_,
                     last_T_kf_, true});
}

void SlamPipeline::run() {
  const auto start = Clock::now();
  for (int frame = 0; frame < predictor_.frame_count(); ++frame) {
    process_frame(frame);
  }
  stats_.total_ms = ms_since(start);
}

Trajectory SlamPipeline::trajectory() const {
  Trajectory trajectory;
  trajectory.poses.reserve(frames_.size());
  for (const auto& record : frames_) {
    const Keyframe* kf = graph_.find(record.keyframe_id);
    trajectory.poses.push_back({record.timestamp, kf->T_WC * record.T_kf});
  }
  return trajectory;
}

std::vector<Vec3> SlamPipeline::export_map() const {
  std::vector<Vec3> points;
  for (const auto& kf : graph_.keyframes) {
    std::vector<double> confidences;
    confidences.reserve(kf.canonical.size());
    for (int idx = 0; idx < kf.canonical.size(); ++idx) {
      if (kf.canonical.valid[idx]) {
        confidences.push_back(kf.canonical_confidence.values[idx]);
      }
    }
    if (confidences.empty()) continue;
    const size_t rank = static_cast<size_t>(
        config_.map_confidence_percentile * (confidences.size() - 1));
    std::nth_element(confidences.begin(), confidences.begin() + rank,
                     confidences.end());
    const double threshold = confidences[rank];
    for (int idx = 0; idx < kf.canonical.size(); ++idx) {
      if (!kf.canonical.valid[idx]) continue;
      if (kf.canonical_confidence.values[idx] < threshold) continue;
      points.push_back(kf.T_WC * kf.canonical.points[idx]);
    }
  }
  return points;
}

void SlamPipeline::write_outputs(const std::string& out_dir) const {
  std::filesystem::create_directories(out_dir);
  write_tum_trajectory(trajectory(), out_dir + "/trajectory.txt");
  write_ply(export_map(), out_dir + "/map.ply");

  nlohmann::ordered_json report;
  report["frames"] = stats_.frames;
  report["keyframes"] = stats_.keyframes;
  report["edges"] = static_cast<int>(graph_.edges.size());
  report["loop_edges"] = stats_.loop_edges;
  report["relocalisations"] = stats_.relocalisations;
  report["lost_frames"] = stats_.lost_frames;
  report["backend_iterations"] = stats_.backend_iterations;
  report["timings_ms"] = {
      {"predict", stats_.predict_ms}, {"track", stats_.track_ms},
      {"fuse", stats_.fuse_ms},       {"retrieval", stats_.retrieval_ms},
      {"backend", stats_.backend_ms}, {"total", stats_.total_ms}};
  report["config"] = {{"omega_k", config_.omega_k},
                      {"omega_r", config_.omega_r},
                      {"omega_l", config_.omega_l},
                      {"calibrated", config_.calibrated},
                      {"loop_closure", config_.loop_closure},
                      {"seed", config_.seed},
                      {"height", config_.height},
                      {"width", config_.width}};
  std::ofstream os(out_dir + "/report.json");
  if (!os) throw std::runtime_error("write_outputs: cannot write report.json");
  os << report.dump(2) << "\n";
}

// --- Synthetic predictor --------------------------------------------------

SyntheticPredictor::SyntheticPredictor(SyntheticScene scene,
                                       std::vector<Sim3Pose> poses,
                                       NoiseModel noise, int height, int width,
                                       double frame_interval)
    : scene_(std::move(scene)),
      poses_(std::move(poses)),
      noise_(noise),
      height_(height),
      width_(width),
      frame_interval_(frame_interval) {}

namespace {

// The predictor emits float32-precision data, matching both the on-disk
// stream format and what a network head would produce. This makes a live run
// and a replay of its recording bit-identical.
double q32(double v) { return static_cast<float>(v); }

void quantize_f32(Pointmap& pm) {
  for (auto& p : pm.points) p = p.unaryExpr([](double v) { return q32(v); });
}

void quantize_f32(Eigen::MatrixXd& m) {
  m = m.unaryExpr([](double v) { return q32(v); });
}

void quantize_f32(std::vector<double>& values) {
  for (auto& v : values) v = q32(v);
}

}  // namespace

PredictionPair SyntheticPredictor::predict(int frame_a, int frame_b) {
  // Salt ties the noise draw to the ordered pair, so repeated calls agree.
  const uint64_t salt =
      static_cast<uint64_t>(frame_a) * 1000003ULL + static_cast<uint64_t>(frame_b);
  PredictionPair pair = predict_pair(scene_, poses_.at(frame_a),
                                     poses_.at(frame_b), noise_, height_,
                                     width_, salt);
  quantize_f32(pair.X_i_in_i);
  quantize_f32(pair.X_j_in_i);
  quantize_f32(pair.C_i.values);
  quantize_f32(pair.C_j.values);
  quantize_f32(pair.F_i.descriptors);
  quantize_f32(pair.F_j.descriptors);
  quantize_f32(pair.F_i.match_confidence);
  quantize_f32(pair.F_j.match_confidence);
  return pair;
}

DescriptorSet SyntheticPredictor::encode(int frame) {
  const RenderResult render = render_view(scene_, poses_.at(frame), height_, width_);
  DescriptorSet descriptors(scene_.descriptor_dim,
                            static_cast<int>(render.world_points.size()));
  for (size_t i = 0; i < render.world_points.size(); ++i) {
    descriptors.col(static_cast<int>(i)) =
        descriptor_at(scene_, render.world_points[i]);
  }
  quantize_f32(descriptors);
  return descriptors;
}

// --- Stream format --------------------------------------------------------

namespace {

constexpr char kPairMagic[8] = {'P', 'M', 'P', 'A', 'I', 'R', '0', '1'};
constexpr char kEncodeMagic[8] = {'P', 'M', 'E', 'N', 'C', '0', '0', '1'};

void write_f32(std::ofstream& os, const double* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const float v = static_cast<float>(data[i]);
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
}

void read_f32(std::ifstream& is, double* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    float v = 0.0f;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    data[i] = v;
  }
}

void write_pointmap_f32(std::ofstream& os, const Pointmap& pm) {
  for (const auto& p : pm.points) write_f32(os, p.data(), 3);
}

void read_pointmap_f32(std::ifstream& is, Pointmap& pm) {
  for (auto& p : pm.points) {
    read_f32(is, p.data(), 3);
  }
  for (int idx = 0; idx < pm.size(); ++idx) {
    pm.valid[idx] = pm.points[idx].allFinite() ? 1 : 0;
  }
}

}  // namespace

std::string pair_record_name(int frame_a, int frame_b) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "pair_%06d_%06d.bin", frame_a, frame_b);
  return buf;
}

std::string encode_record_name(int frame) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "enc_%06d.bin", frame);
  return buf;
}

RecordingPredictor::RecordingPredictor(PredictorInterface& inner,
                                       std::string directory)
    : inner_(inner), directory_(std::move(directory)) {
  std::filesystem::create_directories(directory_);
}

PredictionPair RecordingPredictor::predict(int frame_a, int frame_b) {
  const PredictionPair pair = inner_.predict(frame_a, frame_b);
  if (!meta_written_) {
    std::ofstream os(directory_ + "/meta");
    os << "version 1\n"
       << "height " << pair.X_i_in_i.height << "\n"
       << "width " << pair.X_i_in_i.width << "\n"
       << "dim " << pair.F_i.dim << "\n"
       << "frames " << inner_.frame_count() << "\n";
    if (!os) throw std::runtime_error("RecordingPredictor: cannot write meta");
    std::ofstream ts(directory_ + "/timestamps");
    char buf[64];
    for (int f = 0; f < inner_.frame_count(); ++f) {
      std::snprintf(buf, sizeof(buf), "%.9f\n", inner_.timestamp(f));
      ts << buf;
    }
    meta_written_ = true;
  }
  std::ofstream os(directory_ + "/" + pair_record_name(frame_a, frame_b),
                   std::ios::binary);
  if (!os) throw std::runtime_error("RecordingPredictor: cannot write pair record");
  os.write(kPairMagic, sizeof(kPairMagic));
  write_pointmap_f32(os, pair.X_i_in_i);
  write_pointmap_f32(os, pair.X_j_in_i);
  write_f32(os, pair.C_i.values.data(), pair.C_i.values.size());
  write_f32(os, pair.C_j.values.data(), pair.C_j.values.size());
  write_f32(os, pair.F_i.descriptors.data(), pair.F_i.descriptors.size());
  write_f32(os, pair.F_j.descriptors.data(), pair.F_j.descriptors.size());
  write_f32(os, pair.F_i.match_confidence.data(), pair.F_i.match_confidence.size());
  write_f32(os, pair.F_j.match_confidence.data(), pair.F_j.match_confidence.size());
  if (!os) throw std::runtime_error("RecordingPredictor: pair write failed");
  return pair;
}

DescriptorSet RecordingPredictor::encode(int frame) {
  const DescriptorSet descriptors = inner_.encode(frame);
  std::ofstream os(directory_ + "/" + encode_record_name(frame),
                   std::ios::binary);
  if (!os) throw std::runtime_error("RecordingPredictor: cannot write encode record");
  os.write(kEncodeMagic, sizeof(kEncodeMagic));
  const int32_t dim = static_cast<int32_t>(descriptors.rows());
  const int32_t count = static_cast<int32_t>(descriptors.cols());
  os.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  write_f32(os, descriptors.data(), descriptors.size());
  if (!os) throw std::runtime_error("RecordingPredictor: encode write failed");
  return descriptors;
}

StreamPredictor::StreamPredictor(std::string directory)
    : directory_(std::move(directory)) {
  std::ifstream meta(directory_ + "/meta");
  if (!meta) {
    throw std::runtime_error("StreamPredictor: cannot open " + directory_ +
                             "/meta");
  }
  int version = -1;
  std::string key;
  while (meta >> key) {
    if (key == "version") meta >> version;
    else if (key == "height") meta >> height_;
    else if (key == "width") meta >> width_;
    else if (key == "dim") meta >> dim_;
    else if (key == "frames") meta >> frame_count_;
    else throw std::runtime_error("StreamPredictor: unknown meta key " + key);
  }
  if (version != 1) {
    throw std::runtime_error("StreamPredictor: unsupported stream version");
  }
  if (height_ <= 0 || width_ <= 0 || dim_ <= 0 || frame_count_ <= 0) {
    throw std::runtime_error("StreamPredictor: invalid meta in " + directory_);
  }
  std::ifstream ts(directory_ + "/timestamps");
  if (!ts) throw std::runtime_error("StreamPredictor: missing timestamps file");
  double t = 0.0;
  while (ts >> t) timestamps_.push_back(t);
  if (static_cast<int>(timestamps_.size()) != frame_count_) {
    throw std::runtime_error("StreamPredictor: timestamp count mismatch");
  }
}

double StreamPredictor::timestamp(int frame) const {
  return timestamps_.at(frame);
}

PredictionPair StreamPredictor::predict(int frame_a, int frame_b) {
  const std::string path = directory_ + "/" + pair_record_name(frame_a, frame_b);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("StreamPredictor: missing record " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kPairMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("StreamPredictor: bad magic in " + path);
  }
  PredictionPair pair;
  pair.X_i_in_i = Pointmap(height_, width_);
  pair.X_j_in_i = Pointmap(height_, width_);
  pair.C_i = ConfidenceMap(height_, width_);
  pair.C_j = ConfidenceMap(height_, width_);
  pair.F_i = FeatureMap(height_, width_, dim_);
  pair.F_j = FeatureMap(height_, width_, dim_);
  read_pointmap_f32(is, pair.X_i_in_i);
  read_pointmap_f32(is, pair.X_j_in_i);
  read_f32(is, pair.C_i.values.data(), pair.C_i.values.size());
  read_f32(is, pair.C_j.values.data(), pair.C_j.values.size());
  read_f32(is, pair.F_i.descriptors.data(), pair.F_i.descriptors.size());
  read_f32(is, pair.F_j.descriptors.data(), pair.F_j.descriptors.size());
  read_f32(is, pair.F_i.match_confidence.data(), pair.F_i.match_confidence.size());
  read_f32(is, pair.F_j.match_confidence.data(), pair.F_j.match_confidence.size());
  if (!is) throw std::runtime_error("StreamPredictor: truncated record " + path);
  return pair;
}

DescriptorSet StreamPredictor::encode(int frame) {
  const std::string path = directory_ + "/" + encode_record_name(frame);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("StreamPredictor: missing record " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kEncodeMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("StreamPredictor: bad magic in " + path);
  }
  int32_t dim = 0;
  int32_t count = 0;
  is.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  is.read(reinterpret_cast<char*>(&count), sizeof(count));
  DescriptorSet descriptors(dim, count);
  read_f32(is, descriptors.data(), descriptors.size());
  if (!is) throw std::runtime_error("StreamPredictor: truncated record " + path);
  return descriptors;
}

}  // namespace pmslam
