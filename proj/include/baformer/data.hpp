#pragma once

// Labeled feature sequences: synthesis, ground-truth derivation (segments,
// binary masks, transcript, Gaussian boundary heatmap), and file formats.
//
// Frame indices are 1-based and inclusive in all public structures.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "baformer/numeric.hpp"
#include "baformer/rng.hpp"

namespace baformer {

struct FrameSequence {
  std::string video_id;
  Matrix features;          // T x C0
  std::vector<int> labels;  // length T, values in [0, K)
  int num_classes = 0;      // K
};

struct Segment {
  int label = 0;
  int start = 0;  // 1-based, inclusive
  int end = 0;    // 1-based, inclusive

  int length() const { return end - start + 1; }
};

struct SegmentSet {
  std::vector<Segment> segments;
  int num_frames = 0;  // T
};

struct GroundTruth {
  std::vector<int> labels;
  int num_classes = 0;
  SegmentSet segments;
  Matrix masks;                         // N x T binary, row i covers segment i
  std::vector<int> transcript;          // segment classes in order
  std::vector<double> boundary_heatmap; // length T, values in [0, 1]
  std::vector<int> interior_boundaries; // 1-based start frames of segments 2..N
  double sigma = 2.0;
};

inline SegmentSet segments_of(const std::vector<int>& labels) {
  SegmentSet out;
  out.num_frames = static_cast<int>(labels.size());
  if (labels.empty()) return out;
  int start = 1;
  for (int t = 1; t < out.num_frames; ++t) {
    if (labels[t] != labels[t - 1]) {
      out.segments.push_back({labels[t - 1], start, t});
      start = t + 1;
    }
  }
  out.segments.push_back({labels.back(), start, out.num_frames});
  return out;
}

inline std::vector<int> transcript_of(const std::vector<int>& labels) {
  std::vector<int> tr;
  for (size_t t = 0; t < labels.size(); ++t)
    if (t == 0 || labels[t] != labels[t - 1]) tr.push_back(labels[t]);
  return tr;
}

// Maximal constant-label runs, per-segment binary masks, transcript, and a
// heatmap that is exactly 1 at each interior segment-start frame and decays
// as exp(-(t-b)^2 / (2 sigma^2)); multiple boundaries combine by max.
inline GroundTruth derive_ground_truth(const std::vector<int>& labels, int num_classes,
                                       double sigma = 2.0) {
  if (labels.empty()) throw std::invalid_argument("derive_ground_truth: empty label sequence");
  for (int v : labels)
    if (v < 0 || v >= num_classes)
      throw std::invalid_argument("derive_ground_truth: label " + std::to_string(v) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
  GroundTruth gt;
  gt.labels = labels;
  gt.num_classes = num_classes;
  gt.sigma = sigma;
  gt.segments = segments_of(labels);
  gt.transcript = transcript_of(labels);

  const int T = gt.segments.num_frames;
  const int N = static_cast<int>(gt.segments.segments.size());
  gt.masks = Matrix::zeros(N, T);
  for (int i = 0; i < N; ++i) {
    const Segment& s = gt.segments.segments[i];
    for (int t = s.start; t <= s.end; ++t) gt.masks(i, t - 1) = 1.0;
  }

  for (int i = 1; i < N; ++i) gt.interior_boundaries.push_back(gt.segments.segments[i].start);

  gt.boundary_heatmap.assign(T, 0.0);
  for (int t = 1; t <= T; ++t) {
    double best = 0.0;
    for (int b : gt.interior_boundaries) {
      const double d = static_cast<double>(t - b);
      best = std::max(best, std::exp(-(d * d) / (2.0 * sigma * sigma)));
    }
    gt.boundary_heatmap[t - 1] = best;
  }
  return gt;
}

struct SynthesisConfig {
  int num_videos = 1;
  int min_frames = 200;
  int max_frames = 200;
  int num_classes = 5;   // K
  int feature_dim = 32;  // C0
  int min_segment = 10;
  int max_segment = 40;
  double noise = 0.25;
  double boundary_sigma = 2.0;

  void validate() const {
    if (num_videos < 1) throw std::invalid_argument("synthesis: num_videos must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("synthesis: need at least 2 classes");
    if (feature_dim < 1) throw std::invalid_argument("synthesis: feature_dim must be >= 1");
    if (min_frames < 1 || min_frames > max_frames)
      throw std::invalid_argument("synthesis: bad frame range [" + std::to_string(min_frames) +
                                  ", " + std::to_string(max_frames) + "]");
    if (min_segment < 1 || min_segment > max_segment)
      throw std::invalid_argument("synthesis: bad segment range");
    if (min_segment > max_frames)
      throw std::invalid_argument("synthesis: min segment length exceeds max video length");
    if (noise < 0.0) throw std::invalid_argument("synthesis: noise must be >= 0");
  }
};

// Per-class feature prototypes plus isotropic Gaussian noise; action order is
// a no-self-transition Markov chain. Pure function of (config, seed): draws
// happen in a fixed order.
inline std::vector<FrameSequence> synthesize_dataset(const SynthesisConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);

  Matrix prototypes(cfg.num_classes, cfg.feature_dim);
  for (double& v : prototypes.data) v = rng.gaussian();

  std::vector<FrameSequence> videos;
  videos.reserve(cfg.num_videos);
  for (int vi = 0; vi < cfg.num_videos; ++vi) {
    FrameSequence seq;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "video_%04d", vi);
    seq.video_id = buf;
    seq.num_classes = cfg.num_classes;

    const int T = rng.uniform_int(cfg.min_frames, cfg.max_frames);
    seq.labels.reserve(T);
    int cls = rng.uniform_int(0, cfg.num_classes - 1);
    while (static_cast<int>(seq.labels.size()) < T) {
      int len = rng.uniform_int(cfg.min_segment, cfg.max_segment);
      len = std::min(len, T - static_cast<int>(seq.labels.size()));
      seq.labels.insert(seq.labels.end(), len, cls);
      // next class: uniform over the other K-1 classes
      int step = rng.uniform_int(1, cfg.num_classes - 1);
      cls = (cls + step) % cfg.num_classes;
    }

    seq.features = Matrix(T, cfg.feature_dim);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < cfg.feature_dim; ++j)
        seq.features(t, j) = prototypes(seq.labels[t], j) + cfg.noise * rng.gaussian();
    videos.push_back(std::move(seq));
  }
  return videos;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------
// Feature file (binary, little-endian):
//   magic "BAFT", u32 version=1, u32 T, u32 C0, then T*C0 float32 row-major.
// Label file (UTF-8 text):
//   first line "K=<int>", then T lines each a class index in [0, K).

namespace io_detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(std::string("feature file: truncated ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

static_assert(sizeof(float) == 4, "float32 payload assumes 4-byte float");

}  // namespace io_detail

inline void write_features(const std::filesystem::path& path, const Matrix& features) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_features: cannot open " + path.string());
  os.write("BAFT", 4);
  io_detail::write_u32(os, 1);
  io_detail::write_u32(os, static_cast<uint32_t>(features.rows));
  io_detail::write_u32(os, static_cast<uint32_t>(features.cols));
  for (double v : features.data) {
    const float f = static_cast<float>(v);
    os.write(reinterpret_cast<const char*>(&f), 4);
  }
  if (!os) throw std::runtime_error("write_features: write failed for " + path.string());
}

inline Matrix read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_features: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "BAFT", 4) != 0)
    throw std::runtime_error("read_features: bad magic in " + path.string());
  const uint32_t version = io_detail::read_u32(is, "version");
  if (version != 1)
    throw std::runtime_error("read_features: unsupported version " + std::to_string(version));
  const uint32_t T = io_detail::read_u32(is, "frame count");
  const uint32_t C = io_detail::read_u32(is, "feature dim");
  Matrix out(static_cast<int>(T), static_cast<int>(C));
  for (size_t i = 0; i < out.size(); ++i) {
    float f;
    if (!is.read(reinterpret_cast<char*>(&f), 4))
      throw std::runtime_error("read_features: truncated payload in " + path.string());
    out.data[i] = static_cast<double>(f);
  }
  return out;
}

inline void write_labels(const std::filesystem::path& path, const std::vector<int>& labels,
                         int num_classes) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_labels: cannot open " + path.string());
  os << "K=" << num_classes << "\n";
  for (int v : labels) os << v << "\n";
  if (!os) throw std::runtime_error("write_labels: write failed for " + path.string());
}

struct LabelFile {
  std::vector<int> labels;
  int num_classes = 0;
};

inline LabelFile read_labels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_labels: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("K=", 0) != 0)
    throw std::runtime_error("read_labels: missing K= header in " + path.string());
  LabelFile out;
  try {
    out.num_classes = std::stoi(line.substr(2));
  } catch (const std::exception&) {
    throw std::runtime_error("read_labels: bad K= header in " + path.string());
  }
  if (out.num_classes < 1)
    throw std::runtime_error("read_labels: K must be >= 1 in " + path.string());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    int v;
    try {
      v = std::stoi(line);
    } catch (const std::exception&) {
      throw std::runtime_error("read_labels: bad label line '" + line + "' in " + path.string());
    }
    if (v < 0 || v >= out.num_classes)
      throw std::runtime_error("read_labels: label " + std::to_string(v) + " outside [0, " +
                               std::to_string(out.num_classes) + ") in " + path.string());
    out.labels.push_back(v);
  }
  return out;
}

// Joined view: errors if the label track does not match the feature length.
inline FrameSequence read_sequence(const std::filesystem::path& feature_path,
                                   const std::filesystem::path& label_path,
                                   const std::string& video_id) {
  FrameSequence seq;
  seq.video_id = video_id;
  seq.features = read_features(feature_path);
  LabelFile lf = read_labels(label_path);
  if (static_cast<int>(lf.labels.size()) != seq.features.rows)
    throw std::runtime_error("read_sequence: " + video_id + " has " +
                             std::to_string(lf.labels.size()) + " labels but " +
                             std::to_string(seq.features.rows) + " feature rows");
  seq.labels = std::move(lf.labels);
  seq.num_classes = lf.num_classes;
  return seq;
}

}  // namespace baformer
