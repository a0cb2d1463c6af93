#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "topicloc/corpus.hpp"
#include "topicloc/model.hpp"

namespace topicloc {

struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  double score = 0;

  double area() const { return (x_max - x_min) * (y_max - y_min); }
  bool operator==(const BoundingBox&) const = default;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

// Axis-aligned rectangle around the two-standard-deviation ellipse of the
// posterior-expected Gaussian: covariance (nu W)^-1, half extent
// 2 sqrt(Sigma_dd) per axis, clipped to the unit square. The score is the
// topic mass the caller accumulated from the responsibilities.
inline BoundingBox gaussian_box(const NWStats& s, double mass) {
  if (!s.w.is_pd()) throw ValidationError("gaussian_box: precision matrix not PD");
  const Mat2 cov = (s.w * s.nu).inverse();
  const double hx = 2.0 * std::sqrt(cov.a00);
  const double hy = 2.0 * std::sqrt(cov.a11);
  BoundingBox box;
  box.x_min = std::max(0.0, s.mu.x - hx);
  box.y_min = std::max(0.0, s.mu.y - hy);
  box.x_max = std::min(1.0, s.mu.x + hx);
  box.y_max = std::min(1.0, s.mu.y + hy);
  box.score = mass;
  return box;
}

struct HeatMap {
  int width_cells = 0;
  int height_cells = 0;
  std::vector<double> values;  // row major, height x width

  double at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * width_cells + col];
  }
  double& at(int row, int col) {
    return values[static_cast<std::size_t>(row) * width_cells + col];
  }
  double cell_width() const { return 1.0 / width_cells; }
  double cell_height() const { return 1.0 / height_cells; }
};

// Per-class responsibility field on a regular grid: each cell holds the mean
// class responsibility (summed over the class's topics) of the tokens that
// fall in it, zero where no token lands.
inline HeatMap heat_map(const ImageRecord& image, const Matrix& resp,
                        const ModelConfig& config, int class_id, int grid_cells = 64,
                        bool blur = false) {
  if (grid_cells < 1) throw ValidationError("heat_map: grid_cells must be >= 1");
  if (class_id < 0 || class_id >= config.num_classes)
    throw ValidationError("heat_map: class id out of range");
  HeatMap hm;
  hm.width_cells = grid_cells;
  hm.height_cells = grid_cells;
  hm.values.assign(static_cast<std::size_t>(grid_cells) * grid_cells, 0.0);
  std::vector<double> count(hm.values.size(), 0.0);

  const int t0 = config.first_topic_of(class_id);
  const int t1 = config.first_topic_of(class_id + 1);
  for (std::size_t i = 0; i < image.tokens.size(); ++i) {
    const Vec2 loc = image.tokens[i].loc;
    const int cx = std::min(static_cast<int>(loc.x * grid_cells), grid_cells - 1);
    const int cy = std::min(static_cast<int>(loc.y * grid_cells), grid_cells - 1);
    double r = 0.0;
    for (int t = t0; t < t1; ++t) r += resp.at(i, t);
    hm.at(cy, cx) += r;
    count[static_cast<std::size_t>(cy) * grid_cells + cx] += 1.0;
  }
  for (std::size_t c = 0; c < hm.values.size(); ++c)
    if (count[c] > 0.0) hm.values[c] /= count[c];

  if (blur) {
    std::vector<double> out(hm.values.size(), 0.0);
    for (int y = 0; y < grid_cells; ++y)
      for (int x = 0; x < grid_cells; ++x) {
        double sum = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= grid_cells || xx < 0 || xx >= grid_cells) continue;
            sum += hm.at(yy, xx);
            ++n;
          }
        out[static_cast<std::size_t>(y) * grid_cells + x] = sum / n;
      }
    hm.values = std::move(out);
  }
  return hm;
}

// Candidate boxes are the bounding rectangles of 4-connected components of
// cells at or above threshold_frac of the peak, scored by the mean heat
// inside the rectangle, then filtered by greedy NMS. Ties break towards the
// smaller box, then discovery order.
inline std::vector<BoundingBox> boxes_from_heatmap(const HeatMap& hm,
                                                   double threshold_frac = 0.5,
                                                   double nms_iou = 0.5) {
  if (!(threshold_frac > 0.0) || threshold_frac > 1.0)
    throw ValidationError("boxes_from_heatmap: threshold_frac must be in (0, 1]");
  const int w = hm.width_cells, h = hm.height_cells;
  double peak = 0.0;
  for (double v : hm.values) peak = std::max(peak, v);
  if (peak <= 0.0) return {};
  const double threshold = threshold_frac * peak;

  std::vector<int> component(hm.values.size(), -1);
  struct Extent {
    int min_x, min_y, max_x, max_y;
  };
  std::vector<Extent> extents;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      if (hm.values[idx] < threshold || component[idx] >= 0) continue;
      const int id = static_cast<int>(extents.size());
      extents.push_back({x, y, x, y});
      std::deque<std::pair<int, int>> queue{{x, y}};
      component[idx] = id;
      while (!queue.empty()) {
        const auto [cx, cy] = queue.front();
        queue.pop_front();
        Extent& e = extents[id];
        e.min_x = std::min(e.min_x, cx);
        e.min_y = std::min(e.min_y, cy);
        e.max_x = std::max(e.max_x, cx);
        e.max_y = std::max(e.max_y, cy);
        const int nx[4] = {cx - 1, cx + 1, cx, cx};
        const int ny[4] = {cy, cy, cy - 1, cy + 1};
        for (int d = 0; d < 4; ++d) {
          if (nx[d] < 0 || nx[d] >= w || ny[d] < 0 || ny[d] >= h) continue;
          const std::size_t nidx = static_cast<std::size_t>(ny[d]) * w + nx[d];
          if (hm.values[nidx] < threshold || component[nidx] >= 0) continue;
          component[nidx] = id;
          queue.emplace_back(nx[d], ny[d]);
        }
      }
    }

  struct Candidate {
    BoundingBox box;
    int order;
  };
  std::vector<Candidate> candidates;
  for (std::size_t id = 0; id < extents.size(); ++id) {
    const Extent& e = extents[id];
    BoundingBox box;
    box.x_min = e.min_x * hm.cell_width();
    box.x_max = (e.max_x + 1) * hm.cell_width();
    box.y_min = e.min_y * hm.cell_height();
    box.y_max = (e.max_y + 1) * hm.cell_height();
    double sum = 0.0;
    int n = 0;
    for (int y = e.min_y; y <= e.max_y; ++y)
      for (int x = e.min_x; x <= e.max_x; ++x) {
        sum += hm.at(y, x);
        ++n;
      }
    box.score = sum / n;
    candidates.push_back({box, static_cast<int>(id)});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.box.score != b.box.score) return a.box.score > b.box.score;
    if (a.box.area() != b.box.area()) return a.box.area() < b.box.area();
    return a.order < b.order;
  });

  std::vector<BoundingBox> kept;
  for (const auto& c : candidates) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (iou(c.box, k) > nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(c.box);
  }
  return kept;
}

enum class Strategy { kGaussian, kSampling };

inline std::string to_string(Strategy s) {
  return s == Strategy::kGaussian ? "gaussian" : "sampling";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "gaussian") return Strategy::kGaussian;
  if (s == "sampling") return Strategy::kSampling;
  throw ValidationError("unknown strategy: " + s);
}

struct LocaliseOptions {
  int grid_cells = 64;
  double threshold_frac = 0.5;
  double nms_iou = 0.5;
};

// Boxes for one class in one image. The gaussian strategy returns exactly
// one box from the class's strongest topic posterior; the sampling strategy
// proposes from the responsibility heat map.
inline std::vector<BoundingBox> localise_image(const Model& model, const ImagePosterior& post,
                                               const ImageRecord& image, Strategy strategy,
                                               int class_id, const LocaliseOptions& opts = {}) {
  const ModelConfig& config = model.config;
  if (class_id < 0 || class_id >= config.num_classes)
    throw ValidationError("localise_image: class id out of range");
  if (strategy == Strategy::kGaussian) {
    const int t0 = config.first_topic_of(class_id);
    int best_topic = t0;
    double best_mass = -1.0;
    for (int t = t0; t < config.first_topic_of(class_id + 1); ++t) {
      double mass = 0.0;
      for (std::size_t i = 0; i < post.resp.rows(); ++i) mass += post.resp.at(i, t);
      if (mass > best_mass) {
        best_mass = mass;
        best_topic = t;
      }
    }
    return {gaussian_box(post.nw[best_topic], best_mass)};
  }
  const HeatMap hm = heat_map(image, post.resp, config, class_id, opts.grid_cells);
  return boxes_from_heatmap(hm, opts.threshold_frac, opts.nms_iou);
}

struct Detection {
  std::string image_id;
  int class_id = 0;
  BoundingBox box;
};

inline BoundingBox to_pixels(const BoundingBox& b, int width, int height) {
  return {b.x_min * width, b.y_min * height, b.x_max * width, b.y_max * height, b.score};
}

inline BoundingBox to_normalized(const BoundingBox& b, int width, int height) {
  return {b.x_min / width, b.y_min / height, b.x_max / width, b.y_max / height, b.score};
}

struct CorLocResult {
  std::vector<double> per_class;  // percent; NaN where no image was evaluated
  std::vector<int> evaluated;     // detections scored per class
  std::vector<int> correct;
  double mean = 0.0;  // unweighted mean over classes with evaluated > 0
};

struct CorLocOptions {
  bool strict = true;  // > 0.5 when true, >= 0.5 otherwise
};

// Fraction of evaluated (image, class) detections whose box overlaps ANY
// ground-truth instance of that class in that image by more than 0.5 IoU.
// Detections and ground truth must share a coordinate space per image.
inline CorLocResult corloc(const std::vector<Detection>& detections,
                           const std::vector<GroundTruthBox>& ground_truth, int num_classes,
                           const CorLocOptions& opts = {}) {
  if (num_classes < 1) throw ValidationError("corloc: num_classes must be >= 1");
  std::map<std::pair<std::string, int>, std::vector<BoundingBox>> gt;
  for (const auto& g : ground_truth)
    gt[{g.image_id, g.class_id}].push_back({g.x_min, g.y_min, g.x_max, g.y_max, 0.0});

  CorLocResult result;
  result.per_class.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  result.evaluated.assign(num_classes, 0);
  result.correct.assign(num_classes, 0);
  for (const auto& det : detections) {
    if (det.class_id < 0 || det.class_id >= num_classes)
      throw ValidationError("corloc: detection class id out of range");
    ++result.evaluated[det.class_id];
    const auto it = gt.find({det.image_id, det.class_id});
    if (it == gt.end()) continue;
    for (const auto& g : it->second) {
      const double overlap = iou(det.box, g);
      if (opts.strict ? overlap > 0.5 : overlap >= 0.5) {
        ++result.correct[det.class_id];
        break;
      }
    }
  }
  double sum = 0.0;
  int classes_with_data = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (result.evaluated[c] == 0) {
      std::cerr << "warning: class " << c << " has no evaluated images; excluded from mean\n";
      continue;
    }
    result.per_class[c] = 100.0 * result.correct[c] / result.evaluated[c];
    sum += result.per_class[c];
    ++classes_with_data;
  }
  result.mean = classes_with_data > 0 ? sum / classes_with_data : 0.0;
  return result;
}

// P5 binary PGM scaled to 8 bits; the pre-scaling peak value is recorded in
// a comment so the absolute scale can be recovered.
inline void save_heatmap_pgm(const HeatMap& hm, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write heat map: " + path);
  double peak = 0.0;
  for (double v : hm.values) peak = std::max(peak, v);
  out << "P5\n# max " << peak << "\n" << hm.width_cells << " " << hm.height_cells << "\n255\n";
  for (double v : hm.values) {
    const int byte = peak > 0.0 ? static_cast<int>(std::lround(255.0 * v / peak)) : 0;
    out.put(static_cast<char>(std::clamp(byte, 0, 255)));
  }
  if (!out) throw IoError("failed writing heat map: " + path);
}

inline void save_detections(const std::vector<Detection>& detections, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write detections: " + path);
  out << "image_id,class_id,x_min,y_min,x_max,y_max,score\n";
  out.precision(17);
  for (const auto& d : detections)
    out << d.image_id << "," << d.class_id << "," << d.box.x_min << "," << d.box.y_min << ","
        << d.box.x_max << "," << d.box.y_max << "," << d.box.score << "\n";
  if (!out) throw IoError("failed writing detections: " + path);
}

inline std::vector<Detection> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections: " + path);
  std::vector<Detection> detections;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!saw_header) {
      if (line.rfind("image_id,", 0) != 0)
        throw ParseError(path + ":1: expected detections header");
      saw_header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 7)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 7 fields");
    try {
      Detection d;
      d.image_id = fields[0];
      d.class_id = std::stoi(fields[1]);
      d.box = {std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4]),
               std::stod(fields[5]), std::stod(fields[6])};
      detections.push_back(std::move(d));
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": malformed detection row");
    }
  }
  if (!saw_header) throw ParseError(path + ": missing header line");
  return detections;
}

}  // namespace topicloc
