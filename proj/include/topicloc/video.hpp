#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "topicloc/corpus.hpp"
#include "topicloc/linalg.hpp"
#include "topicloc/localise.hpp"

namespace topicloc {

// Linear-Gaussian state-space model over a 4-state (position, velocity)
// track observed through its position.
struct StateSpaceConfig {
  Mat<4, 4> a = Mat<4, 4>::identity();
  Mat<2, 4> o;
  Mat<4, 4> q;
  Mat<2, 2> r;
  VecN<4> m0;
  Mat<4, 4> p0 = Mat<4, 4>::identity();

  static StateSpaceConfig constant_velocity(double q_var = 1e-4, double r_var = 1e-3) {
    StateSpaceConfig c;
    c.a(0, 2) = 1.0;
    c.a(1, 3) = 1.0;
    c.o(0, 0) = 1.0;
    c.o(1, 1) = 1.0;
    c.q = Mat<4, 4>::identity() * q_var;
    c.r = Mat<2, 2>::identity() * r_var;
    return c;
  }

  void validate() const {
    if (!is_symmetric_psd(q)) throw ValidationError("StateSpaceConfig: Q must be symmetric PSD");
    if (!is_symmetric_psd(r)) throw ValidationError("StateSpaceConfig: R must be symmetric PSD");
    if (!is_symmetric_psd(p0))
      throw ValidationError("StateSpaceConfig: P0 must be symmetric PSD");
  }
};

struct FilterResult {
  std::vector<VecN<4>> means;
  std::vector<Mat<4, 4>> covs;
  std::vector<VecN<4>> pred_means;  // one-step predictions used by the updates
  std::vector<Mat<4, 4>> pred_covs;
};

namespace detail {

template <std::size_t N>
Mat<N, N> symmetrize(const Mat<N, N>& m) {
  return (m + m.transpose()) * 0.5;
}

inline void kalman_update(VecN<4>& m, Mat<4, 4>& p, Vec2 obs, const StateSpaceConfig& c) {
  VecN<2> y;
  y(0, 0) = obs.x - (c.o * m)(0, 0);
  y(1, 0) = obs.y - (c.o * m)(1, 0);
  const Mat<2, 2> s = c.o * p * c.o.transpose() + c.r;
  const Mat<4, 2> k = p * c.o.transpose() * inverse(s);
  m = m + k * y;
  // Joseph form keeps the covariance symmetric PSD under roundoff
  const Mat<4, 4> ikh = Mat<4, 4>::identity() - k * c.o;
  p = symmetrize(ikh * p * ikh.transpose() + k * c.r * k.transpose());
}

}  // namespace detail

// Forward predict/update recursion. The first element conditions the prior
// directly (no transition applies before the first frame); a missing
// observation contributes a predict-only step.
inline FilterResult kalman_filter(const std::vector<std::optional<Vec2>>& observations,
                                  const StateSpaceConfig& config) {
  config.validate();
  if (observations.empty()) throw ValidationError("kalman_filter: empty observation sequence");
  FilterResult out;
  VecN<4> m = config.m0;
  Mat<4, 4> p = config.p0;
  for (std::size_t t = 0; t < observations.size(); ++t) {
    if (t > 0) {
      m = config.a * m;
      p = detail::symmetrize(config.a * p * config.a.transpose() + config.q);
    }
    out.pred_means.push_back(m);
    out.pred_covs.push_back(p);
    if (observations[t]) detail::kalman_update(m, p, *observations[t], config);
    out.means.push_back(m);
    out.covs.push_back(p);
  }
  return out;
}

struct SmoothResult {
  std::vector<VecN<4>> means;
  std::vector<Mat<4, 4>> covs;
};

// RTS backward pass over the filter output; the last frame keeps its
// filtered marginal.
inline SmoothResult kalman_smooth(const std::vector<std::optional<Vec2>>& observations,
                                  const StateSpaceConfig& config) {
  const FilterResult f = kalman_filter(observations, config);
  const std::size_t n = f.means.size();
  SmoothResult out;
  out.means = f.means;
  out.covs = f.covs;
  for (std::size_t i = n - 1; i-- > 0;) {
    const Mat<4, 4>& pred_cov = f.pred_covs[i + 1];
    const Mat<4, 4> gain = f.covs[i] * config.a.transpose() * inverse(pred_cov);
    out.means[i] = f.means[i] + gain * (out.means[i + 1] - f.pred_means[i + 1]);
    out.covs[i] = detail::symmetrize(
        f.covs[i] + gain * (out.covs[i + 1] - pred_cov) * gain.transpose());
  }
  return out;
}

struct TrackFrame {
  int frame = 0;
  BoundingBox box;
  bool predicted = false;  // true when the row was filled in across a gap
};

struct SmoothOptions {
  // Start the state at the first observed corner with zero velocity instead
  // of the config's m0.
  bool init_from_first_obs = true;
};

// Smooths the top-left and bottom-right corners as two independent
// constant-velocity tracks and reassembles boxes, filling frame gaps with
// predicted rows. Corner order is restored by swapping if smoothing crossed
// the corners.
inline std::vector<TrackFrame> smooth_track(const std::vector<TrackFrame>& track,
                                            const StateSpaceConfig& config,
                                            const SmoothOptions& opts = {}) {
  if (track.empty()) return {};
  for (std::size_t i = 1; i < track.size(); ++i)
    if (track[i].frame <= track[i - 1].frame)
      throw ValidationError("smooth_track: frame indices must be strictly increasing");

  const int first = track.front().frame;
  const int last = track.back().frame;
  const std::size_t n = static_cast<std::size_t>(last - first) + 1;
  std::vector<std::optional<Vec2>> tl(n), br(n);
  std::vector<double> scores(n, 0.0);
  for (const auto& tf : track) {
    const std::size_t t = static_cast<std::size_t>(tf.frame - first);
    tl[t] = Vec2{tf.box.x_min, tf.box.y_min};
    br[t] = Vec2{tf.box.x_max, tf.box.y_max};
    scores[t] = tf.box.score;
  }

  auto run = [&](const std::vector<std::optional<Vec2>>& obs) {
    StateSpaceConfig c = config;
    if (opts.init_from_first_obs) {
      c.m0 = VecN<4>{};
      c.m0(0, 0) = obs[0]->x;
      c.m0(1, 0) = obs[0]->y;
    }
    return kalman_smooth(obs, c);
  };
  const SmoothResult s_tl = run(tl);
  const SmoothResult s_br = run(br);

  std::vector<TrackFrame> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    TrackFrame& tf = out[t];
    tf.frame = first + static_cast<int>(t);
    tf.predicted = !tl[t].has_value();
    tf.box.x_min = s_tl.means[t](0, 0);
    tf.box.y_min = s_tl.means[t](1, 0);
    tf.box.x_max = s_br.means[t](0, 0);
    tf.box.y_max = s_br.means[t](1, 0);
    tf.box.score = scores[t];
    if (tf.box.x_min > tf.box.x_max) std::swap(tf.box.x_min, tf.box.x_max);
    if (tf.box.y_min > tf.box.y_max) std::swap(tf.box.y_min, tf.box.y_max);
  }
  return out;
}

// CSV with header frame,x_min,y_min,x_max,y_max,score[,predicted]; the
// predicted column appears on smoothed output and is optional on input.
inline std::vector<TrackFrame> load_track(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open track: " + path);
  std::vector<TrackFrame> track;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!saw_header) {
      if (line.rfind("frame,", 0) != 0) throw ParseError(path + ":1: expected track header");
      saw_header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6 && fields.size() != 7)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 6 or 7 fields");
    try {
      TrackFrame tf;
      tf.frame = std::stoi(fields[0]);
      tf.box = {std::stod(fields[1]), std::stod(fields[2]), std::stod(fields[3]),
                std::stod(fields[4]), std::stod(fields[5])};
      if (fields.size() == 7) tf.predicted = std::stoi(fields[6]) != 0;
      track.push_back(tf);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": malformed track row");
    }
  }
  if (!saw_header) throw ParseError(path + ": missing header line");
  for (std::size_t i = 1; i < track.size(); ++i)
    if (track[i].frame <= track[i - 1].frame)
      throw ValidationError(path + ": frame indices must be strictly increasing");
  return track;
}

inline void save_track(const std::vector<TrackFrame>& track, const std::string& path,
                       bool with_predicted_column = true) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write track: " + path);
  out << "frame,x_min,y_min,x_max,y_max,score";
  if (with_predicted_column) out << ",predicted";
  out << "\n";
  out.precision(17);
  for (const auto& tf : track) {
    out << tf.frame << "," << tf.box.x_min << "," << tf.box.y_min << "," << tf.box.x_max << ","
        << tf.box.y_max << "," << tf.box.score;
    if (with_predicted_column) out << "," << (tf.predicted ? 1 : 0);
    out << "\n";
  }
  if (!out) throw IoError("failed writing track: " + path);
}

}  // namespace topicloc
