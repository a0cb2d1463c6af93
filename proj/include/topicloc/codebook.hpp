#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicloc/common.hpp"
#include "topicloc/rng.hpp"

namespace topicloc {

struct Codebook {
  int dim = 0;
  std::vector<std::vector<double>> centroids;
  std::vector<double> distortion_trace;  // per Lloyd iteration, non-increasing
};

namespace detail {
inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}
}  // namespace detail

// Nearest centroid per descriptor; ties broken by the lowest centroid id.
inline std::vector<int> quantize(const std::vector<std::vector<double>>& descriptors,
                                 const Codebook& cb) {
  std::vector<int> ids;
  ids.reserve(descriptors.size());
  for (const auto& d : descriptors) {
    if (static_cast<int>(d.size()) != cb.dim)
      throw ValidationError("quantize: descriptor dimension " + std::to_string(d.size()) +
                            " does not match codebook dimension " + std::to_string(cb.dim));
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cb.centroids.size(); ++k) {
      const double dist = detail::sq_dist(d, cb.centroids[k]);
      if (dist < best_d) {
        best_d = dist;
        best = static_cast<int>(k);
      }
    }
    ids.push_back(best);
  }
  return ids;
}

// Lloyd with k-means++ seeding; at most 100 iterations, stopping early when
// the relative distortion change drops below 1e-6.
inline Codebook build_codebook(const std::vector<std::vector<double>>& descriptors, int k,
                               std::uint64_t seed) {
  const int n = static_cast<int>(descriptors.size());
  if (n == 0) throw ValidationError("build_codebook: empty descriptor set");
  if (k < 1 || k > n)
    throw ValidationError("build_codebook: k must be in [1, " + std::to_string(n) + "]");
  const int dim = static_cast<int>(descriptors[0].size());
  for (const auto& d : descriptors)
    if (static_cast<int>(d.size()) != dim)
      throw ValidationError("build_codebook: descriptors have mixed dimensions");

  Rng rng(seed);
  Codebook cb;
  cb.dim = dim;

  // k-means++ seeding
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  cb.centroids.push_back(descriptors[static_cast<int>(rng.uniform01() * n) % n]);
  while (static_cast<int>(cb.centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], detail::sq_dist(descriptors[i], cb.centroids.back()));
      total += d2[i];
    }
    int pick = 0;
    if (total > 0.0) {
      const double u = rng.uniform01() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          break;
        }
        pick = i;
      }
    } else {
      pick = static_cast<int>(rng.uniform01() * n) % n;
    }
    cb.centroids.push_back(descriptors[pick]);
  }

  std::vector<int> assign(n, 0);
  double prev = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 100; ++iter) {
    double distortion = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dist = detail::sq_dist(descriptors[i], cb.centroids[c]);
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      assign[i] = best;
      distortion += best_d;
    }
    if (distortion > prev * (1.0 + 1e-9) + 1e-12)
      throw std::logic_error("build_codebook: distortion increased");
    cb.distortion_trace.push_back(distortion);

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (int d = 0; d < dim; ++d) sums[assign[i]][d] += descriptors[i][d];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (int d = 0; d < dim; ++d) cb.centroids[c][d] = sums[c][d] / counts[c];

    if (prev < std::numeric_limits<double>::infinity()) {
      const double denom = std::max(prev, 1e-300);
      if (std::abs(prev - distortion) / denom < 1e-6) break;
    }
    if (distortion == 0.0) break;
    prev = distortion;
  }
  return cb;
}

inline void save_codebook(const Codebook& cb, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write codebook: " + path);
  nlohmann::json j{{"dim", cb.dim}, {"centroids", cb.centroids}};
  out << j.dump(2) << "\n";
}

inline Codebook load_codebook(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open codebook: " + path);
  nlohmann::json j;
  try {
    in >> j;
    Codebook cb;
    cb.dim = j.at("dim").get<int>();
    cb.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    for (const auto& c : cb.centroids)
      if (static_cast<int>(c.size()) != cb.dim)
        throw ValidationError(path + ": centroid dimension mismatch");
    return cb;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace topicloc
