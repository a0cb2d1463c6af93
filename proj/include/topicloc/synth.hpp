#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicloc/corpus.hpp"
#include "topicloc/localise.hpp"
#include "topicloc/model.hpp"
#include "topicloc/rng.hpp"

namespace topicloc {

// Scenario description for sampling a corpus from the model's own
// generative process.
struct SynthConfig {
  int num_images = 100;
  int tokens_per_image = 100;
  int num_classes = 3;
  int k_bg = 2;
  std::vector<int> vocab_sizes = {50};
  std::vector<double> concentrations = {0.1};  // appearance Dirichlet, per channel
  int classes_per_image = 1;
  // Deterministic round-robin label assignment instead of random label sets;
  // guarantees every class appears even in tiny corpora.
  bool balanced_labels = false;
  double unlabeled_frac = 0.0;  // marks the last round(frac*J) images
  // Mixes this fraction of a shared draw into every fg class's appearance
  // row, producing appearance-correlated classes.
  double appearance_overlap = 0.0;
  LocationPrior nw{{0.5, 0.5}, Mat2::diag(0.9, 0.9), 0.5, 50.0};
  int image_width = 640;
  int image_height = 480;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_images < 1) throw ValidationError("SynthConfig: num_images must be >= 1");
    if (tokens_per_image < 1)
      throw ValidationError("SynthConfig: tokens_per_image must be >= 1");
    if (num_classes < 1) throw ValidationError("SynthConfig: num_classes must be >= 1");
    if (k_bg < 0) throw ValidationError("SynthConfig: k_bg must be >= 0");
    if (vocab_sizes.empty()) throw ValidationError("SynthConfig: vocab_sizes must be non-empty");
    for (int v : vocab_sizes)
      if (v < 2) throw ValidationError("SynthConfig: vocab sizes must be >= 2");
    if (concentrations.size() != vocab_sizes.size())
      throw ValidationError("SynthConfig: one concentration per channel required");
    for (double c : concentrations)
      if (!(c > 0.0)) throw ValidationError("SynthConfig: concentrations must be > 0");
    if (classes_per_image < 0 || classes_per_image > num_classes)
      throw ValidationError("SynthConfig: classes_per_image must be in [0, num_classes]");
    if (classes_per_image == 0 && k_bg < 1)
      throw ValidationError(
          "SynthConfig: background topics required when no classes are planted");
    if (unlabeled_frac < 0.0 || unlabeled_frac > 1.0)
      throw ValidationError("SynthConfig: unlabeled_frac must be in [0, 1]");
    if (appearance_overlap < 0.0 || appearance_overlap > 1.0)
      throw ValidationError("SynthConfig: appearance_overlap must be in [0, 1]");
    if (image_width < 1 || image_height < 1)
      throw ValidationError("SynthConfig: image dimensions must be positive");
    nw.validate();
  }
};

struct PlantedObject {
  int class_id = 0;
  Vec2 mu;
  Mat2 lambda;      // true location precision
  BoundingBox box;  // two-standard-deviation box, normalized
};

struct SynthImageTruth {
  std::vector<double> theta;  // over all K topics
  std::vector<int> topics;    // true topic per token
  std::vector<PlantedObject> objects;
};

struct SynthGroundTruth {
  std::vector<Matrix> true_pi;  // per channel, K x V_f
  std::vector<SynthImageTruth> images;
};

namespace detail {

inline BoundingBox box_from_gaussian_cov(Vec2 mu, const Mat2& cov) {
  const double hx = 2.0 * std::sqrt(cov.a00);
  const double hy = 2.0 * std::sqrt(cov.a11);
  BoundingBox b;
  b.x_min = std::max(0.0, mu.x - hx);
  b.y_min = std::max(0.0, mu.y - hy);
  b.x_max = std::min(1.0, mu.x + hx);
  b.y_max = std::min(1.0, mu.y + hy);
  return b;
}

// First n entries of a seeded Fisher-Yates shuffle of 0..c-1.
inline std::vector<int> sample_distinct(Rng& rng, int c, int n) {
  std::vector<int> pool(c);
  for (int i = 0; i < c; ++i) pool[i] = i;
  for (int i = 0; i < n; ++i) {
    const int j = i + static_cast<int>(rng.uniform01() * (c - i));
    std::swap(pool[i], pool[std::min(j, c - 1)]);
  }
  pool.resize(n);
  return pool;
}

}  // namespace detail

// Samples (corpus, ground truth) from the generative process: appearance
// rows from the master stream (id 0), then each image from its own stream
// (id 1+j), so corpora are reproducible per image. Foreground locations are
// rejection-resampled into the unit square (100 tries, then clamped).
inline std::pair<Corpus, SynthGroundTruth> sample_corpus(
    const SynthConfig& config, const std::vector<Matrix>& preset_pi = {}) {
  config.validate();
  const int k_total = config.num_classes + config.k_bg;
  const int f_total = static_cast<int>(config.vocab_sizes.size());

  SynthGroundTruth gt;
  if (!preset_pi.empty()) {
    if (static_cast<int>(preset_pi.size()) != f_total)
      throw ValidationError("sample_corpus: preset pi channel count mismatch");
    for (int f = 0; f < f_total; ++f)
      if (static_cast<int>(preset_pi[f].rows()) != k_total ||
          static_cast<int>(preset_pi[f].cols()) != config.vocab_sizes[f])
        throw ValidationError("sample_corpus: preset pi shape mismatch");
    gt.true_pi = preset_pi;
  } else {
    Rng master = Rng::stream(config.seed, 0);
    for (int f = 0; f < f_total; ++f) {
      const int v = config.vocab_sizes[f];
      const std::vector<double> conc(v, config.concentrations[f]);
      std::vector<double> shared(v, 0.0);
      if (config.appearance_overlap > 0.0) master.dirichlet(conc, &shared);
      Matrix pi(k_total, v);
      std::vector<double> row;
      for (int k = 0; k < k_total; ++k) {
        master.dirichlet(conc, &row);
        const bool mix = config.appearance_overlap > 0.0 && k < config.num_classes;
        for (int w = 0; w < v; ++w)
          pi.at(k, w) = mix ? config.appearance_overlap * shared[w] +
                                  (1.0 - config.appearance_overlap) * row[w]
                            : row[w];
      }
      gt.true_pi.push_back(std::move(pi));
    }
  }

  Corpus corpus;
  corpus.num_classes = config.num_classes;
  corpus.vocab_sizes = config.vocab_sizes;

  for (int j = 0; j < config.num_images; ++j) {
    Rng rng = Rng::stream(config.seed, 1 + static_cast<std::uint64_t>(j));
    ImageRecord image;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%04d", j);
    image.id = buf;
    image.width = config.image_width;
    image.height = config.image_height;

    if (config.balanced_labels) {
      for (int t = 0; t < config.classes_per_image; ++t)
        image.labels.push_back((j + t) % config.num_classes);
    } else {
      image.labels = detail::sample_distinct(rng, config.num_classes, config.classes_per_image);
    }
    std::sort(image.labels.begin(), image.labels.end());

    SynthImageTruth truth;
    std::vector<double> alpha(k_total, 0.0);
    for (int c : image.labels) alpha[c] = 1.0;
    for (int k = config.num_classes; k < k_total; ++k) alpha[k] = 1.0;
    std::vector<int> support;
    std::vector<double> alpha_sub;
    for (int k = 0; k < k_total; ++k)
      if (alpha[k] > 0.0) {
        support.push_back(k);
        alpha_sub.push_back(alpha[k]);
      }
    std::vector<double> theta_sub;
    rng.dirichlet(alpha_sub, &theta_sub);
    truth.theta.assign(k_total, 0.0);
    std::vector<double> theta_support(support.size());
    for (std::size_t s = 0; s < support.size(); ++s) {
      truth.theta[support[s]] = theta_sub[s];
      theta_support[s] = theta_sub[s];
    }

    std::vector<Mat2> class_cov(config.num_classes);
    std::vector<int> class_object(config.num_classes, -1);
    for (int c : image.labels) {
      PlantedObject obj;
      obj.class_id = c;
      obj.lambda = rng.wishart2(config.nw.lambda0, config.nw.nu0);
      obj.mu = rng.normal2(config.nw.mu0, obj.lambda.inverse() * (1.0 / config.nw.beta0));
      const Mat2 cov = obj.lambda.inverse();
      obj.box = detail::box_from_gaussian_cov(obj.mu, cov);
      class_cov[c] = cov;
      class_object[c] = static_cast<int>(truth.objects.size());
      truth.objects.push_back(obj);
    }

    for (int i = 0; i < config.tokens_per_image; ++i) {
      const int pick = rng.categorical(theta_support);
      const int y = support[pick];
      truth.topics.push_back(y);
      Token tok;
      if (y < config.num_classes) {
        const PlantedObject& obj = truth.objects[class_object[y]];
        Vec2 loc{};
        bool inside = false;
        for (int attempt = 0; attempt < 100; ++attempt) {
          loc = rng.normal2(obj.mu, class_cov[y]);
          if (loc.x >= 0.0 && loc.x <= 1.0 && loc.y >= 0.0 && loc.y <= 1.0) {
            inside = true;
            break;
          }
        }
        if (!inside) {
          loc.x = std::clamp(loc.x, 0.0, 1.0);
          loc.y = std::clamp(loc.y, 0.0, 1.0);
        }
        tok.loc = loc;
      } else {
        tok.loc = {rng.uniform01(), rng.uniform01()};
      }
      for (int f = 0; f < f_total; ++f) {
        const int v = config.vocab_sizes[f];
        std::vector<double> p(v);
        for (int w = 0; w < v; ++w) p[w] = gt.true_pi[f].at(y, w);
        tok.words.push_back(rng.categorical(p));
      }
      image.tokens.push_back(std::move(tok));
    }
    corpus.images.push_back(std::move(image));
    gt.images.push_back(std::move(truth));
  }

  const int n_unlabeled =
      static_cast<int>(std::lround(config.unlabeled_frac * config.num_images));
  for (int j = config.num_images - n_unlabeled; j < config.num_images; ++j)
    corpus.images[j].unlabeled = true;

  return {std::move(corpus), std::move(gt)};
}

// Planted boxes in pixel coordinates, ready for CorLoc evaluation.
inline std::vector<GroundTruthBox> ground_truth_boxes(const Corpus& corpus,
                                                      const SynthGroundTruth& gt) {
  std::vector<GroundTruthBox> boxes;
  for (std::size_t j = 0; j < corpus.images.size(); ++j) {
    const ImageRecord& image = corpus.images[j];
    for (const auto& obj : gt.images[j].objects)
      boxes.push_back({image.id, obj.class_id, obj.box.x_min * image.width,
                       obj.box.y_min * image.height, obj.box.x_max * image.width,
                       obj.box.y_max * image.height});
  }
  return boxes;
}

struct RecoveryReport {
  double token_accuracy = 0.0;  // fg topics collapsed to classes, bg pooled
  CorLocResult corloc;          // gaussian strategy against planted boxes
};

// Closes the oracle loop: how well the trained posteriors recover the
// planted topics and boxes. Only labelled images count, so SSL scenarios
// score the supervised subset.
inline RecoveryReport planted_recovery_report(const Corpus& corpus, const SynthGroundTruth& gt,
                                              const ModelConfig& config,
                                              const std::vector<ImagePosterior>& posteriors) {
  if (corpus.images.size() != gt.images.size() || corpus.images.size() != posteriors.size())
    throw ValidationError("planted_recovery_report: image count mismatch");
  long long correct = 0, total = 0;
  std::vector<Detection> detections;
  std::vector<GroundTruthBox> gt_boxes;
  for (std::size_t j = 0; j < corpus.images.size(); ++j) {
    const ImageRecord& image = corpus.images[j];
    if (image.unlabeled) continue;
    const ImagePosterior& post = posteriors[j];
    for (std::size_t i = 0; i < image.tokens.size(); ++i) {
      int best = 0;
      double best_r = -1.0;
      for (int k = 0; k < config.k(); ++k)
        if (post.resp.at(i, k) > best_r) {
          best_r = post.resp.at(i, k);
          best = k;
        }
      const int true_topic = gt.images[j].topics[i];
      const bool pred_bg = best >= config.k_fg();
      const bool true_bg = true_topic >= config.num_classes;
      const bool match =
          (pred_bg && true_bg) ||
          (!pred_bg && !true_bg && config.class_of_topic(best) == true_topic);
      correct += match ? 1 : 0;
      ++total;
    }
    for (int c : image.labels) {
      int best_topic = config.first_topic_of(c);
      double best_mass = -1.0;
      for (int t = config.first_topic_of(c); t < config.first_topic_of(c + 1); ++t) {
        double mass = 0.0;
        for (std::size_t i = 0; i < post.resp.rows(); ++i) mass += post.resp.at(i, t);
        if (mass > best_mass) {
          best_mass = mass;
          best_topic = t;
        }
      }
      detections.push_back({image.id, c, gaussian_box(post.nw[best_topic], best_mass)});
    }
    for (const auto& obj : gt.images[j].objects)
      gt_boxes.push_back({image.id, obj.class_id, obj.box.x_min, obj.box.y_min, obj.box.x_max,
                          obj.box.y_max});
  }
  RecoveryReport report;
  report.token_accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
  report.corloc = corloc(detections, gt_boxes, config.num_classes);
  return report;
}

inline void save_ground_truth(const SynthGroundTruth& gt, const std::string& path) {
  nlohmann::json root;
  root["format_version"] = kFormatVersion;
  root["true_pi"] = nlohmann::json::array();
  for (const auto& pi : gt.true_pi) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t k = 0; k < pi.rows(); ++k) {
      std::vector<double> row(pi.row(k), pi.row(k) + pi.cols());
      rows.push_back(row);
    }
    root["true_pi"].push_back(std::move(rows));
  }
  root["images"] = nlohmann::json::array();
  for (const auto& im : gt.images) {
    nlohmann::json jim;
    jim["theta"] = im.theta;
    jim["topics"] = im.topics;
    jim["objects"] = nlohmann::json::array();
    for (const auto& obj : im.objects) {
      const Mat2 cov = obj.lambda.inverse();
      jim["objects"].push_back(
          {{"class_id", obj.class_id},
           {"mu", {obj.mu.x, obj.mu.y}},
           {"sigma", {{cov.a00, cov.a01}, {cov.a10, cov.a11}}},
           {"box", {obj.box.x_min, obj.box.y_min, obj.box.x_max, obj.box.y_max}}});
    }
    root["images"].push_back(std::move(jim));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ground truth: " + path);
  out << root.dump(2) << "\n";
  if (!out) throw IoError("failed writing ground truth: " + path);
}

inline SynthGroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth: " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  SynthGroundTruth gt;
  try {
    for (const auto& jpi : root.at("true_pi")) {
      const std::size_t rows = jpi.size();
      const std::size_t cols = rows > 0 ? jpi.at(0).size() : 0;
      Matrix pi(rows, cols);
      for (std::size_t k = 0; k < rows; ++k)
        for (std::size_t v = 0; v < cols; ++v) pi.at(k, v) = jpi.at(k).at(v).get<double>();
      gt.true_pi.push_back(std::move(pi));
    }
    for (const auto& jim : root.at("images")) {
      SynthImageTruth im;
      im.theta = jim.at("theta").get<std::vector<double>>();
      im.topics = jim.at("topics").get<std::vector<int>>();
      for (const auto& jobj : jim.at("objects")) {
        PlantedObject obj;
        obj.class_id = jobj.at("class_id").get<int>();
        obj.mu = {jobj.at("mu").at(0).get<double>(), jobj.at("mu").at(1).get<double>()};
        const Mat2 cov{jobj.at("sigma").at(0).at(0).get<double>(),
                       jobj.at("sigma").at(0).at(1).get<double>(),
                       jobj.at("sigma").at(1).at(0).get<double>(),
                       jobj.at("sigma").at(1).at(1).get<double>()};
        obj.lambda = cov.inverse();
        obj.box = {jobj.at("box").at(0).get<double>(), jobj.at("box").at(1).get<double>(),
                   jobj.at("box").at(2).get<double>(), jobj.at("box").at(3).get<double>(), 0.0};
        im.objects.push_back(obj);
      }
      gt.images.push_back(std::move(im));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return gt;
}

}  // namespace topicloc
