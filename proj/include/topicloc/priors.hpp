#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "topicloc/corpus.hpp"
#include "topicloc/model.hpp"
#include "topicloc/rng.hpp"

namespace topicloc {

enum class PriorMode { kUniform, kDataDriven, kTransferred };

inline std::string to_string(PriorMode m) {
  switch (m) {
    case PriorMode::kUniform: return "uniform";
    case PriorMode::kDataDriven: return "data_driven";
    case PriorMode::kTransferred: return "transferred";
  }
  throw ValidationError("unknown prior mode");
}

inline PriorMode prior_mode_from_string(const std::string& s) {
  if (s == "uniform") return PriorMode::kUniform;
  if (s == "data_driven") return PriorMode::kDataDriven;
  if (s == "transferred") return PriorMode::kTransferred;
  throw ValidationError("unknown prior mode: " + s);
}

struct PriorConfig {
  double epsilon = 0.01;
  PriorMode mode = PriorMode::kDataDriven;
  // Average the class-conditional histogram sum over the number of classes
  // rather than the number of images containing the class.
  bool saliency_norm_by_classes = false;
  // When > 0, each data-driven fg row is rescaled so its mean entry equals
  // strength, i.e. the same total pseudo-count as a flat bg row of that
  // value. At 0 the raw saliency scale is kept; built from normalized
  // histograms it carries well under one pseudo-count per word, so fg topics
  // start far weaker than bg and rarely attract any tokens.
  double strength = 0.0;

  void validate() const {
    if (!(epsilon > 0.0)) throw ValidationError("PriorConfig: epsilon must be > 0");
    if (strength < 0.0) throw ValidationError("PriorConfig: strength must be >= 0");
  }
};

// L1-normalized word histogram of one image's tokens on one channel, so
// images with different token counts contribute equally to the prior.
inline std::vector<double> histogram(const std::vector<Token>& tokens, int channel,
                                     int vocab_size) {
  std::vector<double> h(vocab_size, 0.0);
  for (const auto& tok : tokens) h[tok.words[channel]] += 1.0;
  if (!tokens.empty()) {
    const double n = static_cast<double>(tokens.size());
    for (double& v : h) v /= n;
  }
  return h;
}

// Saliency prior for one class and channel: the positive part of the mean
// histogram over images labelled with the class minus the mean over all
// images, plus epsilon.
inline std::vector<double> data_driven_prior(const Corpus& corpus, int class_id, int channel,
                                             double epsilon, bool saliency_norm_by_classes = false) {
  if (!(epsilon > 0.0)) throw ValidationError("data_driven_prior: epsilon must be > 0");
  const int v = corpus.vocab_sizes[channel];
  std::vector<double> mean_all(v, 0.0), mean_class(v, 0.0);
  int class_count = 0;
  for (const auto& image : corpus.images) {
    const std::vector<double> h = histogram(image.tokens, channel, v);
    for (int i = 0; i < v; ++i) mean_all[i] += h[i];
    if (!image.unlabeled &&
        std::find(image.labels.begin(), image.labels.end(), class_id) != image.labels.end()) {
      ++class_count;
      for (int i = 0; i < v; ++i) mean_class[i] += h[i];
    }
  }
  if (class_count == 0)
    throw ValidationError("data_driven_prior: no image is labelled with class " +
                          std::to_string(class_id));
  const double class_denom = saliency_norm_by_classes
                                 ? static_cast<double>(corpus.num_classes)
                                 : static_cast<double>(class_count);
  std::vector<double> prior(v);
  for (int i = 0; i < v; ++i) {
    const double diff =
        mean_class[i] / class_denom - mean_all[i] / static_cast<double>(corpus.images.size());
    prior[i] = std::max(diff, 0.0) + epsilon;
  }
  return prior;
}

// Assemble the full K x V_f prior table: fg topics from the saliency prior
// (or flat ones), bg topics always flat ones. With several topics per class
// each sibling gets an independent sub-1e-3 additive perturbation keyed to
// the config seed, so siblings can specialise.
inline AppearanceTable build_all_priors(const Corpus& corpus, const ModelConfig& config,
                                        const PriorConfig& prior_config = {}) {
  config.validate();
  prior_config.validate();
  if (prior_config.mode == PriorMode::kTransferred)
    throw ValidationError(
        "build_all_priors: transferred priors come from export_posterior_as_prior");
  if (corpus.vocab_sizes != config.vocab_sizes)
    throw ValidationError("build_all_priors: corpus vocab_sizes do not match config");
  if (corpus.num_classes != config.num_classes)
    throw ValidationError("build_all_priors: corpus num_classes does not match config");

  AppearanceTable table = AppearanceTable::filled(config.k(), config.vocab_sizes, 1.0);
  if (prior_config.mode == PriorMode::kUniform) return table;

  for (int f = 0; f < config.num_channels(); ++f)
    for (int c = 0; c < config.num_classes; ++c) {
      std::vector<double> row =
          data_driven_prior(corpus, c, f, prior_config.epsilon, prior_config.saliency_norm_by_classes);
      if (prior_config.strength > 0.0) {
        double sum = 0.0;
        for (double x : row) sum += x;
        const double scale = prior_config.strength * static_cast<double>(row.size()) / sum;
        for (double& x : row) x *= scale;
      }
      for (int p = 0; p < config.topics_per_class; ++p) {
        const int t = config.first_topic_of(c) + p;
        for (int v = 0; v < config.vocab_sizes[f]; ++v) table.channels[f].at(t, v) = row[v];
      }
    }

  if (config.topics_per_class > 1) {
    for (int t = 0; t < config.k_fg(); ++t) {
      Rng rng = Rng::stream(config.seed, (1u << 20) + static_cast<std::uint64_t>(t));
      for (int f = 0; f < config.num_channels(); ++f)
        for (int v = 0; v < config.vocab_sizes[f]; ++v)
          table.channels[f].at(t, v) += rng.uniform(0.0, 1e-3);
    }
  }
  return table;
}

struct TransferOptions {
  double tau = 1.0;
  bool transfer_bg = true;
  // source-name -> target-name pairs; empty means classes match by name.
  std::vector<std::pair<std::string, std::string>> name_map;
};

// Cross-domain transfer: the source model's appearance posterior becomes the
// target prior, matched class-by-class through names. Background rows copy
// positionally (padded with flat ones if the target has more bg topics);
// tau rescales all transferred pseudo-counts.
inline AppearanceTable export_posterior_as_prior(const Model& source,
                                                 const ModelConfig& target_config,
                                                 const std::vector<std::string>& target_names,
                                                 const TransferOptions& opts = {}) {
  target_config.validate();
  if (!(opts.tau > 0.0))
    throw ValidationError("export_posterior_as_prior: tau must be > 0");
  if (source.config.vocab_sizes != target_config.vocab_sizes)
    throw ValidationError("export_posterior_as_prior: vocabulary sizes do not match");
  if (source.config.topics_per_class != target_config.topics_per_class)
    throw ValidationError("export_posterior_as_prior: topics_per_class does not match");
  if (static_cast<int>(target_names.size()) != target_config.num_classes)
    throw ValidationError("export_posterior_as_prior: target name count mismatch");

  std::vector<int> source_class(target_config.num_classes, -1);
  std::vector<std::string> unmatched;
  for (int c = 0; c < target_config.num_classes; ++c) {
    std::string source_name = target_names[c];
    for (const auto& [src, tgt] : opts.name_map)
      if (tgt == target_names[c]) {
        source_name = src;
        break;
      }
    const auto it = std::find(source.class_names.begin(), source.class_names.end(), source_name);
    if (it == source.class_names.end())
      unmatched.push_back(target_names[c]);
    else
      source_class[c] = static_cast<int>(it - source.class_names.begin());
  }
  if (!unmatched.empty()) {
    std::string msg = "export_posterior_as_prior: unmatched target classes:";
    for (const auto& n : unmatched) msg += " " + n;
    throw ValidationError(msg);
  }

  AppearanceTable table =
      AppearanceTable::filled(target_config.k(), target_config.vocab_sizes, 1.0);
  const int tpc = target_config.topics_per_class;
  for (int f = 0; f < target_config.num_channels(); ++f) {
    const Matrix& src = source.posterior.channels[f];
    Matrix& dst = table.channels[f];
    for (int c = 0; c < target_config.num_classes; ++c)
      for (int p = 0; p < tpc; ++p) {
        const int t_dst = target_config.first_topic_of(c) + p;
        const int t_src = source.config.first_topic_of(source_class[c]) + p;
        for (int v = 0; v < target_config.vocab_sizes[f]; ++v)
          dst.at(t_dst, v) = opts.tau * src.at(t_src, v);
      }
    if (opts.transfer_bg) {
      const int shared_bg = std::min(source.config.k_bg, target_config.k_bg);
      for (int b = 0; b < shared_bg; ++b) {
        const int t_dst = target_config.k_fg() + b;
        const int t_src = source.config.k_fg() + b;
        for (int v = 0; v < target_config.vocab_sizes[f]; ++v)
          dst.at(t_dst, v) = opts.tau * src.at(t_src, v);
      }
    }
  }
  return table;
}

// Two-column CSV "source_name,target_name", one pair per line; a '#' in
// column one starts a comment.
inline std::vector<std::pair<std::string, std::string>> load_class_name_map(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open class-name map: " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected source,target");
    pairs.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return pairs;
}

}  // namespace topicloc
