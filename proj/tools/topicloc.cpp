// Command-line front end: synthetic corpus generation, training,
// localisation, CorLoc evaluation, and track smoothing.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "topicloc/corpus.hpp"
#include "topicloc/inference.hpp"
#include "topicloc/localise.hpp"
#include "topicloc/model.hpp"
#include "topicloc/priors.hpp"
#include "topicloc/synth.hpp"
#include "topicloc/video.hpp"

namespace {

using nlohmann::json;
using namespace topicloc;

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  long long ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Every command drops a manifest next to its primary output so runs can be
// audited and reproduced.
void write_manifest(const std::string& primary_output, const std::string& command,
                    std::uint64_t seed, const json& config, const json& inputs,
                    const json& outputs, long long wall_ms) {
  json m{{"command", command},     {"tool_version", kToolVersion},
         {"format_version", kFormatVersion}, {"seed", seed},
         {"config", config},       {"inputs", inputs},
         {"outputs", outputs},     {"wall_time_ms", wall_ms}};
  const std::string path = primary_output + ".manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << m.dump(2) << "\n";
  if (!out) throw IoError("failed writing manifest: " + path);
}

std::string strip_extension(const std::string& path) {
  const std::filesystem::path p(path);
  return (p.parent_path() / p.stem()).string();
}

json load_json_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw topicloc::ParseError(path + ": " + e.what());
  }
  return j;
}

// Precedence CLI > config file > defaults: a file value only lands when the
// flag was not given on the command line.
template <typename T>
void maybe_from_file(const json& cfg, const char* key, const CLI::Option* opt, T* value) {
  if (opt != nullptr && opt->count() > 0) return;
  if (cfg.contains(key)) *value = cfg.at(key).get<T>();
}

// Per-image detections against a trained model, pixel coordinates. Images
// without usable labels (unlabeled without force_all) produce no rows.
std::vector<Detection> detect_all(const Model& model, const Corpus& corpus,
                                  const std::vector<ImagePosterior>& posteriors,
                                  Strategy strategy, const LocaliseOptions& opts,
                                  bool force_all) {
  std::vector<Detection> detections;
  for (std::size_t j = 0; j < corpus.images.size(); ++j) {
    const ImageRecord& image = corpus.images[j];
    std::vector<int> classes;
    if (force_all) {
      classes.resize(model.config.num_classes);
      for (int c = 0; c < model.config.num_classes; ++c) classes[c] = c;
    } else if (!image.unlabeled) {
      classes = image.labels;
    }
    for (int c : classes) {
      const auto boxes = localise_image(model, posteriors[j], image, strategy, c, opts);
      for (const auto& box : boxes)
        detections.push_back({image.id, c, to_pixels(box, image.width, image.height)});
    }
  }
  return detections;
}

std::vector<ImagePosterior> infer_corpus(const Model& model, const Corpus& corpus,
                                         bool force_all, int threads) {
  std::vector<ImagePosterior> posteriors(corpus.images.size());
  detail::parallel_for(static_cast<int>(corpus.images.size()), threads, [&](int j) {
    ImageRecord image = corpus.images[j];
    if (force_all) {
      image.unlabeled = false;
      image.labels.resize(model.config.num_classes);
      for (int c = 0; c < model.config.num_classes; ++c) image.labels[c] = c;
    }
    posteriors[j] = infer_image(model, image, make_alpha(image, model.config));
  });
  return posteriors;
}

json model_config_json(const ModelConfig& c) {
  return json{{"num_classes", c.num_classes},
              {"topics_per_class", c.topics_per_class},
              {"k_bg", c.k_bg},
              {"vocab_sizes", c.vocab_sizes},
              {"iterations", c.iterations},
              {"elbo_tolerance", c.elbo_tolerance},
              {"seed", c.seed},
              {"similarity_weight", c.similarity_weight},
              {"ssl_alpha", c.ssl_alpha},
              {"location_score", to_string(c.location_score)}};
}

int cmd_synth(const std::string& config_path, const json& cli_cfg, const std::string& out_path) {
  Stopwatch timer;
  SynthConfig config;
  json file_cfg;
  if (!config_path.empty()) file_cfg = load_json_config(config_path);
  // file first, then CLI overrides baked into cli_cfg by the caller
  for (const json* src : {const_cast<const json*>(&file_cfg), &cli_cfg}) {
    const json& c = *src;
    if (c.contains("images")) config.num_images = c.at("images").get<int>();
    if (c.contains("tokens")) config.tokens_per_image = c.at("tokens").get<int>();
    if (c.contains("classes")) config.num_classes = c.at("classes").get<int>();
    if (c.contains("k_bg")) config.k_bg = c.at("k_bg").get<int>();
    if (c.contains("vocab_sizes")) config.vocab_sizes = c.at("vocab_sizes").get<std::vector<int>>();
    if (c.contains("concentrations"))
      config.concentrations = c.at("concentrations").get<std::vector<double>>();
    if (c.contains("classes_per_image"))
      config.classes_per_image = c.at("classes_per_image").get<int>();
    if (c.contains("balanced_labels")) config.balanced_labels = c.at("balanced_labels").get<bool>();
    if (c.contains("unlabeled_frac")) config.unlabeled_frac = c.at("unlabeled_frac").get<double>();
    if (c.contains("appearance_overlap"))
      config.appearance_overlap = c.at("appearance_overlap").get<double>();
    if (c.contains("image_width")) config.image_width = c.at("image_width").get<int>();
    if (c.contains("image_height")) config.image_height = c.at("image_height").get<int>();
    if (c.contains("seed")) config.seed = c.at("seed").get<std::uint64_t>();
  }

  auto [corpus, gt] = sample_corpus(config);
  save_corpus(corpus, out_path);
  const std::string base = strip_extension(out_path);
  const std::string gt_path = base + ".gt.json";
  const std::string boxes_path = base + ".gt_boxes.csv";
  save_ground_truth(gt, gt_path);
  {
    const auto boxes = ground_truth_boxes(corpus, gt);
    std::ofstream out(boxes_path);
    if (!out) throw IoError("cannot write ground-truth boxes: " + boxes_path);
    out << "image_id,class_id,x_min,y_min,x_max,y_max\n";
    out.precision(17);
    for (const auto& b : boxes)
      out << b.image_id << "," << b.class_id << "," << b.x_min << "," << b.y_min << ","
          << b.x_max << "," << b.y_max << "\n";
  }

  json cfg{{"images", config.num_images},
           {"tokens", config.tokens_per_image},
           {"classes", config.num_classes},
           {"k_bg", config.k_bg},
           {"vocab_sizes", config.vocab_sizes},
           {"concentrations", config.concentrations},
           {"classes_per_image", config.classes_per_image},
           {"balanced_labels", config.balanced_labels},
           {"unlabeled_frac", config.unlabeled_frac},
           {"appearance_overlap", config.appearance_overlap},
           {"image_width", config.image_width},
           {"image_height", config.image_height},
           {"seed", config.seed}};
  write_manifest(out_path, "synth", config.seed, cfg,
                 json{{"config", config_path}},
                 json{{"corpus", out_path}, {"ground_truth", gt_path}, {"gt_boxes", boxes_path}},
                 timer.ms());
  std::cout << "images\ttokens\tclasses\tout\n"
            << config.num_images << "\t" << config.tokens_per_image << "\t"
            << config.num_classes << "\t" << out_path << "\n";
  return 0;
}

struct TrainCli {
  std::string corpus_path;
  std::string out_path;
  std::string config_path;
  std::string prior = "data";
  std::string similarity_path;
  std::string name_map_path;
  int topics_per_class = 1;
  int k_bg = 20;
  int iterations = 100;
  double elbo_tolerance = 0.0;
  std::uint64_t seed = 0;
  double similarity_weight = 1.0;
  double ssl_alpha = 0.1;
  std::string location_score = "expected_log_gaussian";
  double epsilon = 0.01;
  bool saliency_norm_by_classes = false;
  double prior_strength = 0.0;
  double tau = 1.0;
  bool no_transfer_bg = false;
  bool ssl = false;
  int m_step_period = 5;
  int threads = 1;
};

int cmd_train(const TrainCli& cli, const std::vector<const CLI::Option*>& file_overridable,
              const std::vector<const char*>& file_keys) {
  Stopwatch timer;
  TrainCli opts = cli;
  if (!opts.config_path.empty()) {
    const json cfg = load_json_config(opts.config_path);
    std::size_t i = 0;
    auto apply = [&](auto* field) {
      const CLI::Option* opt = file_overridable[i];
      const char* key = file_keys[i];
      ++i;
      maybe_from_file(cfg, key, opt, field);
    };
    apply(&opts.topics_per_class);
    apply(&opts.k_bg);
    apply(&opts.iterations);
    apply(&opts.elbo_tolerance);
    apply(&opts.seed);
    apply(&opts.similarity_weight);
    apply(&opts.ssl_alpha);
    apply(&opts.location_score);
    apply(&opts.epsilon);
    apply(&opts.prior_strength);
    apply(&opts.tau);
    apply(&opts.m_step_period);
    apply(&opts.prior);
  }

  Corpus corpus = load_corpus(opts.corpus_path);
  if (!opts.ssl) {
    std::vector<ImageRecord> kept;
    for (auto& im : corpus.images)
      if (!im.unlabeled) kept.push_back(std::move(im));
    corpus.images = std::move(kept);
  }
  if (corpus.images.empty())
    throw ValidationError("train: corpus has no usable images (all unlabeled without --ssl?)");

  ModelConfig config;
  config.num_classes = corpus.num_classes;
  config.vocab_sizes = corpus.vocab_sizes;
  config.topics_per_class = opts.topics_per_class;
  config.k_bg = opts.k_bg;
  config.iterations = opts.iterations;
  config.elbo_tolerance = opts.elbo_tolerance;
  config.seed = opts.seed;
  config.similarity_weight = opts.similarity_weight;
  config.ssl_alpha = opts.ssl_alpha;
  config.location_score = location_score_from_string(opts.location_score);

  const LocationPrior loc_prior;
  AppearanceTable prior;
  std::vector<std::string> class_names = default_class_names(config.num_classes);
  if (opts.prior == "uniform") {
    PriorConfig pc;
    pc.mode = PriorMode::kUniform;
    prior = build_all_priors(corpus, config, pc);
  } else if (opts.prior == "data") {
    PriorConfig pc;
    pc.mode = PriorMode::kDataDriven;
    pc.epsilon = opts.epsilon;
    pc.saliency_norm_by_classes = opts.saliency_norm_by_classes;
    pc.strength = opts.prior_strength;
    prior = build_all_priors(corpus, config, pc);
  } else {
    const Model source = load_model(opts.prior);
    TransferOptions to;
    to.tau = opts.tau;
    to.transfer_bg = !opts.no_transfer_bg;
    if (!opts.name_map_path.empty()) to.name_map = load_class_name_map(opts.name_map_path);
    prior = export_posterior_as_prior(source, config, class_names, to);
  }

  TrainOptions train_opts;
  train_opts.threads = opts.threads;
  train_opts.m_step_period = opts.m_step_period;
  if (!opts.similarity_path.empty()) {
    train_opts.use_similarity = true;
    train_opts.similarity = load_similarity_matrix(opts.similarity_path, config.num_classes);
  }

  TrainResult result = train(corpus, config, prior, loc_prior, train_opts);
  result.model.class_names = class_names;
  save_model(result.model, opts.out_path);

  const std::string base = strip_extension(opts.out_path);
  const std::string elbo_path = base + ".elbo.csv";
  {
    std::ofstream out(elbo_path);
    if (!out) throw IoError("cannot write ELBO trace: " + elbo_path);
    out << "sweep,elbo\n";
    out.precision(17);
    for (std::size_t s = 0; s < result.elbo_trace.size(); ++s)
      out << s << "," << result.elbo_trace[s] << "\n";
  }

  const std::string det_g = base + ".detections-gaussian.csv";
  const std::string det_s = base + ".detections-sampling.csv";
  save_detections(
      detect_all(result.model, corpus, result.posteriors, Strategy::kGaussian, {}, false), det_g);
  save_detections(
      detect_all(result.model, corpus, result.posteriors, Strategy::kSampling, {}, false), det_s);

  json cfg = model_config_json(config);
  cfg["prior"] = opts.prior;
  cfg["epsilon"] = opts.epsilon;
  cfg["saliency_norm_by_classes"] = opts.saliency_norm_by_classes;
  cfg["prior_strength"] = opts.prior_strength;
  cfg["tau"] = opts.tau;
  cfg["transfer_bg"] = !opts.no_transfer_bg;
  cfg["ssl"] = opts.ssl;
  cfg["m_step_period"] = opts.m_step_period;
  cfg["similarity"] = opts.similarity_path;
  write_manifest(opts.out_path, "train", config.seed, cfg,
                 json{{"corpus", opts.corpus_path},
                      {"config", opts.config_path},
                      {"similarity", opts.similarity_path},
                      {"name_map", opts.name_map_path}},
                 json{{"model", opts.out_path},
                      {"elbo_trace", elbo_path},
                      {"detections_gaussian", det_g},
                      {"detections_sampling", det_s}},
                 timer.ms());

  std::cout << "images\tsweeps\tfinal_elbo\tmodel\n"
            << corpus.images.size() << "\t" << result.elbo_trace.size() << "\t"
            << (result.elbo_trace.empty() ? 0.0 : result.elbo_trace.back()) << "\t"
            << opts.out_path << "\n";
  return 0;
}

int cmd_localise(const std::string& model_path, const std::string& corpus_path,
                 const std::string& out_path, const std::string& strategy_name,
                 const std::string& heatmaps_dir, bool force_all, int grid, double threshold,
                 double nms, int threads) {
  Stopwatch timer;
  const Model model = load_model(model_path);
  const Corpus corpus = load_corpus(corpus_path);
  if (corpus.num_classes != model.config.num_classes ||
      corpus.vocab_sizes != model.config.vocab_sizes)
    throw ValidationError("localise: corpus shape does not match model");
  const Strategy strategy = strategy_from_string(strategy_name);
  LocaliseOptions opts;
  opts.grid_cells = grid;
  opts.threshold_frac = threshold;
  opts.nms_iou = nms;

  const auto posteriors = infer_corpus(model, corpus, force_all, threads);
  const auto detections = detect_all(model, corpus, posteriors, strategy, opts, force_all);
  save_detections(detections, out_path);

  if (!heatmaps_dir.empty()) {
    std::filesystem::create_directories(heatmaps_dir);
    for (std::size_t j = 0; j < corpus.images.size(); ++j) {
      const ImageRecord& image = corpus.images[j];
      std::vector<int> classes;
      if (force_all) {
        classes.resize(model.config.num_classes);
        for (int c = 0; c < model.config.num_classes; ++c) classes[c] = c;
      } else if (!image.unlabeled) {
        classes = image.labels;
      }
      for (int c : classes) {
        const HeatMap hm = heat_map(image, posteriors[j].resp, model.config, c, grid);
        save_heatmap_pgm(hm, heatmaps_dir + "/" + image.id + "_class" + std::to_string(c) +
                                 ".pgm");
      }
    }
  }

  write_manifest(out_path, "localise", model.config.seed,
                 json{{"strategy", strategy_name},
                      {"grid_cells", grid},
                      {"threshold_frac", threshold},
                      {"nms_iou", nms},
                      {"force_all_classes", force_all}},
                 json{{"model", model_path}, {"corpus", corpus_path}},
                 json{{"detections", out_path}, {"heatmaps", heatmaps_dir}}, timer.ms());
  std::cout << "detections\tout\n" << detections.size() << "\t" << out_path << "\n";
  return 0;
}

std::vector<GroundTruthBox> load_gt_boxes_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth: " + path);
  std::vector<GroundTruthBox> boxes;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!saw_header) {
      if (line.rfind("image_id,", 0) != 0)
        throw topicloc::ParseError(path + ":1: expected ground-truth header");
      saw_header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6)
      throw topicloc::ParseError(path + ":" + std::to_string(line_no) + ": expected 6 fields");
    try {
      boxes.push_back({fields[0], std::stoi(fields[1]), std::stod(fields[2]),
                       std::stod(fields[3]), std::stod(fields[4]), std::stod(fields[5])});
    } catch (const std::exception&) {
      throw topicloc::ParseError(path + ":" + std::to_string(line_no) +
                                 ": malformed ground-truth row");
    }
  }
  if (!saw_header) throw topicloc::ParseError(path + ": missing header line");
  return boxes;
}

int cmd_evaluate(const std::string& detections_path, const std::string& gt_path,
                 const std::string& out_path, bool non_strict) {
  Stopwatch timer;
  const auto all = load_detections(detections_path);
  const auto gt = load_gt_boxes_csv(gt_path);

  int num_classes = 0;
  for (const auto& d : all) num_classes = std::max(num_classes, d.class_id + 1);
  for (const auto& g : gt) num_classes = std::max(num_classes, g.class_id + 1);
  if (num_classes == 0) throw ValidationError("evaluate: no detections or ground truth");

  // keep only the best-scored row per (image, class)
  std::map<std::pair<std::string, int>, Detection> best;
  for (const auto& d : all) {
    const auto key = std::make_pair(d.image_id, d.class_id);
    const auto it = best.find(key);
    if (it == best.end() || d.box.score > it->second.box.score) best[key] = d;
  }
  std::vector<Detection> detections;
  detections.reserve(best.size());
  for (const auto& [key, d] : best) detections.push_back(d);

  CorLocOptions copts;
  copts.strict = !non_strict;
  const CorLocResult result = corloc(detections, gt, num_classes, copts);

  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write CorLoc table: " + out_path);
  out << "class_id,corloc,evaluated,correct\n";
  std::cout << "class_id\tcorloc\tevaluated\tcorrect\n";
  for (int c = 0; c < num_classes; ++c) {
    if (result.evaluated[c] == 0) continue;
    out << c << "," << result.per_class[c] << "," << result.evaluated[c] << ","
        << result.correct[c] << "\n";
    std::cout << c << "\t" << result.per_class[c] << "\t" << result.evaluated[c] << "\t"
              << result.correct[c] << "\n";
  }
  out << "mean," << result.mean << ",,\n";
  std::cout << "mean\t" << result.mean << "\t\t\n";

  write_manifest(out_path, "evaluate", 0, json{{"strict", !non_strict}},
                 json{{"detections", detections_path}, {"ground_truth", gt_path}},
                 json{{"corloc", out_path}}, timer.ms());
  return 0;
}

int cmd_smooth(const std::string& track_path, const std::string& out_path, double q, double r,
               bool no_init_from_first) {
  Stopwatch timer;
  const auto track = load_track(track_path);
  const StateSpaceConfig config = StateSpaceConfig::constant_velocity(q, r);
  SmoothOptions opts;
  opts.init_from_first_obs = !no_init_from_first;
  const auto smoothed = smooth_track(track, config, opts);
  save_track(smoothed, out_path);
  write_manifest(out_path, "smooth", 0,
                 json{{"q", q}, {"r", r}, {"init_from_first_obs", opts.init_from_first_obs}},
                 json{{"track", track_path}}, json{{"smoothed", out_path}}, timer.ms());
  std::cout << "frames_in\tframes_out\tout\n"
            << track.size() << "\t" << smoothed.size() << "\t" << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian joint topic model for weakly supervised object localisation"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Sample a synthetic corpus with ground truth");
  std::string synth_config, synth_out = "corpus.jsonl";
  json synth_cli = json::object();
  synth->add_option("--config", synth_config, "JSON config file");
  synth->add_option("--out", synth_out, "Corpus output path (JSON lines)");
  int s_images = 0, s_tokens = 0, s_classes = 0, s_kbg = 0, s_cpi = 0, s_w = 0, s_h = 0;
  double s_unlab = 0, s_overlap = 0;
  std::uint64_t s_seed = 0;
  std::vector<int> s_vocab;
  std::vector<double> s_conc;
  bool s_balanced = false;
  auto* o_images = synth->add_option("--images", s_images, "Number of images");
  auto* o_tokens = synth->add_option("--tokens", s_tokens, "Tokens per image");
  auto* o_classes = synth->add_option("--classes", s_classes, "Foreground classes");
  auto* o_kbg = synth->add_option("--kbg", s_kbg, "Background topics");
  auto* o_vocab = synth->add_option("--vocab", s_vocab, "Vocabulary size per channel");
  auto* o_conc = synth->add_option("--conc", s_conc, "Dirichlet concentration per channel");
  auto* o_cpi = synth->add_option("--classes-per-image", s_cpi, "Labels per image");
  auto* o_balanced = synth->add_flag("--balanced", s_balanced, "Round-robin label assignment");
  auto* o_unlab = synth->add_option("--unlabeled-frac", s_unlab, "Fraction marked unlabeled");
  auto* o_overlap = synth->add_option("--overlap", s_overlap, "Appearance overlap in [0,1]");
  auto* o_w = synth->add_option("--width", s_w, "Image width in pixels");
  auto* o_h = synth->add_option("--height", s_h, "Image height in pixels");
  auto* o_seed = synth->add_option("--seed", s_seed, "Random seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the joint topic model on a corpus");
  TrainCli t;
  train_cmd->add_option("--corpus", t.corpus_path, "Corpus (JSON lines)")->required();
  train_cmd->add_option("--out", t.out_path, "Model output path")->required();
  train_cmd->add_option("--config", t.config_path, "JSON config file");
  auto* t_tpc = train_cmd->add_option("--topics-per-class", t.topics_per_class,
                                      "Foreground topics per class");
  auto* t_kbg = train_cmd->add_option("--kbg", t.k_bg, "Background topics");
  auto* t_iter = train_cmd->add_option("--iterations", t.iterations, "Training sweeps");
  auto* t_tol = train_cmd->add_option("--tol", t.elbo_tolerance,
                                      "Relative ELBO change for early stop (0 disables)");
  auto* t_seed = train_cmd->add_option("--seed", t.seed, "Seed (symmetry-breaking priors)");
  auto* t_lambda =
      train_cmd->add_option("--sim-lambda", t.similarity_weight, "Similarity prior weight");
  auto* t_ssl_alpha =
      train_cmd->add_option("--ssl-alpha", t.ssl_alpha, "Alpha for unlabeled images");
  auto* t_score = train_cmd
                      ->add_option("--location-score", t.location_score,
                                   "Location term: student_t or expected_log_gaussian")
                      ->check(CLI::IsMember({"student_t", "expected_log_gaussian"}));
  auto* t_eps = train_cmd->add_option("--epsilon", t.epsilon, "Data-driven prior epsilon");
  auto* t_strength = train_cmd->add_option(
      "--prior-strength", t.prior_strength,
      "Rescale each data-driven prior row to this mean pseudo-count (0 keeps the raw scale)");
  train_cmd->add_flag("--saliency-norm-by-classes", t.saliency_norm_by_classes,
                      "Average class histograms over C instead of the class image count");
  auto* t_tau = train_cmd->add_option("--tau", t.tau, "Transferred prior strength");
  train_cmd->add_flag("--no-transfer-bg", t.no_transfer_bg,
                      "Do not transfer background rows with --prior model.json");
  auto* t_period =
      train_cmd->add_option("--m-step-period", t.m_step_period, "Sweeps between prior refreshes");
  auto* t_prior = train_cmd->add_option(
      "--prior", t.prior, "Appearance prior: uniform, data, or a source model path");
  train_cmd->add_option("--similarity", t.similarity_path, "Class similarity CSV");
  train_cmd->add_option("--name-map", t.name_map_path,
                        "source_name,target_name CSV for --prior model.json");
  train_cmd->add_flag("--ssl", t.ssl, "Keep unlabeled images (semi-supervised)");
  train_cmd->add_option("--threads", t.threads, "Worker threads");

  // localise
  auto* localise_cmd = app.add_subcommand("localise", "Produce boxes for a trained model");
  std::string l_model, l_corpus, l_out = "detections.csv", l_strategy = "gaussian", l_heatmaps;
  bool l_force = false;
  int l_grid = 64, l_threads = 1;
  double l_threshold = 0.5, l_nms = 0.5;
  localise_cmd->add_option("--model", l_model, "Trained model")->required();
  localise_cmd->add_option("--corpus", l_corpus, "Corpus (JSON lines)")->required();
  localise_cmd->add_option("--out", l_out, "Detections CSV output");
  localise_cmd->add_option("--strategy", l_strategy, "gaussian or sampling")
      ->check(CLI::IsMember({"gaussian", "sampling"}));
  localise_cmd->add_option("--heatmaps", l_heatmaps, "Directory for PGM heat maps");
  localise_cmd->add_flag("--force-all-classes", l_force,
                         "Localise every class in every image, labels or not");
  localise_cmd->add_option("--grid", l_grid, "Heat-map grid cells per side");
  localise_cmd->add_option("--threshold", l_threshold, "Heat-map threshold fraction");
  localise_cmd->add_option("--nms", l_nms, "NMS IoU threshold");
  localise_cmd->add_option("--threads", l_threads, "Worker threads");

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "CorLoc of detections vs ground truth");
  std::string e_detections, e_gt, e_out = "corloc.csv";
  bool e_non_strict = false;
  evaluate_cmd->add_option("--detections", e_detections, "Detections CSV")->required();
  evaluate_cmd->add_option("--ground-truth", e_gt, "Ground-truth boxes CSV")->required();
  evaluate_cmd->add_option("--out", e_out, "Per-class CorLoc CSV output");
  evaluate_cmd->add_flag("--non-strict", e_non_strict, "Count IoU exactly 0.5 as correct");

  // smooth
  auto* smooth_cmd = app.add_subcommand("smooth", "Kalman-smooth a box track CSV");
  std::string m_track, m_out = "smoothed.csv";
  double m_q = 1e-4, m_r = 1e-3;
  bool m_no_init = false;
  smooth_cmd->add_option("--track", m_track, "Track CSV")->required();
  smooth_cmd->add_option("--out", m_out, "Smoothed track CSV output");
  smooth_cmd->add_option("--q", m_q, "Process noise variance");
  smooth_cmd->add_option("--r", m_r, "Observation noise variance");
  smooth_cmd->add_flag("--no-init-from-first", m_no_init,
                       "Keep the zero initial state instead of the first observation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      if (o_images->count()) synth_cli["images"] = s_images;
      if (o_tokens->count()) synth_cli["tokens"] = s_tokens;
      if (o_classes->count()) synth_cli["classes"] = s_classes;
      if (o_kbg->count()) synth_cli["k_bg"] = s_kbg;
      if (o_vocab->count()) synth_cli["vocab_sizes"] = s_vocab;
      if (o_conc->count()) synth_cli["concentrations"] = s_conc;
      if (o_cpi->count()) synth_cli["classes_per_image"] = s_cpi;
      if (o_balanced->count()) synth_cli["balanced_labels"] = s_balanced;
      if (o_unlab->count()) synth_cli["unlabeled_frac"] = s_unlab;
      if (o_overlap->count()) synth_cli["appearance_overlap"] = s_overlap;
      if (o_w->count()) synth_cli["image_width"] = s_w;
      if (o_h->count()) synth_cli["image_height"] = s_h;
      if (o_seed->count()) synth_cli["seed"] = s_seed;
      return cmd_synth(synth_config, synth_cli, synth_out);
    }
    if (train_cmd->parsed())
      return cmd_train(t,
                       {t_tpc, t_kbg, t_iter, t_tol, t_seed, t_lambda, t_ssl_alpha, t_score,
                        t_eps, t_strength, t_tau, t_period, t_prior},
                       {"topics_per_class", "k_bg", "iterations", "elbo_tolerance", "seed",
                        "similarity_weight", "ssl_alpha", "location_score", "epsilon",
                        "prior_strength", "tau", "m_step_period", "prior"});
    if (localise_cmd->parsed())
      return cmd_localise(l_model, l_corpus, l_out, l_strategy, l_heatmaps, l_force, l_grid,
                          l_threshold, l_nms, l_threads);
    if (evaluate_cmd->parsed()) return cmd_evaluate(e_detections, e_gt, e_out, e_non_strict);
    if (smooth_cmd->parsed()) return cmd_smooth(m_track, m_out, m_q, m_r, m_no_init);
  } catch (const topicloc::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
