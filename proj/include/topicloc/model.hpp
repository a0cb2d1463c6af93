#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicloc/common.hpp"
#include "topicloc/corpus.hpp"
#include "topicloc/linalg.hpp"

namespace topicloc {

// Per-token location score used inside the responsibility update. The
// student-t predictive integrates the Normal-Wishart posterior out; the
// expected-log-Gaussian is the exact message of the mean-field factorization
// and is the only one with a coordinate-ascent guarantee on the bound, so it
// is the training default (student-t stays available and is the closed-form
// predictive used by localisation-time scoring if selected).
enum class LocationScore { kStudentT, kExpectedLogGaussian };

inline std::string to_string(LocationScore s) {
  return s == LocationScore::kStudentT ? "student_t" : "expected_log_gaussian";
}

inline LocationScore location_score_from_string(const std::string& s) {
  if (s == "student_t") return LocationScore::kStudentT;
  if (s == "expected_log_gaussian") return LocationScore::kExpectedLogGaussian;
  throw ValidationError("unknown location score '" + s + "'");
}

struct ModelConfig {
  int num_classes = 0;
  int topics_per_class = 1;
  int k_bg = 20;
  std::vector<int> vocab_sizes;
  int iterations = 100;
  double elbo_tolerance = 0.0;  // 0 means a fixed number of iterations
  std::uint64_t seed = 0;
  double similarity_weight = 1.0;
  double ssl_alpha = 0.1;
  LocationScore location_score = LocationScore::kExpectedLogGaussian;

  int k_fg() const { return num_classes * topics_per_class; }
  int k() const { return k_fg() + k_bg; }
  int num_channels() const { return static_cast<int>(vocab_sizes.size()); }
  int class_of_topic(int topic) const { return topic / topics_per_class; }
  int first_topic_of(int class_id) const { return class_id * topics_per_class; }

  void validate() const {
    if (num_classes < 1) throw ValidationError("config: num_classes must be >= 1");
    if (topics_per_class < 1) throw ValidationError("config: topics_per_class must be >= 1");
    if (k_bg < 1) throw ValidationError("config: k_bg must be >= 1");
    if (iterations < 1) throw ValidationError("config: iterations must be >= 1");
    if (vocab_sizes.empty()) throw ValidationError("config: vocab_sizes must be non-empty");
    if (!(ssl_alpha > 0.0)) throw ValidationError("config: ssl_alpha must be > 0");
    if (similarity_weight < 0.0)
      throw ValidationError("config: similarity_weight must be >= 0");
  }
};

// Normal-Wishart location prior over (mu, Lambda); lambda0 is the Wishart
// scale matrix. Defaults: image centre, sigma of half the unit extent.
struct LocationPrior {
  Vec2 mu0{0.5, 0.5};
  Mat2 lambda0 = Mat2::diag(4.0, 4.0);
  double beta0 = 1.0;
  double nu0 = 5.0;

  void validate() const {
    if (!lambda0.is_pd()) throw ValidationError("location prior: lambda0 must be PD");
    if (!(beta0 > 0.0)) throw ValidationError("location prior: beta0 must be > 0");
    if (!(nu0 > 1.0)) throw ValidationError("location prior: nu0 must be > 1");
  }
};

// Posterior Normal-Wishart statistics for one (image, fg topic) pair.
// w is the Wishart scale matrix.
struct NWStats {
  Vec2 mu{0.5, 0.5};
  Mat2 w = Mat2::identity();
  double beta = 1.0;
  double nu = 3.0;
};

inline NWStats prior_stats(const LocationPrior& p) {
  return {p.mu0, p.lambda0, p.beta0, p.nu0};
}

// Dirichlet parameter table: one K x V_f block per feature channel. Used
// both for the prior pi0 and the posterior pseudo-counts.
struct AppearanceTable {
  std::vector<Matrix> channels;

  int num_channels() const { return static_cast<int>(channels.size()); }
  bool operator==(const AppearanceTable&) const = default;

  static AppearanceTable filled(int k, const std::vector<int>& vocab_sizes, double v) {
    AppearanceTable t;
    for (int vs : vocab_sizes) t.channels.emplace_back(k, vs, v);
    return t;
  }
};

struct ImagePosterior {
  std::vector<double> theta;  // K
  Matrix resp;                // N x K, rows sum to 1
  std::vector<NWStats> nw;    // one per fg topic
};

struct Model {
  int version = kFormatVersion;
  ModelConfig config;
  std::vector<std::string> class_names;
  AppearanceTable prior;      // pi0, the assembled pseudo-count table
  AppearanceTable posterior;  // pi tilde
  LocationPrior location_prior;
};

inline std::vector<std::string> default_class_names(int c) {
  std::vector<std::string> names;
  for (int i = 0; i < c; ++i) names.push_back("class_" + std::to_string(i));
  return names;
}

namespace detail {

inline nlohmann::json mat2_to_json(const Mat2& m) {
  return nlohmann::json::array({{m.a00, m.a01}, {m.a10, m.a11}});
}

inline Mat2 mat2_from_json(const nlohmann::json& j) {
  return {j.at(0).at(0).get<double>(), j.at(0).at(1).get<double>(),
          j.at(1).at(0).get<double>(), j.at(1).at(1).get<double>()};
}

inline nlohmann::json table_to_json(const AppearanceTable& t) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& ch : t.channels) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < ch.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t c = 0; c < ch.cols(); ++c) row.push_back(ch.at(r, c));
      rows.push_back(std::move(row));
    }
    out.push_back(std::move(rows));
  }
  return out;
}

inline AppearanceTable table_from_json(const nlohmann::json& j) {
  AppearanceTable t;
  for (const auto& rows : j) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.at(0).size() : 0;
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t k = 0; k < c; ++k) m.at(i, k) = rows.at(i).at(k).get<double>();
    t.channels.push_back(std::move(m));
  }
  return t;
}

}  // namespace detail

inline void save_model(const Model& m, const std::string& path) {
  nlohmann::json j{
      {"version", m.version},
      {"config",
       {{"num_classes", m.config.num_classes},
        {"topics_per_class", m.config.topics_per_class},
        {"k_bg", m.config.k_bg},
        {"vocab_sizes", m.config.vocab_sizes},
        {"iterations", m.config.iterations},
        {"elbo_tolerance", m.config.elbo_tolerance},
        {"seed", m.config.seed},
        {"similarity_weight", m.config.similarity_weight},
        {"ssl_alpha", m.config.ssl_alpha},
        {"location_score", to_string(m.config.location_score)}}},
      {"class_names", m.class_names},
      {"appearance_prior", detail::table_to_json(m.prior)},
      {"appearance_posterior", detail::table_to_json(m.posterior)},
      {"location_prior",
       {{"mu0", {m.location_prior.mu0.x, m.location_prior.mu0.y}},
        {"lambda0", detail::mat2_to_json(m.location_prior.lambda0)},
        {"beta0", m.location_prior.beta0},
        {"nu0", m.location_prior.nu0}}},
  };
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed while writing model: " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    Model m;
    m.version = j.at("version").get<int>();
    if (m.version != kFormatVersion)
      throw ValidationError(path + ": unsupported model version " +
                            std::to_string(m.version));
    const auto& jc = j.at("config");
    m.config.num_classes = jc.at("num_classes").get<int>();
    m.config.topics_per_class = jc.at("topics_per_class").get<int>();
    m.config.k_bg = jc.at("k_bg").get<int>();
    m.config.vocab_sizes = jc.at("vocab_sizes").get<std::vector<int>>();
    m.config.iterations = jc.at("iterations").get<int>();
    m.config.elbo_tolerance = jc.at("elbo_tolerance").get<double>();
    m.config.seed = jc.at("seed").get<std::uint64_t>();
    m.config.similarity_weight = jc.at("similarity_weight").get<double>();
    m.config.ssl_alpha = jc.at("ssl_alpha").get<double>();
    m.config.location_score =
        location_score_from_string(jc.at("location_score").get<std::string>());
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.prior = detail::table_from_json(j.at("appearance_prior"));
    m.posterior = detail::table_from_json(j.at("appearance_posterior"));
    const auto& jl = j.at("location_prior");
    m.location_prior.mu0 = {jl.at("mu0").at(0).get<double>(),
                            jl.at("mu0").at(1).get<double>()};
    m.location_prior.lambda0 = detail::mat2_from_json(jl.at("lambda0"));
    m.location_prior.beta0 = jl.at("beta0").get<double>();
    m.location_prior.nu0 = jl.at("nu0").get<double>();

    m.config.validate();
    m.location_prior.validate();
    if (static_cast<int>(m.class_names.size()) != m.config.num_classes)
      throw ValidationError(path + ": class_names size does not match num_classes");
    if (m.prior.num_channels() != m.config.num_channels() ||
        m.posterior.num_channels() != m.config.num_channels())
      throw ValidationError(path + ": appearance table channel count mismatch");
    for (int f = 0; f < m.config.num_channels(); ++f) {
      if (static_cast<int>(m.prior.channels[f].rows()) != m.config.k() ||
          static_cast<int>(m.prior.channels[f].cols()) != m.config.vocab_sizes[f] ||
          static_cast<int>(m.posterior.channels[f].rows()) != m.config.k() ||
          static_cast<int>(m.posterior.channels[f].cols()) != m.config.vocab_sizes[f])
        throw ValidationError(path + ": appearance table shape mismatch on channel " +
                              std::to_string(f));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace topicloc
