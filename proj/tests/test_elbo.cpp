#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "topicloc/inference.hpp"
#include "topicloc/priors.hpp"
#include "topicloc/synth.hpp"

using topicloc::AppearanceTable;
using topicloc::Corpus;
using topicloc::ImagePosterior;
using topicloc::ImageRecord;
using topicloc::LocationPrior;
using topicloc::LocationScore;
using topicloc::ModelConfig;
using topicloc::PriorConfig;

namespace {

// Background-only corpus with a two-word vocabulary. With a single open
// topic the mean-field family contains the true posterior, so the bound must
// equal the exact marginal likelihood: a flat Dirichlet-multinomial over the
// word sequence (uniform token locations contribute log 1 = 0).
struct BgOnlySetup {
  Corpus corpus;
  ModelConfig config;
  std::vector<std::vector<double>> alphas;
  std::vector<ImagePosterior> posteriors;
  AppearanceTable pit;
  AppearanceTable pi0;
  LocationPrior loc_prior;
};

BgOnlySetup bg_only(const std::vector<int>& words) {
  BgOnlySetup s;
  s.config.num_classes = 1;
  s.config.topics_per_class = 1;
  s.config.k_bg = 1;
  s.config.vocab_sizes = {2};

  ImageRecord im;
  im.id = "im";
  im.width = im.height = 10;
  for (std::size_t i = 0; i < words.size(); ++i)
    im.tokens.push_back({{0.1 + 0.2 * i, 0.5}, {words[i]}});
  s.corpus.num_classes = 1;
  s.corpus.vocab_sizes = {2};
  s.corpus.images = {im};

  s.alphas = {topicloc::make_alpha(im, s.config)};  // fg clamped, bg open
  ImagePosterior post;
  post.resp = topicloc::Matrix(words.size(), 2);
  for (std::size_t i = 0; i < words.size(); ++i) post.resp.at(i, 1) = 1.0;
  post.theta = topicloc::update_theta_stats(s.alphas[0], post.resp);
  post.nw.assign(1, topicloc::prior_stats(s.loc_prior));
  s.posteriors = {post};

  s.pi0 = AppearanceTable::filled(2, s.corpus.vocab_sizes, 1.0);
  s.pit = topicloc::update_appearance_stats(s.corpus, s.posteriors, s.pi0);
  return s;
}

double exact_log_evidence(const std::vector<int>& words) {
  // integral of prod_i Cat(w_i | pi) over Dir(pi | 1, 1).
  int n0 = 0, n1 = 0;
  for (int w : words) (w == 0 ? n0 : n1)++;
  return std::lgamma(1.0 + n0) + std::lgamma(1.0 + n1) + std::lgamma(2.0) -
         std::lgamma(2.0 + n0 + n1);
}

}  // namespace

TEST_CASE("bound equals exact evidence when the posterior family is exact", "[elbo]") {
  for (const auto& words :
       {std::vector<int>{0}, std::vector<int>{0, 0}, std::vector<int>{0, 1, 1, 0, 1}}) {
    const BgOnlySetup s = bg_only(words);
    const double elbo = topicloc::compute_elbo(s.corpus, s.alphas, s.posteriors, s.pit,
                                               s.pi0, s.loc_prior, s.config);
    INFO("tokens: " << words.size());
    CHECK(elbo == Catch::Approx(exact_log_evidence(words)).epsilon(0).margin(1e-12));
  }
  // Single word from a 2-symbol flat prior: evidence is exactly 1/2.
  const BgOnlySetup one = bg_only({0});
  CHECK(topicloc::compute_elbo(one.corpus, one.alphas, one.posteriors, one.pit, one.pi0,
                               one.loc_prior, one.config) ==
        Catch::Approx(-std::log(2.0)).epsilon(0).margin(1e-12));
}

TEST_CASE("bound is invariant to image order", "[elbo]") {
  topicloc::SynthConfig sc;
  sc.num_images = 6;
  sc.tokens_per_image = 25;
  sc.num_classes = 2;
  sc.k_bg = 2;
  sc.vocab_sizes = {15};
  sc.concentrations = {0.3};
  sc.seed = 3;
  auto [corpus, gt] = topicloc::sample_corpus(sc);

  ModelConfig config;
  config.num_classes = 2;
  config.k_bg = 2;
  config.vocab_sizes = {15};
  config.iterations = 5;

  PriorConfig pc;
  pc.strength = 1.0;
  const AppearanceTable prior = topicloc::build_all_priors(corpus, config, pc);
  LocationPrior loc_prior;
  const auto result = topicloc::train(corpus, config, prior, loc_prior);

  std::vector<std::vector<double>> alphas;
  for (const auto& im : corpus.images)
    alphas.push_back(topicloc::make_alpha(im, config));
  const double base =
      topicloc::compute_elbo(corpus, alphas, result.posteriors, result.model.posterior,
                             result.model.prior, loc_prior, config);

  const std::vector<int> perm = {4, 0, 5, 2, 1, 3};
  Corpus shuffled = corpus;
  std::vector<std::vector<double>> alphas_p(alphas.size());
  std::vector<ImagePosterior> posts_p(result.posteriors.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.images[i] = corpus.images[perm[i]];
    alphas_p[i] = alphas[perm[i]];
    posts_p[i] = result.posteriors[perm[i]];
  }
  const double permuted =
      topicloc::compute_elbo(shuffled, alphas_p, posts_p, result.model.posterior,
                             result.model.prior, loc_prior, config);
  CHECK(permuted == Catch::Approx(base).epsilon(0).margin(1e-9 * std::abs(base)));
}

TEST_CASE("training trace never decreases beyond tolerance", "[elbo]") {
  topicloc::SynthConfig sc;
  sc.num_images = 10;
  sc.tokens_per_image = 30;
  sc.num_classes = 2;
  sc.k_bg = 2;
  sc.vocab_sizes = {20};
  sc.concentrations = {0.2};
  sc.seed = 11;
  auto [corpus, gt] = topicloc::sample_corpus(sc);

  ModelConfig config;
  config.num_classes = 2;
  config.k_bg = 2;
  config.vocab_sizes = {20};
  config.iterations = 30;

  PriorConfig pc;
  pc.strength = 1.0;
  const AppearanceTable prior = topicloc::build_all_priors(corpus, config, pc);

  for (const LocationScore score :
       {LocationScore::kExpectedLogGaussian, LocationScore::kStudentT}) {
    config.location_score = score;
    const auto result = topicloc::train(corpus, config, prior, LocationPrior{});
    REQUIRE(result.elbo_trace.size() == 30);
    // The tracked objective scores locations with the expected log Gaussian,
    // so only that arm is exact coordinate ascent and guaranteed monotone to
    // rounding error. Scoring responsibilities with the heavier-tailed
    // student-t optimizes a slightly different per-token objective, which can
    // dip the recorded trace by ~1e-7 relative near convergence.
    const double slack = score == LocationScore::kStudentT ? 1e-6 : 1e-8;
    for (std::size_t i = 1; i < result.elbo_trace.size(); ++i) {
      INFO(to_string(score) << " sweep " << i);
      CHECK(result.elbo_trace[i] >=
            result.elbo_trace[i - 1] - slack * std::abs(result.elbo_trace[i - 1]));
    }
    CHECK(result.elbo_trace.back() > result.elbo_trace.front());
  }
}

TEST_CASE("final trace entry matches a recomputation from the returned state", "[elbo]") {
  topicloc::SynthConfig sc;
  sc.num_images = 5;
  sc.tokens_per_image = 20;
  sc.num_classes = 1;
  sc.k_bg = 2;
  sc.vocab_sizes = {10};
  sc.concentrations = {0.5};
  sc.seed = 21;
  auto [corpus, gt] = topicloc::sample_corpus(sc);

  ModelConfig config;
  config.num_classes = 1;
  config.k_bg = 2;
  config.vocab_sizes = {10};
  config.iterations = 8;

  const AppearanceTable prior =
      topicloc::build_all_priors(corpus, config, PriorConfig{.strength = 1.0});
  const LocationPrior loc_prior;
  const auto result = topicloc::train(corpus, config, prior, loc_prior);
  REQUIRE_FALSE(result.elbo_trace.empty());

  std::vector<std::vector<double>> alphas;
  for (const auto& im : corpus.images)
    alphas.push_back(topicloc::make_alpha(im, config));
  const double recomputed =
      topicloc::compute_elbo(corpus, alphas, result.posteriors, result.model.posterior,
                             result.model.prior, loc_prior, config);
  CHECK(recomputed == result.elbo_trace.back());
}

TEST_CASE("trace can be disabled", "[elbo]") {
  topicloc::SynthConfig sc;
  sc.num_images = 4;
  sc.tokens_per_image = 10;
  sc.num_classes = 1;
  sc.k_bg = 1;
  sc.vocab_sizes = {8};
  sc.concentrations = {0.5};
  auto [corpus, gt] = topicloc::sample_corpus(sc);

  ModelConfig config;
  config.num_classes = 1;
  config.k_bg = 1;
  config.vocab_sizes = {8};
  config.iterations = 3;

  topicloc::TrainOptions opts;
  opts.track_elbo = false;
  const auto result = topicloc::train(
      corpus, config, topicloc::build_all_priors(corpus, config, PriorConfig{.strength = 1.0}),
      LocationPrior{}, opts);
  CHECK(result.elbo_trace.empty());
}
