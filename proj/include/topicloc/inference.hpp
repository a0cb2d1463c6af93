#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "topicloc/corpus.hpp"
#include "topicloc/model.hpp"
#include "topicloc/special.hpp"

namespace topicloc {

// Per-image Dirichlet parameter encoding the weak labels: a present class
// opens its topics (1), an absent class clamps them shut (0), background
// topics are always open. Unlabeled images get ssl_alpha on every fg topic.
inline std::vector<double> make_alpha(const ImageRecord& image, const ModelConfig& config) {
  std::vector<double> alpha(config.k(), 0.0);
  if (image.unlabeled) {
    for (int t = 0; t < config.k_fg(); ++t) alpha[t] = config.ssl_alpha;
  } else {
    for (int c : image.labels)
      for (int t = config.first_topic_of(c); t < config.first_topic_of(c + 1); ++t)
        alpha[t] = 1.0;
  }
  for (int t = config.k_fg(); t < config.k(); ++t) alpha[t] = 1.0;
  return alpha;
}

inline std::vector<double> update_theta_stats(const std::vector<double>& alpha,
                                              const Matrix& resp) {
  std::vector<double> theta = alpha;
  for (std::size_t i = 0; i < resp.rows(); ++i) {
    const double* r = resp.row(i);
    for (std::size_t k = 0; k < resp.cols(); ++k) theta[k] += r[k];
  }
  return theta;
}

// Posterior predictive of the Normal given a Normal-Wishart posterior: a
// bivariate student-t with nu-1 degrees of freedom and precision
// (nu-1) * beta/(1+beta) * W.
inline double student_t_log_density(Vec2 loc, const NWStats& s) {
  if (!s.w.is_pd()) throw ValidationError("student_t_log_density: scale matrix not PD");
  if (!(s.nu > 1.0)) throw ValidationError("student_t_log_density: requires nu > 1");
  const double dof = s.nu - 1.0;
  const Mat2 prec = s.w * (dof * s.beta / (1.0 + s.beta));
  const double delta = prec.quad(loc - s.mu);
  return std::lgamma(0.5 * (dof + 2.0)) - std::lgamma(0.5 * dof) + 0.5 * logdet_pd(prec) -
         std::log(dof * M_PI) - 0.5 * (dof + 2.0) * std::log1p(delta / dof);
}

// E_q[log N(loc | mu, Lambda^-1)] under the Normal-Wishart posterior q;
// the exact mean-field location message.
inline double expected_log_gaussian(Vec2 loc, const NWStats& s) {
  const double elogdet =
      digamma(0.5 * s.nu) + digamma(0.5 * (s.nu - 1.0)) + 2.0 * std::log(2.0) + logdet_pd(s.w);
  const double quad = s.w.quad(loc - s.mu);
  return -std::log(2.0 * M_PI) + 0.5 * elogdet - 0.5 * (2.0 / s.beta + s.nu * quad);
}

// psi(pi~) - psi(sum_v pi~) per entry: the appearance part of the token
// score, precomputed once per sweep.
struct AppearanceScore {
  std::vector<Matrix> elog;  // per channel, K x V_f
};

inline AppearanceScore make_appearance_score(const AppearanceTable& pit) {
  AppearanceScore s;
  for (const auto& ch : pit.channels) {
    Matrix m(ch.rows(), ch.cols());
    for (std::size_t k = 0; k < ch.rows(); ++k) {
      double sum = 0.0;
      for (std::size_t v = 0; v < ch.cols(); ++v) sum += ch.at(k, v);
      const double dsum = digamma(sum);
      for (std::size_t v = 0; v < ch.cols(); ++v) m.at(k, v) = digamma(ch.at(k, v)) - dsum;
    }
    s.elog.push_back(std::move(m));
  }
  return s;
}

struct RespOptions {
  LocationScore location_score = LocationScore::kStudentT;
  // The deterministic initialization pass scores tokens from the appearance
  // prior and the location prior alone; the theta term joins from sweep one.
  bool include_theta = true;
};

// One token-responsibility update. Log-space scoring with max-shifted
// exponentiation; clamped topics (alpha == 0) are exact zeros.
inline Matrix update_responsibilities(const ImageRecord& image,
                                      const std::vector<double>& alpha,
                                      const std::vector<double>& theta,
                                      const std::vector<NWStats>& nw,
                                      const AppearanceScore& appearance,
                                      const ModelConfig& config,
                                      const RespOptions& opts = {}) {
  const int k_total = config.k();
  const int k_fg = config.k_fg();
  const int f_total = config.num_channels();
  const std::size_t n = image.tokens.size();

  std::vector<char> open(k_total);
  bool any_open = false;
  for (int k = 0; k < k_total; ++k) {
    open[k] = alpha[k] > 0.0;
    any_open = any_open || open[k];
  }
  if (!any_open) throw ValidationError("update_responsibilities: all topics masked");

  std::vector<double> theta_term(k_total, 0.0);
  if (opts.include_theta)
    for (int k = 0; k < k_total; ++k)
      if (open[k]) theta_term[k] = digamma(theta[k]);

  Matrix resp(n, k_total);
  std::vector<double> score(k_total);
  for (std::size_t i = 0; i < n; ++i) {
    const Token& tok = image.tokens[i];
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_total; ++k) {
      if (!open[k]) continue;
      double s = theta_term[k];
      for (int f = 0; f < f_total; ++f) s += appearance.elog[f].at(k, tok.words[f]);
      if (k < k_fg)
        s += opts.location_score == LocationScore::kStudentT
                 ? student_t_log_density(tok.loc, nw[k])
                 : expected_log_gaussian(tok.loc, nw[k]);
      // background location density is uniform on the unit square: log 1 = 0
      score[k] = s;
      if (s > best) best = s;
    }
    double norm = 0.0;
    double* out = resp.row(i);
    for (int k = 0; k < k_total; ++k) {
      if (!open[k]) {
        out[k] = 0.0;
        continue;
      }
      out[k] = std::exp(score[k] - best);
      norm += out[k];
    }
    for (int k = 0; k < k_total; ++k) out[k] /= norm;
  }
  return resp;
}

// Weighted conjugate Normal-Wishart update for one fg topic. Zero topic mass
// returns the prior exactly.
inline NWStats update_nw_stats(const ImageRecord& image, const Matrix& resp,
                               const LocationPrior& prior, int topic) {
  double n_k = 0.0;
  for (std::size_t i = 0; i < resp.rows(); ++i) n_k += resp.at(i, topic);
  NWStats out;
  out.beta = prior.beta0 + n_k;
  out.nu = prior.nu0 + n_k;
  if (n_k == 0.0) {
    out.mu = prior.mu0;
    out.w = prior.lambda0;
    return out;
  }
  Vec2 xbar{0.0, 0.0};
  for (std::size_t i = 0; i < resp.rows(); ++i)
    xbar = xbar + image.tokens[i].loc * resp.at(i, topic);
  xbar = xbar * (1.0 / n_k);
  Mat2 scatter;
  for (std::size_t i = 0; i < resp.rows(); ++i) {
    const Vec2 d = image.tokens[i].loc - xbar;
    scatter = scatter + Mat2::outer(d, d) * resp.at(i, topic);
  }
  out.mu = (prior.mu0 * prior.beta0 + xbar * n_k) * (1.0 / out.beta);
  const Vec2 dm = xbar - prior.mu0;
  const Mat2 w_inv = prior.lambda0.inverse() + scatter +
                     Mat2::outer(dm, dm) * (prior.beta0 * n_k / out.beta);
  out.w = w_inv.inverse().symmetrized();
  return out;
}

// Dirichlet pseudo-count accumulation over the whole corpus, in fixed image
// order (bit-reproducible regardless of how responsibilities were produced).
inline AppearanceTable update_appearance_stats(const Corpus& corpus,
                                               const std::vector<ImagePosterior>& posteriors,
                                               const AppearanceTable& prior) {
  AppearanceTable pit = prior;
  const int f_total = corpus.num_channels();
  for (std::size_t j = 0; j < corpus.images.size(); ++j) {
    const auto& tokens = corpus.images[j].tokens;
    const Matrix& r = posteriors[j].resp;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      for (std::size_t k = 0; k < r.cols(); ++k) {
        const double w = r.at(i, k);
        if (w == 0.0) continue;
        for (int f = 0; f < f_total; ++f)
          pit.channels[f].at(k, tokens[i].words[f]) += w;
      }
  }
  return pit;
}

// Regularised M-step: fg topic priors absorb similarity-weighted counts from
// every fg topic; background priors are untouched. M is class-by-class and
// is lifted to topics through each topic's class.
inline AppearanceTable similarity_m_step(const AppearanceTable& prior_base,
                                         const std::vector<ImagePosterior>& posteriors,
                                         const Corpus& corpus, const SimilarityMatrix& m,
                                         double lambda, const ModelConfig& config) {
  if (m.size != config.num_classes)
    throw ValidationError("similarity_m_step: matrix size does not match num_classes");
  const int f_total = corpus.num_channels();
  const int k_fg = config.k_fg();

  AppearanceTable counts = AppearanceTable::filled(k_fg, corpus.vocab_sizes, 0.0);
  for (std::size_t j = 0; j < corpus.images.size(); ++j) {
    const auto& tokens = corpus.images[j].tokens;
    const Matrix& r = posteriors[j].resp;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      for (int k = 0; k < k_fg; ++k) {
        const double w = r.at(i, k);
        if (w == 0.0) continue;
        for (int f = 0; f < f_total; ++f)
          counts.channels[f].at(k, tokens[i].words[f]) += w;
      }
  }

  AppearanceTable out = prior_base;
  for (int f = 0; f < f_total; ++f)
    for (int t = 0; t < k_fg; ++t)
      for (int t2 = 0; t2 < k_fg; ++t2) {
        const double w = lambda * m.at(config.class_of_topic(t), config.class_of_topic(t2));
        if (w == 0.0) continue;
        for (int v = 0; v < corpus.vocab_sizes[f]; ++v)
          out.channels[f].at(t, v) += w * counts.channels[f].at(t2, v);
      }
  return out;
}

namespace detail {

// E_q[log p(x|b)] - E_q[log q(x)] for Dirichlet q = Dir(a) against Dir(b).
inline double dirichlet_kl_term(const std::vector<double>& a, const std::vector<double>& b) {
  double sum_a = 0.0;
  for (double v : a) sum_a += v;
  const double dsum = digamma(sum_a);
  double out = log_beta(a) - log_beta(b);
  for (std::size_t i = 0; i < a.size(); ++i)
    out += (b[i] - a[i]) * (digamma(a[i]) - dsum);
  return out;
}

inline double dirichlet_kl_term_rows(const Matrix& post, const Matrix& prior, std::size_t k) {
  const std::size_t v = post.cols();
  double sum_a = 0.0, lb_a = 0.0, lb_b = 0.0, cross = 0.0, sum_b = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    sum_a += post.at(k, i);
    sum_b += prior.at(k, i);
    lb_a += std::lgamma(post.at(k, i));
    lb_b += std::lgamma(prior.at(k, i));
  }
  const double dsum = digamma(sum_a);
  for (std::size_t i = 0; i < v; ++i)
    cross += (prior.at(k, i) - post.at(k, i)) * (digamma(post.at(k, i)) - dsum);
  return (lb_a - std::lgamma(sum_a)) - (lb_b - std::lgamma(sum_b)) + cross;
}

// E_q[log p(mu, Lambda)] - E_q[log q(mu, Lambda)] for Normal-Wishart q.
inline double nw_kl_term(const NWStats& post, const LocationPrior& prior) {
  const double elogdet = digamma(0.5 * post.nu) + digamma(0.5 * (post.nu - 1.0)) +
                         2.0 * std::log(2.0) + logdet_pd(post.w);
  const Vec2 dm = post.mu - prior.mu0;
  const Mat2 w0_inv = prior.lambda0.inverse();
  const double trace =
      w0_inv.a00 * post.w.a00 + w0_inv.a01 * post.w.a10 + w0_inv.a10 * post.w.a01 +
      w0_inv.a11 * post.w.a11;
  const double ep = std::log(prior.beta0) - std::log(2.0 * M_PI) + 0.5 * elogdet -
                    0.5 * prior.beta0 * (2.0 / post.beta + post.nu * post.w.quad(dm)) +
                    log_wishart_b(prior.lambda0, prior.nu0) +
                    0.5 * (prior.nu0 - 3.0) * elogdet - 0.5 * post.nu * trace;
  const double eq = std::log(post.beta) - std::log(2.0 * M_PI) + 0.5 * elogdet - 1.0 +
                    log_wishart_b(post.w, post.nu) + 0.5 * (post.nu - 3.0) * elogdet -
                    post.nu;
  return ep - eq;
}

}  // namespace detail

// Full variational lower bound for the current state. The location
// likelihood enters through its exact expectation E_q[log N]; the background
// location density is uniform on the unit square and contributes zero.
inline double compute_elbo(const Corpus& corpus, const std::vector<std::vector<double>>& alphas,
                           const std::vector<ImagePosterior>& posteriors,
                           const AppearanceTable& pit, const AppearanceTable& pi0,
                           const LocationPrior& loc_prior, const ModelConfig& config) {
  const int k_total = config.k();
  const int k_fg = config.k_fg();
  const int f_total = config.num_channels();

  double total = 0.0;
  for (int f = 0; f < f_total; ++f)
    for (int k = 0; k < k_total; ++k)
      total += detail::dirichlet_kl_term_rows(pit.channels[f], pi0.channels[f], k);

  const AppearanceScore score = make_appearance_score(pit);

  for (std::size_t j = 0; j < corpus.images.size(); ++j) {
    const auto& image = corpus.images[j];
    const auto& alpha = alphas[j];
    const auto& post = posteriors[j];

    std::vector<double> theta_sub, alpha_sub;
    std::vector<int> support;
    for (int k = 0; k < k_total; ++k)
      if (alpha[k] > 0.0) {
        support.push_back(k);
        theta_sub.push_back(post.theta[k]);
        alpha_sub.push_back(alpha[k]);
      }
    total += detail::dirichlet_kl_term(theta_sub, alpha_sub);

    double theta_sum = 0.0;
    for (double v : theta_sub) theta_sum += v;
    const double dsum = digamma(theta_sum);
    std::vector<double> elog_theta(k_total, 0.0);
    for (int k : support) elog_theta[k] = digamma(post.theta[k]) - dsum;

    for (std::size_t i = 0; i < image.tokens.size(); ++i) {
      const Token& tok = image.tokens[i];
      const double* r = post.resp.row(i);
      for (int k : support) {
        const double w = r[k];
        if (w > 0.0) total += w * (elog_theta[k] - std::log(w));
        if (w == 0.0) continue;
        for (int f = 0; f < f_total; ++f) total += w * score.elog[f].at(k, tok.words[f]);
        if (k < k_fg) total += w * expected_log_gaussian(tok.loc, post.nw[k]);
      }
    }
    for (int k : support)
      if (k < k_fg) total += detail::nw_kl_term(post.nw[k], loc_prior);
  }
  return total;
}

struct TrainOptions {
  bool use_similarity = false;
  SimilarityMatrix similarity;
  int m_step_period = 5;
  int threads = 1;
  bool track_elbo = true;
};

struct TrainResult {
  Model model;
  std::vector<ImagePosterior> posteriors;
  std::vector<double> elbo_trace;  // one value per sweep, after the global update
};

namespace detail {

inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline void validate_train_inputs(const Corpus& corpus, const ModelConfig& config,
                                  const AppearanceTable& prior,
                                  const LocationPrior& loc_prior) {
  config.validate();
  loc_prior.validate();
  validate_corpus(corpus);
  if (corpus.num_classes != config.num_classes)
    throw ValidationError("train: corpus num_classes does not match config");
  if (corpus.vocab_sizes != config.vocab_sizes)
    throw ValidationError("train: corpus vocab_sizes do not match config");
  if (prior.num_channels() != config.num_channels())
    throw ValidationError("train: appearance prior channel count mismatch");
  for (int f = 0; f < config.num_channels(); ++f) {
    if (static_cast<int>(prior.channels[f].rows()) != config.k() ||
        static_cast<int>(prior.channels[f].cols()) != config.vocab_sizes[f])
      throw ValidationError("train: appearance prior shape mismatch on channel " +
                            std::to_string(f));
    for (std::size_t k = 0; k < prior.channels[f].rows(); ++k)
      for (std::size_t v = 0; v < prior.channels[f].cols(); ++v)
        if (!(prior.channels[f].at(k, v) > 0.0))
          throw ValidationError("train: appearance prior must be strictly positive");
  }
}

}  // namespace detail

// Full VMP training loop. Per sweep and per image: responsibilities, theta,
// Normal-Wishart stats; then the global appearance update; optionally the
// similarity-regularised prior refresh every m_step_period sweeps. The
// per-image phase may run on several threads; the global accumulation always
// walks images in fixed order, so results do not depend on the thread count.
inline TrainResult train(const Corpus& corpus, const ModelConfig& config,
                         const AppearanceTable& prior, const LocationPrior& loc_prior,
                         const TrainOptions& opts = {}) {
  detail::validate_train_inputs(corpus, config, prior, loc_prior);
  if (opts.use_similarity && opts.similarity.size != config.num_classes)
    throw ValidationError("train: similarity matrix size does not match num_classes");

  const int j_total = static_cast<int>(corpus.images.size());
  const NWStats nw0 = prior_stats(loc_prior);

  std::vector<std::vector<double>> alphas(j_total);
  std::vector<ImagePosterior> posteriors(j_total);
  for (int j = 0; j < j_total; ++j) {
    alphas[j] = make_alpha(corpus.images[j], config);
    posteriors[j].theta = alphas[j];
    posteriors[j].nw.assign(config.k_fg(), nw0);
  }

  AppearanceTable pi0_current = prior;
  AppearanceTable pit = pi0_current;

  const RespOptions init_opts{config.location_score, /*include_theta=*/false};
  const RespOptions sweep_opts{config.location_score, /*include_theta=*/true};

  auto per_image = [&](int j, const AppearanceScore& score, const RespOptions& ropts) {
    const auto& image = corpus.images[j];
    posteriors[j].resp = update_responsibilities(image, alphas[j], posteriors[j].theta,
                                                 posteriors[j].nw, score, config, ropts);
    posteriors[j].theta = update_theta_stats(alphas[j], posteriors[j].resp);
    for (int t = 0; t < config.k_fg(); ++t)
      posteriors[j].nw[t] = update_nw_stats(image, posteriors[j].resp, loc_prior, t);
  };

  {
    const AppearanceScore score = make_appearance_score(pit);
    detail::parallel_for(j_total, opts.threads,
                         [&](int j) { per_image(j, score, init_opts); });
  }

  std::vector<double> elbo_trace;
  for (int sweep = 0; sweep < config.iterations; ++sweep) {
    const AppearanceScore score = make_appearance_score(pit);
    detail::parallel_for(j_total, opts.threads,
                         [&](int j) { per_image(j, score, sweep_opts); });

    if (opts.use_similarity && (sweep + 1) % opts.m_step_period == 0)
      pi0_current = similarity_m_step(prior, posteriors, corpus, opts.similarity,
                                      config.similarity_weight, config);
    pit = update_appearance_stats(corpus, posteriors, pi0_current);

    if (opts.track_elbo) {
      elbo_trace.push_back(
          compute_elbo(corpus, alphas, posteriors, pit, pi0_current, loc_prior, config));
      if (config.elbo_tolerance > 0.0 && elbo_trace.size() >= 2) {
        const double prev = elbo_trace[elbo_trace.size() - 2];
        const double cur = elbo_trace.back();
        if (std::abs(cur - prev) <= config.elbo_tolerance * std::abs(prev)) break;
      }
    }
  }

  TrainResult result;
  result.model.config = config;
  result.model.class_names = default_class_names(config.num_classes);
  result.model.prior = std::move(pi0_current);
  result.model.posterior = std::move(pit);
  result.model.location_prior = loc_prior;
  result.posteriors = std::move(posteriors);
  result.elbo_trace = std::move(elbo_trace);
  return result;
}

// Posterior for a single image against a frozen appearance posterior:
// iterate the local updates until the responsibilities stop moving.
inline ImagePosterior infer_image(const Model& model, const ImageRecord& image,
                                  const std::vector<double>& alpha) {
  const ModelConfig& config = model.config;
  if (static_cast<int>(alpha.size()) != config.k())
    throw ValidationError("infer_image: alpha size does not match topic count");
  for (const auto& tok : image.tokens) {
    if (static_cast<int>(tok.words.size()) != config.num_channels())
      throw ValidationError("infer_image: token channel count does not match model");
    for (int f = 0; f < config.num_channels(); ++f)
      if (tok.words[f] < 0 || tok.words[f] >= config.vocab_sizes[f])
        throw ValidationError("infer_image: word id out of the model's vocabulary");
  }

  const AppearanceScore score = make_appearance_score(model.posterior);
  ImagePosterior post;
  post.theta = alpha;
  post.nw.assign(config.k_fg(), prior_stats(model.location_prior));

  post.resp = update_responsibilities(image, alpha, post.theta, post.nw, score, config,
                                      {config.location_score, /*include_theta=*/false});
  post.theta = update_theta_stats(alpha, post.resp);
  for (int t = 0; t < config.k_fg(); ++t)
    post.nw[t] = update_nw_stats(image, post.resp, model.location_prior, t);

  for (int iter = 0; iter < 50; ++iter) {
    Matrix next = update_responsibilities(image, alpha, post.theta, post.nw, score, config,
                                          {config.location_score, /*include_theta=*/true});
    double delta = 0.0;
    for (std::size_t i = 0; i < next.data().size(); ++i)
      delta = std::max(delta, std::abs(next.data()[i] - post.resp.data()[i]));
    post.resp = std::move(next);
    post.theta = update_theta_stats(alpha, post.resp);
    for (int t = 0; t < config.k_fg(); ++t)
      post.nw[t] = update_nw_stats(image, post.resp, model.location_prior, t);
    if (delta < 1e-6) break;
  }
  return post;
}

}  // namespace topicloc
