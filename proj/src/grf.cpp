#include "grfhd/grf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "grfhd/errors.hpp"
#include "grfhd/grid_io.hpp"
#include "grfhd/rng.hpp"
#include "nelder_mead.hpp"

namespace grfhd {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kTwoPi = 6.283185307179586476925286766559;

double point_dist(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

MatrixXd kernel_matrix(const std::vector<double>& x, const std::vector<double>& y,
                       const KernelParams& p) {
  const int n = static_cast<int>(x.size());
  MatrixXd k(n, n);
  for (int j = 0; j < n; ++j) {
    k(j, j) = p.u;
    for (int i = j + 1; i < n; ++i) {
      const double v = p.u * std::exp(-point_dist(x[i], y[i], x[j], y[j]) / p.ell);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

// Cholesky with escalating diagonal jitter, 1e-10 to 1e-4 of the mean
// diagonal in decade steps. Throws with the last jitter tried.
Eigen::LLT<MatrixXd> llt_with_jitter(const MatrixXd& a) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const int n = static_cast<int>(a.rows());
  const double base = a.trace() / n;
  if (!(base > 0.0))
    throw numerical_error("cannot factorize: matrix has non-positive trace");
  double jitter = 1e-10 * base;
  const double jitter_max = 1e-4 * base;
  while (jitter <= jitter_max * (1.0 + 1e-12)) {
    MatrixXd aj = a;
    aj.diagonal().array() += jitter;
    llt.compute(aj);
    if (llt.info() == Eigen::Success) return llt;
    jitter *= 10.0;
  }
  throw numerical_error("factorization failed after jitter escalation to " +
                        std::to_string(jitter_max));
}

double lml_from_factor(const Eigen::LLT<MatrixXd>& llt, const VectorXd& zc) {
  const int n = static_cast<int>(zc.size());
  const VectorXd alpha = llt.solve(zc);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixLLT()(i, i));
  logdet *= 2.0;
  return -0.5 * zc.dot(alpha) - 0.5 * logdet - 0.5 * n * std::log(kTwoPi);
}

VectorXd centered_elevations(const PointCloud& pcd, double prior_mean) {
  const int n = static_cast<int>(pcd.z.size());
  VectorXd zc(n);
  for (int i = 0; i < n; ++i) zc(i) = pcd.z[i] - prior_mean;
  return zc;
}

double data_mean(const std::vector<double>& z) {
  return std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size());
}

}  // namespace

void KernelParams::validate() const {
  if (!std::isfinite(u) || u <= 0.0)
    throw parameter_error("kernel variance scale u must be finite and > 0");
  if (!std::isfinite(ell) || ell <= 0.0)
    throw parameter_error("kernel correlation length ell must be finite and > 0");
  if (!std::isfinite(sigma) || sigma < 0.0)
    throw parameter_error("observation-noise sigma must be finite and >= 0");
}

double kernel_eval(const Point2& p, const Point2& q, const KernelParams& params) {
  params.validate();
  return params.u * std::exp(-point_dist(p.x, p.y, q.x, q.y) / params.ell);
}

void FitBounds::validate() const {
  auto check = [](double lo, double hi, const char* name) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo <= 0.0 || hi < lo)
      throw parameter_error(std::string("fit bounds for ") + name +
                            " must satisfy 0 < min <= max");
  };
  check(u_min, u_max, "u");
  check(ell_min, ell_max, "ell");
  check(sigma_min, sigma_max, "sigma");
}

FitBounds default_fit_bounds(const PointCloud& pcd) {
  FitBounds b;
  const int n = static_cast<int>(pcd.x.size());
  if (n >= 2) {
    std::vector<double> nn(n, std::numeric_limits<double>::infinity());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j)
          nn[i] = std::min(nn[i], point_dist(pcd.x[i], pcd.y[i], pcd.x[j], pcd.y[j]));
    std::nth_element(nn.begin(), nn.begin() + n / 2, nn.end());
    const double spacing = nn[n / 2];
    const auto [xmin, xmax] = std::minmax_element(pcd.x.begin(), pcd.x.end());
    const auto [ymin, ymax] = std::minmax_element(pcd.y.begin(), pcd.y.end());
    const double extent = std::hypot(*xmax - *xmin, *ymax - *ymin);
    if (spacing > 0.0 && extent > 0.0) {
      // The exponential kernel's evidence is nearly flat along u/ell = const
      // once ell exceeds the data extent, so cap ell at twice the diagonal
      // to keep fits off that ridge.
      b.ell_min = 0.5 * spacing;
      b.ell_max = std::max(2.0 * extent, 2.0 * b.ell_min);
    }
  }
  return b;
}

KernelParams default_fit_init(const PointCloud& pcd, const FitBounds& bounds) {
  bounds.validate();
  if (pcd.z.empty()) throw parameter_error("default_fit_init: empty point cloud");
  const double mean =
      std::accumulate(pcd.z.begin(), pcd.z.end(), 0.0) / pcd.z.size();
  double var = 0.0;
  for (const double z : pcd.z) var += (z - mean) * (z - mean);
  var /= static_cast<double>(pcd.z.size());
  KernelParams init;
  init.u = std::clamp(std::max(var, 1e-4), bounds.u_min, bounds.u_max);
  init.ell = std::clamp(bounds.ell_max / 100.0, bounds.ell_min, bounds.ell_max);
  init.sigma = pcd.noise_sigma > 0.0 ? pcd.noise_sigma : bounds.sigma_min;
  init.sigma = std::clamp(init.sigma, bounds.sigma_min, bounds.sigma_max);
  return init;
}

double log_marginal_likelihood(const PointCloud& pcd, const KernelParams& params) {
  params.validate();
  const int n = static_cast<int>(pcd.x.size());
  if (n < 1) throw parameter_error("log_marginal_likelihood: empty point cloud");
  if (n > kDenseTrainCap)
    throw capacity_error("point cloud has " + std::to_string(n) +
                         " points, above the dense factorization cap of " +
                         std::to_string(kDenseTrainCap) +
                         "; fit on a subsample and rely on windowed conditioning");
  MatrixXd k = kernel_matrix(pcd.x, pcd.y, params);
  k.diagonal().array() += params.sigma * params.sigma;
  const auto llt = llt_with_jitter(k);
  const double lml = lml_from_factor(llt, centered_elevations(pcd, data_mean(pcd.z)));
  if (!std::isfinite(lml))
    throw numerical_error("log marginal likelihood is not finite; covariance "
                          "matrix is effectively singular");
  return lml;
}

FitResult fit_hyperparameters(const PointCloud& pcd, const KernelParams& init,
                              const FitBounds& bounds, bool fix_sigma) {
  init.validate();
  bounds.validate();
  const int n = static_cast<int>(pcd.x.size());
  if (n < 3)
    throw parameter_error("fit_hyperparameters needs at least 3 points, got " +
                          std::to_string(n));
  if (n > kDenseTrainCap)
    throw capacity_error("point cloud has " + std::to_string(n) +
                         " points, above the dense factorization cap of " +
                         std::to_string(kDenseTrainCap) +
                         "; fit on a subsample and rely on windowed conditioning");

  const double sigma_fixed = fix_sigma ? pcd.noise_sigma : init.sigma;
  const int dim = fix_sigma ? 2 : 3;

  VectorXd lo(dim), hi(dim);
  lo(0) = std::log(bounds.u_min);
  hi(0) = std::log(bounds.u_max);
  lo(1) = std::log(bounds.ell_min);
  hi(1) = std::log(bounds.ell_max);
  if (!fix_sigma) {
    lo(2) = std::log(bounds.sigma_min);
    hi(2) = std::log(bounds.sigma_max);
  }
  auto clamp_to_box = [&](VectorXd x) {
    for (int i = 0; i < dim; ++i) x(i) = std::clamp(x(i), lo(i), hi(i));
    return x;
  };
  auto params_at = [&](const VectorXd& x) {
    KernelParams p;
    p.u = std::exp(x(0));
    p.ell = std::exp(x(1));
    p.sigma = fix_sigma ? sigma_fixed : std::exp(x(2));
    return p;
  };

  int evaluations = 0;
  auto objective = [&](const VectorXd& x) {
    ++evaluations;
    try {
      const double lml = log_marginal_likelihood(pcd, params_at(clamp_to_box(x)));
      return std::isfinite(lml) ? -lml : std::numeric_limits<double>::infinity();
    } catch (const error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  VectorXd init_x(dim);
  init_x(0) = std::log(init.u);
  init_x(1) = std::log(init.ell);
  if (!fix_sigma) init_x(2) = std::log(std::max(init.sigma, bounds.sigma_min));
  init_x = clamp_to_box(init_x);

  // Four extra starts drawn log-uniformly within the box from a fixed
  // stream so repeated fits of the same cloud are identical.
  std::vector<VectorXd> starts{init_x};
  Rng rng(derive_seed(0x67726668644d4cULL, "fit.multistart"));
  for (int s = 0; s < 4; ++s) {
    VectorXd x(dim);
    for (int i = 0; i < dim; ++i) x(i) = rng.uniform(lo(i), hi(i));
    starts.push_back(x);
  }

  VectorXd best_x = init_x;
  double best_f = std::numeric_limits<double>::infinity();
  for (const auto& start : starts) {
    const auto res = nelder_mead_minimize(objective, start, 0.5, 1e-4, 200);
    if (res.value < best_f) {
      best_f = res.value;
      best_x = res.x;
    }
  }
  if (!std::isfinite(best_f))
    throw numerical_error("hyperparameter search failed: no start produced a "
                          "finite log marginal likelihood");

  FitResult out;
  out.params = params_at(clamp_to_box(best_x));
  out.achieved_lml = -best_f;
  out.evaluations = evaluations;
  return out;
}

GrfModel::GrfModel(PointCloud train, KernelParams params,
                   std::optional<double> prior_mean)
    : train_(std::move(train)), params_(params) {
  params_.validate();
  const int n = static_cast<int>(train_.x.size());
  if (n < 1) throw parameter_error("GrfModel requires at least one measurement");
  prior_mean_ = prior_mean.value_or(data_mean(train_.z));
  if (!std::isfinite(prior_mean_))
    throw parameter_error("GrfModel prior mean must be finite");
  centered_z_ = centered_elevations(train_, prior_mean_);
  windowed_ = n > kDenseTrainCap;
  if (!windowed_) {
    MatrixXd k = kernel_matrix(train_.x, train_.y, params_);
    k.diagonal().array() += params_.sigma * params_.sigma;
    llt_ = llt_with_jitter(k);
    alpha_ = llt_.solve(centered_z_);
  }
}

namespace {

// Shared tail of both conditioning paths: posterior moments from a set of
// training columns against the queries, prior mean restored, covariance
// symmetrized and its diagonal clamped at zero.
GrfPosterior posterior_from(const std::vector<Point2>& queries,
                            const KernelParams& params, double prior_mean,
                            const std::vector<double>& tx,
                            const std::vector<double>& ty,
                            const Eigen::LLT<MatrixXd>& llt,
                            const VectorXd& alpha) {
  const int n = static_cast<int>(tx.size());
  const int ns = static_cast<int>(queries.size());
  MatrixXd kxs(n, ns);
  for (int j = 0; j < ns; ++j)
    for (int i = 0; i < n; ++i)
      kxs(i, j) = params.u *
                  std::exp(-point_dist(tx[i], ty[i], queries[j].x, queries[j].y) /
                           params.ell);
  MatrixXd kss(ns, ns);
  for (int j = 0; j < ns; ++j) {
    kss(j, j) = params.u;
    for (int i = j + 1; i < ns; ++i) {
      const double v =
          params.u * std::exp(-point_dist(queries[i].x, queries[i].y, queries[j].x,
                                          queries[j].y) /
                              params.ell);
      kss(i, j) = v;
      kss(j, i) = v;
    }
  }

  GrfPosterior post;
  post.query_locations = queries;
  post.mean = kxs.transpose() * alpha;
  post.mean.array() += prior_mean;
  const MatrixXd v = llt.matrixL().solve(kxs);
  MatrixXd cov = kss - v.transpose() * v;
  cov = 0.5 * (cov + cov.transpose()).eval();
  for (int i = 0; i < ns; ++i) cov(i, i) = std::max(cov(i, i), 0.0);
  post.cov = std::move(cov);
  if (!post.mean.allFinite())
    throw numerical_error("conditioning produced a non-finite posterior mean");
  return post;
}

}  // namespace

GrfPosterior condition(const GrfModel& model, const std::vector<Point2>& queries) {
  if (queries.empty())
    throw parameter_error("condition: need at least one query point");
  for (const auto& q : queries)
    if (!std::isfinite(q.x) || !std::isfinite(q.y))
      throw parameter_error("condition: query locations must be finite");

  const auto& p = model.params_;
  if (!model.windowed_)
    return posterior_from(queries, p, model.prior_mean_, model.train_.x,
                          model.train_.y, model.llt_, model.alpha_);

  // Windowed path: collect measurements within 5 ell of the query centroid,
  // widened by the query spread so every query sits deep inside the window.
  double cx = 0.0, cy = 0.0;
  for (const auto& q : queries) {
    cx += q.x;
    cy += q.y;
  }
  cx /= static_cast<double>(queries.size());
  cy /= static_cast<double>(queries.size());
  double spread = 0.0;
  for (const auto& q : queries)
    spread = std::max(spread, point_dist(q.x, q.y, cx, cy));
  const double radius = 5.0 * p.ell + spread;

  const int n = model.n();
  std::vector<int> idx;
  for (int i = 0; i < n; ++i)
    if (point_dist(model.train_.x[i], model.train_.y[i], cx, cy) <= radius)
      idx.push_back(i);
  if (idx.size() > static_cast<std::size_t>(kDenseTrainCap)) {
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return point_dist(model.train_.x[a], model.train_.y[a], cx, cy) <
             point_dist(model.train_.x[b], model.train_.y[b], cx, cy);
    });
    idx.resize(kDenseTrainCap);
    std::sort(idx.begin(), idx.end());
  }

  if (idx.empty()) {
    // No data near the queries: the posterior is the prior.
    GrfPosterior post;
    post.query_locations = queries;
    const int ns = static_cast<int>(queries.size());
    post.mean = VectorXd::Constant(ns, model.prior_mean_);
    post.cov.resize(ns, ns);
    for (int j = 0; j < ns; ++j) {
      post.cov(j, j) = p.u;
      for (int i = j + 1; i < ns; ++i) {
        const double v =
            p.u * std::exp(-point_dist(queries[i].x, queries[i].y, queries[j].x,
                                       queries[j].y) /
                           p.ell);
        post.cov(i, j) = v;
        post.cov(j, i) = v;
      }
    }
    return post;
  }

  std::vector<double> wx(idx.size()), wy(idx.size());
  VectorXd wz(static_cast<int>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    wx[i] = model.train_.x[idx[i]];
    wy[i] = model.train_.y[idx[i]];
    wz(static_cast<int>(i)) = model.centered_z_(idx[i]);
  }
  MatrixXd k = kernel_matrix(wx, wy, p);
  k.diagonal().array() += p.sigma * p.sigma;
  const auto llt = llt_with_jitter(k);
  const VectorXd alpha = llt.solve(wz);
  return posterior_from(queries, p, model.prior_mean_, wx, wy, llt, alpha);
}

std::vector<Eigen::VectorXd> sample_posterior(const GrfPosterior& post,
                                              int n_samples, std::uint64_t seed) {
  if (n_samples < 1)
    throw parameter_error("sample_posterior: n_samples must be >= 1");
  const int ns = static_cast<int>(post.mean.size());
  if (ns < 1 || post.cov.rows() != ns || post.cov.cols() != ns)
    throw parameter_error("sample_posterior: mean/covariance dimensions disagree");

  const double trace = post.cov.trace();
  const bool degenerate = !(trace > 1e-30);
  MatrixXd l;
  if (!degenerate) {
    const MatrixXd sym = 0.5 * (post.cov + post.cov.transpose());
    l = llt_with_jitter(sym).matrixL();
  }

  std::vector<VectorXd> samples;
  samples.reserve(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    if (degenerate) {
      samples.push_back(post.mean);
      continue;
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    VectorXd eta(ns);
    for (int i = 0; i < ns; ++i) eta(i) = rng.normal();
    samples.push_back(post.mean + l * eta);
  }
  return samples;
}

void save_model_record(const std::string& path, const ModelRecord& rec) {
  nlohmann::json j;
  j["format"] = "grfhd-model";
  j["version"] = 1;
  j["u"] = rec.params.u;
  j["ell"] = rec.params.ell;
  j["sigma"] = rec.params.sigma;
  j["prior_mean"] = rec.prior_mean;
  j["n"] = rec.n;
  j["achieved_lml"] = rec.achieved_lml;
  j["pcd"] = rec.pcd_path;
  write_file_maybe_gz(path, j.dump(2) + "\n");
}

ModelRecord load_model_record(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_maybe_gz(path));
  } catch (const nlohmann::json::exception& e) {
    throw format_error("'" + path + "': invalid model JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "grfhd-model")
      throw format_error("'" + path + "': not a grfhd-model record");
    if (j.at("version").get<int>() != 1)
      throw format_error("'" + path + "': unsupported model record version");
    ModelRecord rec;
    rec.params.u = j.at("u").get<double>();
    rec.params.ell = j.at("ell").get<double>();
    rec.params.sigma = j.at("sigma").get<double>();
    rec.prior_mean = j.at("prior_mean").get<double>();
    rec.n = j.at("n").get<int>();
    rec.achieved_lml = j.at("achieved_lml").get<double>();
    rec.pcd_path = j.at("pcd").get<std::string>();
    rec.params.validate();
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw format_error("'" + path + "': model record missing or mistyped field: " +
                       std::string(e.what()));
  } catch (const parameter_error& e) {
    throw format_error("'" + path + "': " + e.what());
  }
}

}  // namespace grfhd
