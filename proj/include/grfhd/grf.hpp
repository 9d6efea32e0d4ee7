#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "grfhd/terrain.hpp"

namespace grfhd {

// Absolute-exponential kernel hyperparameters: k(p, q) = u * exp(-|p-q| / ell)
// plus independent observation noise with standard deviation sigma.
struct KernelParams {
  double u = 1.0;      // variance scale, m^2
  double ell = 1.0;    // correlation length, m
  double sigma = 0.0;  // observation-noise std, m

  void validate() const;
};

double kernel_eval(const Point2& p, const Point2& q, const KernelParams& params);

// Box constraints for the hyperparameter search, in linear (not log) units.
struct FitBounds {
  double u_min = 1e-6;
  double u_max = 1e4;
  double ell_min = 1e-3;
  double ell_max = 1e6;
  double sigma_min = 1e-6;
  double sigma_max = 10.0;

  void validate() const;
};

// Data-driven ell range: [0.5 * median nearest-neighbor spacing,
// 10 * bounding-box diagonal]. u and sigma ranges keep their defaults.
FitBounds default_fit_bounds(const PointCloud& pcd);

// Data-driven starting point: u from the sample variance of the elevations,
// ell at a tenth of the cloud extent, sigma from the recorded noise level.
// Everything is clamped into the bounds.
KernelParams default_fit_init(const PointCloud& pcd, const FitBounds& bounds);

struct FitResult {
  KernelParams params;
  double achieved_lml = 0.0;
  int evaluations = 0;  // objective evaluations across all starts
};

// Gaussian log marginal likelihood of the elevations under the kernel, with
// the arithmetic mean of the observations subtracted as the prior mean.
double log_marginal_likelihood(const PointCloud& pcd, const KernelParams& params);

// Multi-start Nelder-Mead over (log u, log ell), plus log sigma when
// fix_sigma is off; with fix_sigma on, sigma is pinned to pcd.noise_sigma.
// The returned LML is never below the value at the (clamped) init point.
FitResult fit_hyperparameters(const PointCloud& pcd, const KernelParams& init,
                              const FitBounds& bounds, bool fix_sigma = true);

// Above this many training points the dense factorization is not built;
// conditioning falls back to a local measurement window per query group.
constexpr int kDenseTrainCap = 4000;

struct GrfPosterior;
class GrfModel;
GrfPosterior condition(const GrfModel& model, const std::vector<Point2>& queries);

class GrfModel {
 public:
  // prior_mean overrides the default (mean of the training elevations);
  // used when reloading a model so the restored field matches bit-for-bit.
  GrfModel(PointCloud train, KernelParams params,
           std::optional<double> prior_mean = std::nullopt);

  const PointCloud& train() const { return train_; }
  const KernelParams& params() const { return params_; }
  double prior_mean() const { return prior_mean_; }
  int n() const { return static_cast<int>(train_.x.size()); }
  bool windowed() const { return windowed_; }

 private:
  friend GrfPosterior condition(const GrfModel&, const std::vector<Point2>&);

  PointCloud train_;
  KernelParams params_;
  double prior_mean_ = 0.0;
  Eigen::VectorXd centered_z_;
  bool windowed_ = false;
  // Dense path only (n <= kDenseTrainCap):
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;  // (K + sigma^2 I)^-1 (z - prior_mean)
};

struct GrfPosterior {
  std::vector<Point2> query_locations;
  Eigen::VectorXd mean;  // meters, prior mean restored
  Eigen::MatrixXd cov;   // m^2, symmetric
};

// Draws mean + L * eta per sample, eta standard normal from a per-sample
// stream derived from (seed, sample index); identical output for any
// thread count or sample evaluation order.
std::vector<Eigen::VectorXd> sample_posterior(const GrfPosterior& post,
                                              int n_samples, std::uint64_t seed);

// Fitted-model persistence. The JSON record carries the hyperparameters and
// a reference to the point-cloud file; the heavy state is rebuilt on load.
struct ModelRecord {
  KernelParams params;
  double prior_mean = 0.0;
  int n = 0;
  double achieved_lml = 0.0;
  std::string pcd_path;
};

void save_model_record(const std::string& path, const ModelRecord& rec);
ModelRecord load_model_record(const std::string& path);

}  // namespace grfhd
