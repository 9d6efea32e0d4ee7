#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace grfhd {

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
};

// Plain Nelder-Mead simplex descent (reflect 1, expand 2, contract 0.5,
// shrink 0.5). Stops once every vertex lies within simplex_tol of the best
// one (infinity norm) or after max_iters. The objective may return +inf for
// infeasible points; ties sort by insertion index so runs are reproducible.
inline NelderMeadResult nelder_mead_minimize(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, double initial_step, double simplex_tol,
    int max_iters) {
  const int dim = static_cast<int>(x0.size());
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  std::vector<Eigen::VectorXd> xs(dim + 1, x0);
  std::vector<double> fs(dim + 1);
  for (int i = 0; i < dim; ++i) xs[i + 1](i) += initial_step;
  for (int i = 0; i <= dim; ++i) fs[i] = eval(xs[i]);

  auto sort_vertices = [&]() {
    std::vector<int> idx(dim + 1);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      if (fs[a] != fs[b]) return fs[a] < fs[b];
      return a < b;
    });
    std::vector<Eigen::VectorXd> xs2(dim + 1);
    std::vector<double> fs2(dim + 1);
    for (int i = 0; i <= dim; ++i) {
      xs2[i] = xs[idx[i]];
      fs2[i] = fs[idx[i]];
    }
    xs.swap(xs2);
    fs.swap(fs2);
  };

  int iter = 0;
  for (; iter < max_iters; ++iter) {
    sort_vertices();
    double spread = 0.0;
    for (int i = 1; i <= dim; ++i)
      spread = std::max(spread, (xs[i] - xs[0]).lpNorm<Eigen::Infinity>());
    if (spread < simplex_tol) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < dim; ++i) centroid += xs[i];
    centroid /= dim;

    const Eigen::VectorXd xr = centroid + (centroid - xs[dim]);
    const double fr = eval(xr);
    if (fr < fs[0]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[dim]);
      const double fe = eval(xe);
      if (fe < fr) {
        xs[dim] = xe;
        fs[dim] = fe;
      } else {
        xs[dim] = xr;
        fs[dim] = fr;
      }
    } else if (fr < fs[dim - 1]) {
      xs[dim] = xr;
      fs[dim] = fr;
    } else {
      bool shrink = false;
      if (fr < fs[dim]) {
        const Eigen::VectorXd xc = centroid + 0.5 * (xr - centroid);
        const double fc = eval(xc);
        if (fc <= fr) {
          xs[dim] = xc;
          fs[dim] = fc;
        } else {
          shrink = true;
        }
      } else {
        const Eigen::VectorXd xc = centroid - 0.5 * (centroid - xs[dim]);
        const double fc = eval(xc);
        if (fc < fs[dim]) {
          xs[dim] = xc;
          fs[dim] = fc;
        } else {
          shrink = true;
        }
      }
      if (shrink) {
        for (int i = 1; i <= dim; ++i) {
          xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
          fs[i] = eval(xs[i]);
        }
      }
    }
  }
  sort_vertices();
  return {xs[0], fs[0], iter, evals};
}

}  // namespace grfhd
