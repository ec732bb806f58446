#include "ugg/numerics/kernels.hpp"

#include <cmath>

#include "ugg/errors.hpp"

namespace ugg {

Matrix reparameterize(const Matrix& mu, const Matrix& sigma, RngStream& rng) {
  require_same_shape(mu, sigma, "reparameterize");
  return reparameterize(mu, sigma, rng.normal_matrix(mu.rows(), mu.cols()));
}

Matrix reparameterize(const Matrix& mu, const Matrix& sigma, const Matrix& eps) {
  require_same_shape(mu, sigma, "reparameterize");
  require_same_shape(mu, eps, "reparameterize(eps)");
  Matrix out(mu.rows(), mu.cols());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (sigma[i] < 0.0) throw DomainError("reparameterize: negative sigma");
    out[i] = mu[i] + eps[i] * sigma[i];
  }
  return out;
}

double gaussian_kl(const Matrix& mu, const Matrix& sigma) {
  require_same_shape(mu, sigma, "gaussian_kl");
  if (mu.empty()) throw ContractViolation("gaussian_kl: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double s = sigma[i];
    if (!(s > 0.0)) throw DomainError("gaussian_kl: sigma must be positive");
    acc += -0.5 * (1.0 + std::log(s * s) - mu[i] * mu[i] - s * s);
  }
  return acc / static_cast<double>(mu.size());
}

}  // namespace ugg
