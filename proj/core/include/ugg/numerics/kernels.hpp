#pragma once

#include "ugg/numerics/matrix.hpp"
#include "ugg/numerics/rng.hpp"

namespace ugg {

// mu + eps .* sigma with eps ~ N(0, 1) drawn entrywise (row-major) from rng.
Matrix reparameterize(const Matrix& mu, const Matrix& sigma, RngStream& rng);

// Same as above with an explicit noise matrix.
Matrix reparameterize(const Matrix& mu, const Matrix& sigma, const Matrix& eps);

// KL(N(mu, sigma^2) || N(0, 1)) per entry, reduced by mean over all entries.
double gaussian_kl(const Matrix& mu, const Matrix& sigma);

}  // namespace ugg
