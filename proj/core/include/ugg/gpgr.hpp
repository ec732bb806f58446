#pragma once

// Gaussian patch-graph representation: each modality's tokens become
// Gaussian nodes (mean, std), a heat-kernel graph over the means drives two
// parallel graph-convolution channels, and the sampled nodes are pooled into
// one embedding per modality.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ugg/modality.hpp"
#include "ugg/numerics/autodiff.hpp"
#include "ugg/numerics/matrix.hpp"
#include "ugg/numerics/params.hpp"
#include "ugg/numerics/rng.hpp"

namespace ugg::gpgr {

enum class Pooling { Mean, Max };

inline constexpr double kSigmaFloor = 1e-6;

struct GpgrConfig {
  std::size_t dim = 64;
  std::size_t layers = 2;
  // Heat-kernel temperature; unset selects the per-graph median of pairwise
  // squared distances.
  std::optional<double> tau;
  // Keep each row's k strongest off-diagonal edges (0 keeps all).
  std::size_t knn = 0;
  Pooling pooling = Pooling::Mean;
  bool shared_projection = true;
  // false: means only (sigma = 0, no sampling, no class-token KL).
  bool uncertainty = true;
};

// Row 0 is the class token, rows 1..n the local tokens.
struct PatchFeatureSet {
  Modality modality = Modality::R;
  Matrix tokens;

  std::size_t node_count() const noexcept { return tokens.rows(); }
  std::size_t local_count() const noexcept { return tokens.rows() == 0 ? 0 : tokens.rows() - 1; }
};

struct GaussianNodeSet {
  Matrix mu;
  Matrix sigma;  // empty when the uncertainty channel is disabled
};

struct PatchGraph {
  Matrix adjacency;
  std::vector<double> degree;
};

struct ModalFeature {
  Modality modality = Modality::R;
  Matrix x_tilde;  // 1 x D
};

struct GpgrParams {
  GpgrConfig config;
  ParamSet weights;
};

// Parameter names. Projections are shared across modalities unless the
// config says otherwise; graph-convolution and fusion weights are per modality.
std::string fc_name(const GpgrConfig& cfg, Modality m, const char* which, const char* part);
std::string layer_name(Modality m, const char* channel, std::size_t layer);
std::string fuse_name(Modality m);
inline const std::string kPhiName = "gpgr.phi";

void init_params(ParamSet& params, const GpgrConfig& cfg, RngStream& rng);

double phi_value(const ParamSet& params);
// Inverse of softplus, used to store a positive phi as an unconstrained scalar.
double phi_to_raw(double phi);

// ---- tape-level building blocks -------------------------------------------

struct NodeVars {
  Var mu;
  Var sigma;  // invalid when uncertainty is disabled
};

NodeVars project_gaussian_nodes(Var tokens, Binding& p, Modality m, const GpgrConfig& cfg);
// Pairwise squared Euclidean distances between rows.
Var pairwise_sq_dist(Var x);
// Median of the strictly-upper-triangular entries (differentiable gather).
Var median_offdiag(Var sq_dist);
// exp(-d^2 / tau) off the diagonal, ones on it, zeroed outside `keep`.
Var heat_kernel(Var sq_dist, Var tau, const Matrix& keep);
Var build_patch_graph(Var mu, const GpgrConfig& cfg);
// D^{-1/2} A D^{-1/2}; throws DomainError on a zero-degree row.
Var sym_normalize(Var adjacency);
NodeVars gpgcn_forward(const NodeVars& nodes, Var adjacency, Binding& p, Modality m,
                       const GpgrConfig& cfg);
// Train mode draws eps from rng; eval mode returns mu.
Var sample_nodes(const NodeVars& nodes, Mode mode, RngStream& rng);
Var aggregate_global(Var sampled, Binding& p, Modality m, const GpgrConfig& cfg);
Var class_token_kl(const NodeVars& projected);

struct ForwardVars {
  NodeVars projected;
  Var adjacency;
  NodeVars propagated;
  Var sampled;
  Var x_tilde;
  Var class_kl;  // invalid when uncertainty is disabled
};

ForwardVars forward(Var tokens, Binding& p, Modality m, const GpgrConfig& cfg, Mode mode,
                    RngStream& rng);

// ---- value-level operations ------------------------------------------------

GaussianNodeSet project_gaussian_nodes(const PatchFeatureSet& feats, const GpgrParams& params);
PatchGraph build_patch_graph(const GaussianNodeSet& nodes, const GpgrParams& params);
GaussianNodeSet gpgcn_forward(const GaussianNodeSet& nodes, const PatchGraph& graph,
                              const GpgrParams& params, Modality m);
Matrix sample_nodes(const GaussianNodeSet& nodes, Mode mode, RngStream& rng);
ModalFeature aggregate_global(const Matrix& sampled, const GpgrParams& params, Modality m);
double class_token_kl(const GaussianNodeSet& nodes);
ModalFeature forward(const PatchFeatureSet& feats, const GpgrParams& params, Mode mode,
                     RngStream& rng);

}  // namespace ugg::gpgr
