#pragma once

// Uncertainty-guided mixture of experts. Each modality owns C experts and a
// softmax gate; every modality donates its top-k experts to the other
// modalities, so each gate mixes C + k(M-1) experts. A per-sample Gaussian
// (mean, std) over the modality feature supplies the uncertainty used by the
// routing loss.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ugg/modality.hpp"
#include "ugg/numerics/autodiff.hpp"
#include "ugg/numerics/matrix.hpp"
#include "ugg/numerics/params.hpp"
#include "ugg/numerics/rng.hpp"

namespace ugg::ugmoe {

inline constexpr double kSigmaFloor = 1e-6;

enum class ExpertInput { XTilde, MuTilde };

struct UgmoeConfig {
  std::size_t dim = 64;
  std::size_t experts = 4;  // C
  std::size_t top_k = 1;    // k
  std::size_t hidden = 0;   // expert hidden width; 0 means dim
  // false: plain softmax top-k routing without the sample Gaussian.
  bool uncertainty = true;
  ExpertInput expert_input = ExpertInput::XTilde;

  std::size_t hidden_width() const noexcept { return hidden == 0 ? dim : hidden; }
  std::size_t bank_size() const noexcept { return experts + top_k * (kModalityCount - 1); }
};

void validate(const UgmoeConfig& cfg);

struct SampleGaussian {
  Modality modality = Modality::R;
  Matrix mu;     // 1 x D
  Matrix sigma;  // 1 x D, positive
};

struct GateDecision {
  Modality modality = Modality::R;
  std::vector<double> own_scores;     // C, sums to 1
  std::vector<std::size_t> selected;  // k largest, ties to the lower index
};

struct BankEntry {
  Modality source = Modality::R;
  std::size_t expert = 0;  // index among the source modality's C experts
  double raw_score = 0.0;
};

// Own experts first (index order), then each other modality's donated
// experts in modality order R, N, T and selection rank.
struct ExpertBank {
  Modality target = Modality::R;
  std::vector<BankEntry> entries;
  std::vector<double> weights;  // raw scores renormalized to sum to 1
};

struct FusedFeature {
  std::array<Matrix, kModalityCount> per_modality;  // each 1 x D
  Matrix concat;                                    // 1 x 3D, order R, N, T
};

struct UgmoeParams {
  UgmoeConfig config;
  ParamSet weights;
};

std::string param_name(Modality m, const std::string& what);
std::string expert_name(Modality m, std::size_t expert, const char* part);
void init_params(ParamSet& params, const UgmoeConfig& cfg, RngStream& rng);

// ---- tape level ---------------------------------------------------------------

struct SampleVars {
  Var mu;
  Var sigma;
};

struct GateVars {
  Modality modality = Modality::R;
  Var scores;  // 1 x C
  std::vector<std::size_t> selected;
};

struct BankVars {
  Modality target = Modality::R;
  std::vector<BankEntry> entries;
  Var weights;  // 1 x E
};

SampleVars sample_gaussian(Var x_tilde, Binding& p, Modality m);
Var sample_kl(const SampleVars& sg);
GateVars gate(Var x_tilde, Binding& p, Modality m, const UgmoeConfig& cfg);
BankVars assemble_bank(std::span<const GateVars> decisions, Modality target,
                       const UgmoeConfig& cfg);
Var expert_forward(Var input, Binding& p, Modality source, std::size_t expert);
Var mixture_forward(const BankVars& bank, Var input, Binding& p);
// (1/E) sum_c mean(sigma_src(c)^2) * w_c; sgs indexed by modality.
Var routing_uncertainty_loss(const BankVars& bank, std::span<const SampleVars> sgs);
// (1/E) sum_c f_c P_c over a batch of banks for one modality. f_c (argmax
// share) is a constant; P_c (mean weight) is differentiable.
Var load_balance_loss(std::span<const BankVars> batch);

// ---- value level --------------------------------------------------------------

SampleGaussian sample_gaussian(const Matrix& x_tilde, const UgmoeParams& params, Modality m);
double sample_kl(const SampleGaussian& sg);
GateDecision gate(const Matrix& x_tilde, const UgmoeParams& params, Modality m);
// Softmax + top-k on explicit logits.
GateDecision gate_from_logits(std::span<const double> logits, std::size_t top_k, Modality m);
ExpertBank assemble_bank(std::span<const GateDecision> decisions, const UgmoeConfig& cfg,
                         Modality target);
Matrix mixture_forward(const ExpertBank& bank, const Matrix& input, const UgmoeParams& params);
double routing_uncertainty_loss(const ExpertBank& bank, std::span<const SampleGaussian> sgs);
double load_balance_loss(std::span<const ExpertBank> batch);
FusedFeature fuse(std::span<const Matrix> per_modality_in_order);

// k largest indices, ties broken by the lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);
// First maximal index.
std::size_t argmax(std::span<const double> values);

}  // namespace ugg::ugmoe
