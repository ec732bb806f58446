#include "ugg/errors.hpp"
#include "ugg/objective.hpp"

namespace ugg::objective {

dataio::Dataset gradcheck_batch(std::size_t dim, std::size_t local_tokens, std::size_t identities,
                                std::size_t instances, std::uint64_t seed) {
  dataio::SyntheticSpec spec;
  spec.num_identities = identities;
  spec.instances_per_identity = instances;
  spec.dim = dim;
  spec.local_tokens = local_tokens;
  spec.train_instances = instances;
  spec.query_instances = 0;
  spec.occlusion_prob = 0.0;
  spec.conflict_prob = 0.0;
  spec.seed = seed;
  return dataio::generate(spec);
}

std::vector<GradReport> gradcheck_model(const TrainConfig& cfg, const dataio::Dataset& batch,
                                        const GradCheckOptions& options) {
  std::vector<const dataio::Sample*> samples;
  std::vector<std::uint32_t> labels;
  for (const dataio::Sample& s : batch.samples) {
    samples.push_back(&s);
    labels.push_back(s.label);
  }
  const Model base = init_model(cfg, batch.dim, batch.num_labels());
  const std::uint64_t noise = derive_stream(derive_stream(0, "reparam"), std::uint64_t{0});
  DifferentiableFn fn = [&](const ParamSet& params, ParamSet* grads) {
    Model model = base;
    model.params = params;
    Tape tape(grads != nullptr);
    Binding p(tape, model.params);
    const BatchForward fwd = forward_batch(tape, p, model, samples, Mode::Train, noise);
    const LossVars loss = loss_from_forward(fwd, labels, cfg);
    if (grads) {
      tape.backward(loss.total);
      *grads = p.gradients();
    }
    return loss.total.scalar();
  };
  return grad_check(fn, base.params, options);
}

}  // namespace ugg::objective
