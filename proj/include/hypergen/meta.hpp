#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hypergen/ad/optim.hpp"
#include "hypergen/ad/tape.hpp"
#include "hypergen/base_net.hpp"
#include "hypergen/hypernet.hpp"
#include "hypergen/rng.hpp"
#include "hypergen/tasks.hpp"

// Meta-learning trainers over the task universe. Six variants share one
// model container and two step kinds:
//
//   mnet-multitask      one weight vector W trained on pooled task data
//   mnet-maml           W0 meta-learned, adapted per task (first-order)
//   mnet-fomaml         alias schedule of the above; kept as a separate
//                       variant so runs are seeded independently
//   hnet-maml-uncond    generator theta plus latent init z0; adaptation in z
//   hnet-maml-cond      generator theta; adaptation starts at the task
//                       descriptor e_i, which is itself not meta-updated
//   hnet-multitask-cond generator theta driven directly by descriptors
//
// Ownership (which tensors the outer optimizer updates) follows the variant;
// everything else in the model receives an exactly-zero meta-gradient.
namespace hypergen::meta {

enum class Variant {
    MNetMultitask,
    MNetMaml,
    MNetFomaml,
    HNetMamlUncond,
    HNetMamlCond,
    HNetMultitaskCond,
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);  // throws config_error
bool is_hypernet(Variant v);
bool is_conditional(Variant v);   // consumes task descriptors
bool uses_adaptation(Variant v);  // trained with meta_outer_step

enum class AdaptOrder {
    First,  // inner gradients detached; outer gradients flow through the
            // adapted point with an identity Jacobian
    Exact,  // inner updates stay on the tape; outer gradients differentiate
            // through every inner step
};

struct AdaptConfig {
    double lr = 0.1;
    int steps_lo = 0;  // inclusive range the per-task step count is drawn from
    int steps_hi = 10;
    AdaptOrder order = AdaptOrder::First;

    bool resolved() const { return steps_lo == steps_hi; }
    void validate() const;  // throws config_error
};

// Copy of cfg with the step range collapsed to a drawn value.
AdaptConfig resolved_steps(AdaptConfig cfg, int k);
int draw_steps(const AdaptConfig& cfg, Rng& rng);

// Support loss as a function of the adapted parameter vector. The closure
// fixes everything else (generator weights, manifest, ...).
using SupportLoss =
    std::function<ad::Tensor(const ad::Tensor& params, const tasks::LabeledSet& support)>;

// k steps of gradient descent on loss_fn(params, support), k and the rate
// taken from cfg, which must be resolved (callers draw the step count first).
// lr == 0 or k == 0 returns init_params unchanged.
//
// Under an active tape, Exact order records the updates so meta-gradients
// flow through all steps (init_params must already require grad), while First
// order detaches the inner gradients, leaving only an identity path from
// init_params to the result. Without an active tape both orders compute the
// same values on private tapes and return a detached result.
ad::Tensor adapt(const ad::Tensor& init_params, const tasks::LabeledSet& support,
                 const AdaptConfig& cfg, const SupportLoss& loss_fn);

struct MetaModel {
    Variant variant = Variant::MNetMultitask;
    nets::BaseNetConfig base_cfg;
    nets::Manifest manifest;
    nets::HyperConfig hyper_cfg;  // hypernet variants only
    nets::BaseWeights w;          // mnet variants: shared weights / adaptation init
    nets::HyperParams h;          // hypernet variants: generator weights
    ad::Tensor z0;                // hypernet variants: latent init (owned only by
                                  // hnet-maml-uncond, frozen elsewhere)

    // Tensors the outer optimizer updates.
    std::vector<ad::Tensor> owned() const;
    // All defined parameter tensors, owned first; unowned ones must receive
    // exactly-zero meta-gradients.
    std::vector<ad::Tensor> all_params() const;
};

MetaModel init_meta(Variant v, const nets::BaseNetConfig& base_cfg,
                    const nets::HyperConfig& hyper_cfg, uint64_t seed);

struct TrainConfig {
    int epochs = 0;
    double meta_lr = 0.0;
    AdaptConfig adapt;    // ignored by multitask variants
    int meta_batch = 32;  // tasks per outer step
    int n_support = 32;   // fresh support draw per task per step
    int n_query = 32;     // fresh query draw per task per step
    int n_all = 64;       // pooled batch size for multitask steps
    double clip_norm = 10.0;
    double fraction = 1.0;  // descriptor availability for conditional variants
    uint64_t seed = 1;      // training stream: shuffling, splits, step counts

    void validate() const;  // throws config_error
};

// Schedule defaults per variant: epochs, outer rate, inner rate and step
// range, meta-batch 32, clip norm 10.
TrainConfig default_train_config(Variant v);

// Deterministic per-(step, task) seed for the fresh support/query split, so
// callers can re-materialize the exact data a step saw.
uint64_t task_split_seed(uint64_t step_seed, int task_id);

struct StepGrads {
    double loss = 0.0;  // mean loss over contributing tasks
    int n_tasks = 0;    // batch size after descriptor masking
    ad::GradMap grads;  // over all_params(), plus any adapted embeddings
};

// Mean task loss over the pooled data of each task in ids (no support/query
// split) and its gradients. Multitask variants only; conditional variants
// skip tasks whose descriptor is masked at tcfg.fraction and throw
// config_error when that empties the batch.
StepGrads multitask_grads(const MetaModel& m, const tasks::Universe& u,
                          const std::vector<int>& ids, const TrainConfig& tcfg,
                          uint64_t step_seed);

// Bi-level step gradients: per task, draw a fresh support/query split and a
// step count from tcfg.adapt, adapt the variant's per-task parameter (W for
// mnet, z from z0 for hnet-maml-uncond, e from the descriptor for
// hnet-maml-cond), and differentiate the mean query loss. MNet variants
// always adapt first-order; the configured order applies to latent and
// embedding adaptation.
StepGrads meta_outer_grads(const MetaModel& m, const tasks::Universe& u,
                           const std::vector<int>& ids, const TrainConfig& tcfg,
                           uint64_t step_seed);

// Full optimizer steps: gradients as above on the owned tensors, global-norm
// clipped to tcfg.clip_norm, applied with opt (which must hold exactly
// m.owned()). Return the mean step loss.
double multitask_step(MetaModel& m, const tasks::Universe& u, const std::vector<int>& ids,
                      const TrainConfig& tcfg, uint64_t step_seed, ad::Adam& opt);
double meta_outer_step(MetaModel& m, const tasks::Universe& u, const std::vector<int>& ids,
                       const TrainConfig& tcfg, uint64_t step_seed, ad::Adam& opt);

struct TrainResult {
    MetaModel model;
    std::vector<double> loss_curve;  // one mean loss per outer step
};

// Shuffled passes over the training tasks (conditional variants: over the
// descriptor-available subset) in meta-batches, one multitask or outer step
// each. Fully deterministic in (variant, universe, tcfg, init_seed).
TrainResult train_meta(Variant v, const tasks::Universe& u, const nets::BaseNetConfig& base_cfg,
                       const nets::HyperConfig& hyper_cfg, const TrainConfig& tcfg,
                       uint64_t init_seed);

struct CorpusEntry {
    ad::Tensor w_flat;               // generated weights, = hnet_forward(z, theta)
    ad::Tensor z;                    // adapted latent the weights decode from
    std::vector<double> descriptor;  // the task's embedding e_i
    int task_id = -1;
    int repeat = 0;
};

struct CorpusConfig {
    int repeats = 4;
    int n_support = 32;
    AdaptConfig adapt{0.1, 50, 50, AdaptOrder::First};
    uint64_t seed = 1;
};

// Weight corpus for the generative phases: for every training task and
// repeat, adapt z from z0 on a freshly drawn support set and store the
// resulting (W, z, e, task, repeat) record. Source model must be
// hnet-maml-uncond. Deterministic per cfg.seed; entries ordered by
// (task, repeat).
std::vector<CorpusEntry> collect_corpus(const MetaModel& trained, const tasks::Universe& u,
                                        const CorpusConfig& cfg);

}  // namespace hypergen::meta
