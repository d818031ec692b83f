#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hypergen/checkpoint.hpp"
#include "hypergen/hyperclip.hpp"
#include "hypergen/hyperldm.hpp"
#include "hypergen/meta.hpp"
#include "hypergen/tasks.hpp"
#include "hypergen/vae.hpp"

// Experiment orchestration: the zero-shot/few-shot evaluation protocol, the
// accuracy-vs-gamma and accuracy-vs-descriptor-fraction sweeps, config
// loading, checkpoint resume, and CSV emission. Everything downstream of a
// config is deterministic, so any metric cell can be reproduced from
// (config, seeds, checkpoints) alone.
namespace hypergen::harness {

// The comparison rows. "Untrained" is the random-weights floor; the mnet/hnet
// rows are the trained baselines; the last four generate weights from a
// descriptor via guidance over a generator (the meta-learned hypernetwork or
// the VAE decoder) or via conditional latent diffusion.
enum class Method {
    Untrained,
    MNetMultitask,
    MNetMaml,
    MNetFomaml,
    HNetMamlUncond,
    HNetMamlCond,
    HNetMultitaskCond,
    HNetHyperclip,
    HVaeHyperclip,
    HNetHyperldm,
    HVaeHyperldm,
};

const char* method_name(Method m);
Method method_from_name(const std::string& name);  // throws config_error
bool method_needs_descriptor(Method m);
std::vector<Method> all_methods();

struct GuidanceConfig {
    double lambda = 0.01;
    int steps = 10;
    double lr = 0.1;
    void validate() const;
};

struct EvalConfig {
    int n_support = 32;        // few-shot support size
    int n_query = 200;         // fixed per-universe query set size
    int adapt_steps = 50;      // few-shot adaptation steps, all methods
    double w_lr = 0.01;        // few-shot rate when weights adapt directly
    double latent_lr = 0.03;   // few-shot rate for latent/embedding adaptation
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    double gamma = 1.5;        // classifier-free weight for diffusion rows
    double fraction = 1.0;     // eval-time descriptor availability
    GuidanceConfig guidance;

    void validate() const;  // throws config_error
};

struct ExperimentConfig {
    std::string out_dir = "out";
    tasks::UniverseConfig universe;
    nets::BaseNetConfig base;     // classes must match the universe
    nets::HyperConfig hypernet;   // generator family; d_in is the latent width
    std::map<meta::Variant, meta::TrainConfig> trainers;  // defaults per variant
    meta::CorpusConfig corpus;
    vae::VAEConfig vae;
    clip::HyperCLIPConfig hyperclip;
    ldm::LDMConfig hyperldm;  // shared by both generator flavors
    EvalConfig eval;
    std::vector<Method> methods = all_methods();
    std::vector<double> sweep_gammas = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0};
    std::vector<double> sweep_fractions = {1.0, 0.5, 0.1};
    uint64_t init_seed = 7;  // base stream for parameter initializations

    void validate() const;  // throws config_error
};

// Defaults everywhere; the trainer map is filled for every variant.
ExperimentConfig default_config();

// Strict JSON: unknown keys anywhere are config errors, so a typo cannot
// silently fall back to a default. Missing keys keep their defaults.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Canonical serialization of every field (sorted keys). Two configs with
// equal canonical forms run identical experiments.
std::string canonical_json(const ExperimentConfig& cfg);

// Output directory after the HYPERGEN_OUT environment override.
std::string resolve_out_dir(const ExperimentConfig& cfg);

// Stage names, dependency-ordered:
//   universe, trainers, corpus, vae, hyperclip, hyperldm, eval
extern const std::vector<std::string> kStageOrder;

// Fingerprint of the config slice a stage depends on (its own block, the
// blocks upstream of it, and nothing else). Stored in the stage's checkpoint
// and validated on resume.
uint64_t stage_fingerprint(const ExperimentConfig& cfg, const std::string& stage);

// ---------------------------------------------------------------------------
// Trained artifacts

struct Artifacts {
    nets::BaseNetConfig base_cfg;
    nets::Manifest manifest;
    std::map<meta::Variant, meta::MetaModel> models;

    // Weight corpus (generated from hnet-maml-uncond adaptations).
    ad::Tensor corpus_w;  // (n, dim_w)
    ad::Tensor corpus_z;  // (n, d_z of the hypernetwork)
    ad::Tensor corpus_e;  // (n, d_e) descriptor rows per entry
    std::vector<int> corpus_task;
    std::vector<int> corpus_repeat;

    vae::VAETrainResult vae;          // decoder doubles as the HVAE generator
    clip::CLIPTrainResult hyperclip;
    ldm::LDMTrainResult ldm_hnet;     // diffusion over adapted hypernet latents
    ldm::LDMTrainResult ldm_hvae;     // diffusion over VAE posterior means

    bool has_model(meta::Variant v) const { return models.count(v) > 0; }
    bool has_corpus() const { return corpus_w.defined(); }
    bool has_vae() const { return vae.dec.w1.defined(); }
    bool has_hyperclip() const { return hyperclip.params.w1.defined(); }
    bool has_ldm_hnet() const { return !ldm_hnet.psi.blocks.empty(); }
    bool has_ldm_hvae() const { return !ldm_hvae.psi.blocks.empty(); }
};

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
    std::string method;
    std::string setting;  // "zero-shot" | "few-shot"
    double mean = 0.0;    // accuracy in [0, 1]
    double stddev = 0.0;  // over seeds, >= 0
    int n_seeds = 0;
};

struct MetricsTable {
    std::vector<MetricsRow> rows;
};

// Percent with two decimals: method,setting,mean_pct,std_pct,n_seeds.
std::string metrics_csv(const MetricsTable& t);
MetricsTable parse_metrics_csv(const std::string& text);  // round-trips our output

// ---------------------------------------------------------------------------
// Evaluation protocol

// Weights a method produces for one test task with no access to support data
// (the descriptor and trained artifacts only). For the diffusion rows the
// latent is sampled with a per-(seed, task) stream; everything else is
// deterministic and ignores eval_seed except the untrained floor's draw.
nets::BaseWeights zero_shot_weights(Method m, const Artifacts& a, const tasks::Universe& u,
                                    int task_id, uint64_t eval_seed, const EvalConfig& cfg);

// Mean fixed-query accuracy of arbitrary per-task weights, the primitive
// under every zero-shot row (also handy for oracle checks in tests).
using WeightsOracle =
    std::function<nets::BaseWeights(int task_id, uint64_t eval_seed)>;
double query_accuracy(const WeightsOracle& oracle, const tasks::Universe& u,
                      const std::vector<int>& task_ids, uint64_t eval_seed, int n_query);

// Mean zero-shot query accuracy over the given tasks for one seed.
double zero_shot_accuracy(Method m, const Artifacts& a, const tasks::Universe& u,
                          const std::vector<int>& task_ids, uint64_t eval_seed,
                          const EvalConfig& cfg);

// Aggregates over cfg.seeds. Verifies that no support data was touched (the
// instrumentation counter must not move) and fails hard otherwise.
MetricsRow eval_zero_shot(Method m, const Artifacts& a, const tasks::Universe& u,
                          const std::vector<int>& task_ids, const EvalConfig& cfg);

// Few-shot: start from the method's zero-shot state, adapt the method's
// designated parameters (weights directly, or the latent/embedding behind the
// generator) for cfg.adapt_steps plain gradient-descent steps on a
// per-(seed, task) support set, then score the fixed query set.
MetricsRow eval_few_shot(Method m, const Artifacts& a, const tasks::Universe& u,
                         const std::vector<int>& task_ids, const EvalConfig& cfg);

// Both settings for every requested method, in a stable row order.
MetricsTable eval_methods(const std::vector<Method>& methods, const Artifacts& a,
                          const tasks::Universe& u, const EvalConfig& cfg);

// ---------------------------------------------------------------------------
// Sweeps

struct GammaSweep {
    std::vector<double> gammas;
    std::vector<std::vector<double>> per_seed;  // [gamma][seed] accuracies
    std::vector<double> mean;                   // per gamma, over seeds
    std::vector<double> stddev;
};

// Zero-shot accuracy of a diffusion method across guidance weights.
GammaSweep gamma_sweep(Method m, const Artifacts& a, const tasks::Universe& u,
                       const std::vector<int>& task_ids, const std::vector<double>& gammas,
                       const EvalConfig& cfg);
std::string gamma_sweep_csv(const GammaSweep& s);

struct FractionSweepCell {
    std::string method;
    double fraction = 1.0;
    double mean = 0.0;  // zero-shot accuracy in [0, 1]
    double stddev = 0.0;
    int n_seeds = 0;
    std::vector<double> per_seed;  // one accuracy per eval seed
};

struct FractionSweep {
    std::vector<FractionSweepCell> cells;
};
std::string fraction_sweep_csv(const FractionSweep& s);

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineOptions {
    std::vector<std::string> stages = kStageOrder;  // subset, any order
    bool force = false;     // recompute requested stages; accept upstream
                            // fingerprint mismatches instead of erroring
    bool require_deps = false;  // error on missing upstream checkpoints
                                // instead of building them
    bool verbose = true;
    std::vector<meta::Variant> train_variants;  // trainers stage: restrict to
                                                // these (empty = all needed)
};

struct PipelineResult {
    Artifacts artifacts;
    MetricsTable metrics;  // filled when the eval stage ran
    std::vector<std::string> ran;      // stages computed this call
    std::vector<std::string> resumed;  // stages loaded from checkpoints
};

// Executes the requested stages in dependency order, resuming every stage
// whose checkpoint exists with a matching fingerprint. Writes checkpoints,
// tasks.csv/descriptors.csv (universe stage) and metrics.csv (eval stage)
// under resolve_out_dir(cfg).
PipelineResult run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opt = {});

// Retrains descriptor-consuming components per fraction (the conditional
// multitask trainer masks tasks; the diffusion models mask only their
// conditional phase, keeping corpus and VAE from the unmasked run) and
// reports zero-shot accuracy. methods may contain MNetMultitask,
// HNetMultitaskCond, HNetHyperldm, HVaeHyperldm. Writes per-fraction
// checkpoints and fraction_sweep.csv.
FractionSweep fraction_sweep(const ExperimentConfig& cfg, const std::vector<Method>& methods,
                             const std::vector<double>& fractions,
                             const PipelineOptions& opt = {});

// Convenience wrapper over run_pipeline + gamma_sweep: resumes artifacts,
// sweeps cfg.sweep_gammas for the given diffusion method, writes
// gamma_sweep.csv.
GammaSweep run_gamma_sweep(const ExperimentConfig& cfg, Method m,
                           const PipelineOptions& opt = {});

}  // namespace hypergen::harness
