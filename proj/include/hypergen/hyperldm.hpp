#pragma once

#include <cstdint>
#include <vector>

#include "hypergen/ad/optim.hpp"
#include "hypergen/ad/tensor.hpp"
#include "hypergen/hyperclip.hpp"
#include "hypergen/hypernet.hpp"
#include "hypergen/rng.hpp"

// Latent diffusion over generator latents: a linear-schedule DDPM whose noise
// network is conditioned on a sinusoidal time embedding and a task descriptor
// (zeros acting as the null token). Sampling supports classifier-free guidance
// and HyperCLIP-based classifier guidance.
namespace hypergen::ldm {

enum class SigmaMode { Beta, Tilde };  // sigma_t^2 = beta_t, or the posterior variance

// One-based timesteps t in {1..T}; vectors store t at index t-1.
struct DiffusionSchedule {
    int T = 0;
    SigmaMode mode = SigmaMode::Beta;
    std::vector<double> beta;
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // running product of alpha
    std::vector<double> sigma;      // reverse-process noise std per mode
};

// Linear beta from beta1 to betaT inclusive. Requires T >= 2 and
// 0 < beta1 <= betaT < 1.
DiffusionSchedule make_schedule(int T, double beta1, double betaT,
                                SigmaMode mode = SigmaMode::Beta);

// Closed-form forward marginal: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
ad::Tensor q_sample(const ad::Tensor& z0, int t, const ad::Tensor& eps,
                    const DiffusionSchedule& sched);

// Interleaved sin/cos positional embedding of t at geometrically spaced
// frequencies (base 10000). d_t must be even.
ad::Tensor time_embed(int t, int d_t);

// One trunk block of the noise network: a fully-connected layer over the
// running activation with the conditioning re-concatenated, gated by a
// squeeze-and-excitation bottleneck, plus a linear skip from the block input.
struct NoiseBlock {
    ad::Tensor w, b;          // (h, m + d_t + d_e), (h)
    ad::Tensor skip;          // (h, m) residual projection
    ad::Tensor se_w1, se_b1;  // (h / 4, h), (h / 4)
    ad::Tensor se_w2, se_b2;  // (h, h / 4), (h)
};

struct NoiseNetParams {
    int d_z = 0, d_t = 0, d_e = 0;
    std::vector<NoiseBlock> blocks;
    ad::Tensor w_out, b_out;  // (d_z, h_last), zero-initialized
    std::vector<ad::Tensor> all() const;
};

struct LDMConfig {
    int T = 100;               // paper-scale schedule uses 350
    double beta1 = 1e-4;
    double betaT = 0.06;
    SigmaMode sigma_mode = SigmaMode::Beta;
    std::vector<int> hidden = {256, 512, 256};
    int d_t = 150;
    double p_drop = 0.1;       // conditioning dropout
    int epochs = 1000;
    double lr = 2.5e-4;
    int batch = 128;
    double clip_norm = 10.0;
    double tau_g = 10.0;       // classifier-guidance likelihood scale
    uint64_t seed = 1;

    void validate() const;  // throws config_error
};

NoiseNetParams init_noise_net(int d_z, int d_e, const LDMConfig& cfg, uint64_t seed);

// eps_hat = psi(z_t, t, e). e must be a descriptor or the all-zeros null
// token, length d_e. Batch form takes one (z, t, e) triple per row.
ad::Tensor noise_net(const ad::Tensor& z_t, int t, const ad::Tensor& e,
                     const NoiseNetParams& psi);
ad::Tensor noise_net_batch(const ad::Tensor& zs, const std::vector<int>& ts,
                           const ad::Tensor& es, const NoiseNetParams& psi);

// Per-dimension standardization applied to latents before diffusion and
// inverted after sampling. Stored in the checkpoint alongside psi.
struct LatentStats {
    std::vector<double> mean;
    std::vector<double> std;  // floored at 1e-8 for degenerate dimensions
};

LatentStats latent_stats(const ad::Tensor& latents);
ad::Tensor standardize(const ad::Tensor& latents, const LatentStats& stats);
ad::Tensor destandardize(const ad::Tensor& z, const LatentStats& stats);

// Mean over rows of ||eps - psi(q_sample(z0, t, eps), t, e)||^2. Rows of es
// already reflect conditioning dropout (zeroed where dropped).
ad::Tensor ldm_loss_batch(const NoiseNetParams& psi, const ad::Tensor& z0s,
                          const std::vector<int>& ts, const ad::Tensor& epss,
                          const ad::Tensor& es, const DiffusionSchedule& sched);

// One optimizer step on a minibatch: draws t ~ U{1..T}, eps ~ N(0, I), and
// zeroes each descriptor row with probability p_drop, using the given stream.
double ldm_train_step(NoiseNetParams& psi, ad::Adam& opt, const ad::Tensor& z0s,
                      const ad::Tensor& es, const DiffusionSchedule& sched, double p_drop,
                      double clip_norm, Rng& rng);

struct LDMTrainResult {
    NoiseNetParams psi;
    DiffusionSchedule sched;
    LatentStats stats;
    std::vector<double> loss_curve;  // one mean loss per epoch
};

// Trains the noise network on standardized latents. Descriptor rows that are
// all zeros stay unconditional for their whole life (masked tasks); the rest
// are zeroed per sample with probability cfg.p_drop.
LDMTrainResult ldm_train(const ad::Tensor& latents, const ad::Tensor& descriptors,
                         const LDMConfig& cfg);

// Classifier-free mixing: (1 - gamma) eps_u + gamma eps_c.
ad::Tensor cfg_mix(const ad::Tensor& eps_u, const ad::Tensor& eps_c, double gamma);

// One reverse step: (z_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t)
// + sigma_t xi, with the noise term suppressed at t = 1.
ad::Tensor ddpm_step(const ad::Tensor& z_t, int t, const ad::Tensor& eps_hat,
                     const ad::Tensor& xi, const DiffusionSchedule& sched);

// Ancestral sampling from pure noise down to t = 1, classifier-free guided by
// gamma. e may be undefined only when gamma = 0 (unconditional); gamma 0 and 1
// evaluate a single noise-net branch, so those cases are bit-exact
// specializations rather than mixed estimates. Returns a latent in the
// original (destandardized) space.
ad::Tensor sample_latent(const ad::Tensor& e, double gamma, const NoiseNetParams& psi,
                         const DiffusionSchedule& sched, const LatentStats& stats,
                         uint64_t seed);

// Classifier-guided noise estimate (guidance strength eta >= 0):
// eps_c - eta sigma_t grad_z [tau_g cos(CLIP_H(h(destd(z_t), theta)), e)].
// The generator consumes destandardized latents, so the standardization used
// in training must be supplied; identity stats recover the literal form.
ad::Tensor classifier_guided_eps(const ad::Tensor& z_t, int t, const ad::Tensor& e,
                                 double eta, const NoiseNetParams& psi,
                                 const clip::HyperCLIPParams& clip_params,
                                 const nets::HyperParams& gen, const DiffusionSchedule& sched,
                                 const LatentStats& stats, double tau_g);

// The shared perturbation arithmetic: eps_c - eta sigma_t grad. Exposed so
// analytic-score tests can drive the identical combination code path.
ad::Tensor guided_eps_from(const ad::Tensor& eps_c, const ad::Tensor& grad_log_like,
                           double eta, double sigma_t);

// Ancestral sampling with the classifier-guided estimate at every step.
ad::Tensor sample_latent_guided(const ad::Tensor& e, double eta, const NoiseNetParams& psi,
                                const clip::HyperCLIPParams& clip_params,
                                const nets::HyperParams& gen, const DiffusionSchedule& sched,
                                const LatentStats& stats, double tau_g, uint64_t seed);

}  // namespace hypergen::ldm
