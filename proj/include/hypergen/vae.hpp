#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hypergen/ad/tensor.hpp"
#include "hypergen/base_net.hpp"
#include "hypergen/hypernet.hpp"

// Variational autoencoder over flat base-net weight vectors. The encoder maps
// W to a diagonal Gaussian (mu, logvar) in latent space; the decoder is the
// same MLP family as the weight generator, so a trained decoder drops into
// every consumer of h(z, theta) unchanged. Provides the latent space used by
// gradient guidance and latent diffusion.
namespace hypergen::vae {

// Three-layer encoder trunk: dim(W) -> h1 -> h2 -> 2 d_z, relu between
// layers, the output head split exactly in half as (means, log-variances).
struct EncoderParams {
    ad::Tensor w1, b1;  // (h1, dim_w), (h1)
    ad::Tensor w2, b2;  // (h2, h1),   (h2)
    ad::Tensor w3, b3;  // (2 d_z, h2), (2 d_z)
    std::vector<ad::Tensor> all() const { return {w1, b1, w2, b2, w3, b3}; }
    int d_z() const { return w3.defined() ? static_cast<int>(w3.shape()[0]) / 2 : 0; }
};

struct VAEConfig {
    int d_z = 16;
    double hidden_scale = 0.25;  // encoder hiddens = 512 s and 256 s
    int decoder_hidden = 64;
    double decoder_out_scale = 0.5;
    double beta_kl = 1e-3;
    double warmup_frac = 0.1;  // linear KL warmup over this fraction of epochs
    int epochs = 2000;
    double lr = 1e-4;
    int batch = 32;
    double clip_norm = 1000.0;  // applied to encoder and decoder independently
    uint64_t seed = 1;

    int h1() const;
    int h2() const;
    void validate() const;  // throws config_error
};

// Kaiming-initialized trunk with a zero final layer, so an untrained encoder
// emits mu = 0, logvar = 0 (unit posterior, zero KL) for every input.
EncoderParams init_encoder(int dim_w, const VAEConfig& cfg, uint64_t seed);

// Posterior parameters of one weight vector / a batch of them (rows).
std::pair<ad::Tensor, ad::Tensor> vae_encode(const nets::BaseWeights& w,
                                             const EncoderParams& enc);
std::pair<ad::Tensor, ad::Tensor> vae_encode_rows(const ad::Tensor& ws,
                                                  const EncoderParams& enc);

// z = mu + exp(logvar / 2) * eps, elementwise over matching shapes.
ad::Tensor reparameterize(const ad::Tensor& mu, const ad::Tensor& logvar,
                          const ad::Tensor& eps);

// Closed-form KL(N(mu, diag exp logvar) || N(0, I)). Rank-1 inputs give the
// single divergence; (n, d_z) inputs give the mean over rows.
ad::Tensor gaussian_kl(const ad::Tensor& mu, const ad::Tensor& logvar);

// Mean-squared weight reconstruction plus beta-weighted KL for one sample:
//   ||W - h(z, theta)||^2 / dim(W) + beta_kl * KL,  z = reparameterize(.., eps).
// eps is passed in so callers control the noise stream.
ad::Tensor vae_loss(const nets::BaseWeights& w, const EncoderParams& enc,
                    const nets::HyperParams& dec, double beta_kl, const ad::Tensor& eps);

// Batch version over weight rows; eps has shape (rows, d_z). Reconstruction
// and KL are both averaged over the batch.
ad::Tensor vae_loss_rows(const ad::Tensor& ws, const EncoderParams& enc,
                         const nets::HyperParams& dec, double beta_kl, const ad::Tensor& eps);

struct VAETrainResult {
    EncoderParams enc;
    nets::HyperParams dec;
    nets::HyperConfig dec_cfg;
    std::vector<double> loss_curve;  // one mean loss per epoch
};

// Adam training of encoder and decoder on a corpus of weight rows (n, dim_w)
// laid out per manifest. KL weight warms up linearly over the first
// warmup_frac of epochs; encoder and decoder gradients are clipped to
// cfg.clip_norm independently. Deterministic in (corpus, cfg). Throws
// numeric_error with the epoch position if the loss leaves the finite range.
VAETrainResult vae_train(const ad::Tensor& corpus_ws, const nets::Manifest& manifest,
                         const VAEConfig& cfg);

}  // namespace hypergen::vae
