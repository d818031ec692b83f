#pragma once

#include <cstdint>
#include <vector>

#include "hypergen/ad/tensor.hpp"
#include "hypergen/base_net.hpp"
#include "hypergen/hypernet.hpp"

// Reverse hypernetwork: encodes a flat weight vector into the task-descriptor
// embedding space. Trained contrastively against descriptor embeddings, it
// serves three consumers: task identification (softmax over cosine
// similarities), latent-space guidance of the generator, and classifier
// guidance inside latent diffusion.
namespace hypergen::clip {

// dim(W) -> hidden (tanh) -> d_e, plus a learnable logit scale. The scale is
// stored as log_tau so positivity is structural; tau_inv() recovers it.
struct HyperCLIPParams {
    ad::Tensor w1, b1;     // (hidden, dim_w), (hidden)
    ad::Tensor w2, b2;     // (d_e, hidden), (d_e)
    ad::Tensor log_tau;    // scalar, logit scale = exp(log_tau)
    ad::Tensor tau_inv() const;
    int d_e() const { return w2.defined() ? static_cast<int>(w2.shape()[0]) : 0; }
    std::vector<ad::Tensor> all() const { return {w1, b1, w2, b2, log_tau}; }
};

struct HyperCLIPConfig {
    double hidden_scale = 0.25;     // hidden = 256 s
    double tau_inv_init = 1.0 / 0.07;  // standard logit-scale init; 1.0 = strict
    bool learn_tau = true;
    int epochs = 600;
    double lr = 3e-4;
    int batch_tasks = 64;  // distinct tasks per contrastive batch
    double clip_norm = 10.0;
    uint64_t seed = 1;

    int hidden() const;
    void validate() const;  // throws config_error
};

HyperCLIPParams init_hyperclip(int dim_w, int d_e, const HyperCLIPConfig& cfg, uint64_t seed);

// Raw (unnormalized) embeddings; callers normalize where the math requires a
// direction and must reject zero embeddings there.
ad::Tensor hyperclip_encode(const nets::BaseWeights& w, const HyperCLIPParams& p);
ad::Tensor hyperclip_encode_rows(const ad::Tensor& ws, const HyperCLIPParams& p);

// Symmetric contrastive loss over row-normalized embedding matrices T
// (descriptors) and H (weight embeddings): softmax cross-entropy of
// tau_inv * T H^T against the identity pairing, averaged over both softmax
// directions. Rows must be unit-norm within 1e-6.
ad::Tensor clip_matrix_loss(const ad::Tensor& t_rows, const ad::Tensor& h_rows,
                            const ad::Tensor& tau_inv);
ad::Tensor clip_matrix_loss(const ad::Tensor& t_rows, const ad::Tensor& h_rows,
                            double tau_inv);

// One contrastive batch: rows of ws are encoded and matched against the
// descriptor rows selected by ids (ids index rows of `descriptors`).
// Duplicate ids make the matching ill-posed and are rejected.
ad::Tensor contrastive_batch_loss(const ad::Tensor& ws, const std::vector<int>& ids,
                                  const ad::Tensor& descriptors, const HyperCLIPParams& p);

struct CLIPTrainResult {
    HyperCLIPParams params;
    std::vector<double> loss_curve;  // one mean loss per epoch
};

// Contrastive training on a weight corpus. task_ids[i] names the task of
// corpus row i and indexes rows of `descriptors`; each epoch shuffles the
// distinct tasks into batches and draws one corpus entry per task, so a batch
// never repeats a task. Adam, gradients clipped to cfg.clip_norm; the logit
// scale trains only when cfg.learn_tau. Deterministic in (inputs, cfg).
CLIPTrainResult train_hyperclip(const ad::Tensor& ws, const std::vector<int>& task_ids,
                                const ad::Tensor& descriptors, const HyperCLIPConfig& cfg);

// Softmax over tau_inv * cos(CLIP_H(W), e_j) for candidate descriptor rows.
// Throws numeric_error when the embedding has no direction (zero norm).
std::vector<double> task_inference(const nets::BaseWeights& w, const ad::Tensor& candidates,
                                   const HyperCLIPParams& p);

// Guidance objective: -cos(CLIP_H(h(z, theta)), e_t) + lambda * ||z - z0||
// (unsquared by default; the norm's subgradient at z = z0 is 0).
ad::Tensor guidance_loss(const ad::Tensor& z, const ad::Tensor& z0, const ad::Tensor& e_t,
                         const nets::HyperParams& gen, const HyperCLIPParams& p, double lambda,
                         bool squared_penalty = false);

// Plain gradient descent on the guidance objective starting at z0. e_t must
// be unit-norm; a zero HyperCLIP embedding anywhere on the trajectory aborts
// with numeric_error.
ad::Tensor hyperclip_guidance(const ad::Tensor& z0, const ad::Tensor& e_t,
                              const nets::HyperParams& gen, const HyperCLIPParams& p,
                              double lambda, int steps, double lr,
                              bool squared_penalty = false);

}  // namespace hypergen::clip
