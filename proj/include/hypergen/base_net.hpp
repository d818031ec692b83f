#pragma once

#include <cstdint>
#include <vector>

#include "hypergen/ad/tensor.hpp"
#include "hypergen/tasks.hpp"

// The base classifier f(x, W): a small MLP over 2-D inputs whose flat weight
// vector W is the object every generator in this project produces. Weights
// use the scaled parametrization (pre-activations divided by sqrt(fan_in)),
// which keeps activation magnitudes comparable across hidden widths.
namespace hypergen::nets {

struct Layer {
    int in = 0;
    int out = 0;
    bool has_bias = true;
    int weight_count() const { return in * out; }
    int param_count() const { return in * out + (has_bias ? out : 0); }
};

using Manifest = std::vector<Layer>;

struct BaseNetConfig {
    int input_dim = 2;
    std::vector<int> hidden = {32, 32};
    int classes = 4;

    void validate() const;  // throws config_error
};

Manifest make_manifest(const BaseNetConfig& cfg);
int param_count(const Manifest& manifest);

// Flat layout per layer: row-major (out x in) weight block, then bias.
struct BaseWeights {
    ad::Tensor flat;  // rank-1, length param_count(manifest)
    Manifest manifest;
};

// Kaiming init in the scaled parametrization: stored weights ~ N(0, 2) with
// the 1/sqrt(fan_in) applied in the forward pass, so the effective weight
// variance is 2/fan_in per layer. Biases zero.
BaseWeights init_base(const BaseNetConfig& cfg, uint64_t seed);

// Layer rule: (weights . a) / sqrt(fan_in) + bias, relu between layers,
// no activation on the final layer. Differentiable in x and W.flat.
ad::Tensor base_forward(const ad::Tensor& x, const BaseWeights& w);

// Mean softmax cross-entropy over the batch. Differentiable w.r.t. W.flat.
ad::Tensor task_loss(const BaseWeights& w, const tasks::LabeledSet& batch);

// Fraction of batch rows whose argmax logit matches the label.
double accuracy(const BaseWeights& w, const tasks::LabeledSet& batch);

// Plain full-batch gradient descent on task_loss; w0 is left unmodified and
// steps=0 returns a bitwise copy. Throws numeric_error if the loss degrades
// to a non-finite value mid-run.
BaseWeights fine_tune(const BaseWeights& w0, const tasks::LabeledSet& support, int steps,
                      double lr);

}  // namespace hypergen::nets
