#pragma once

#include <cstdint>
#include <vector>

#include "hypergen/ad/tensor.hpp"
#include "hypergen/base_net.hpp"

// Weight generator h(z, theta): a one-hidden-layer MLP from a latent (or a
// task descriptor, in conditional use) to the base net's flat weight vector.
// Serves as the unconditional generator, the conditional multitask model, and
// the VAE decoder.
namespace hypergen::nets {

struct HyperConfig {
    int d_in = 16;          // latent dim d_z, or d_e when conditioned directly
    int hidden = 64;        // paper-scale value is 256; desk default stays small
    double out_scale = 0.5;  // output-layer init damping, see init_hnet

    void validate() const;  // throws config_error
};

struct HyperParams {
    ad::Tensor w1, b1;  // (hidden, d_in), (hidden)
    ad::Tensor w2, b2;  // (dim_w, hidden), (dim_w)
    std::vector<ad::Tensor> all() const { return {w1, b1, w2, b2}; }
};

struct HnetInit {
    HyperParams params;
    ad::Tensor z0;  // initial latent ~ N(0, I), dim d_in
};

// Kaiming-initialized theta with the output layer damped by out_scale, plus a
// Gaussian initial latent. The damping keeps generated weights near the base
// net's own init scale; init throws config_error if the expected per-layer
// standard deviation of h(z, theta) leaves the [0.2, 5] x Kaiming-target band.
HnetInit init_hnet(const HyperConfig& cfg, const Manifest& manifest, uint64_t seed);

// Plain MLP forward (no fan-in scaling): relu(z W1' + b1) W2' + b2.
// Differentiable w.r.t. z and all of theta.
ad::Tensor hnet_forward(const ad::Tensor& z, const HyperParams& params);          // rank-1
ad::Tensor hnet_forward_batch(const ad::Tensor& zs, const HyperParams& params);  // (n, d_in)

// Per-layer standard deviation of the weight blocks of a generated flat
// vector, divided by the base net's stored init scale sqrt(2).
std::vector<double> generated_scale_ratios(const ad::Tensor& flat, const Manifest& manifest);

}  // namespace hypergen::nets
