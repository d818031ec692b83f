#pragma once

#include <cstdint>
#include <vector>

#include "hypergen/ad/tensor.hpp"

namespace hypergen::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Updates parameter values in place; call step()
// once per optimizer step with gradients aligned to the parameter list.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void step(const std::vector<Tensor>& grads);

    int64_t t() const { return t_; }
    AdamConfig& config() { return cfg_; }
    const std::vector<Tensor>& params() const { return params_; }

    // Raw moment access for checkpointing.
    std::vector<std::vector<double>>& m() { return m_; }
    std::vector<std::vector<double>>& v() { return v_; }
    void set_t(int64_t t) { t_ = t; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// sqrt of the summed squared entries across all tensors.
double global_norm(const std::vector<Tensor>& ts);

// Scales grads in place so their global norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

// p -= lr * g, in place.
void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr);

}  // namespace hypergen::ad
