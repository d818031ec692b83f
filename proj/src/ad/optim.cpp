#include "hypergen/ad/optim.hpp"

#include <cmath>

#include "hypergen/errors.hpp"
#include "hypergen/kernels.hpp"

namespace hypergen::ad {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size())
        throw shape_error("Adam::step: gradient count does not match parameters");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto p = params_[i].mutable_data();
        const auto g = grads[i].data();
        if (g.size() != p.size()) throw shape_error("Adam::step: gradient shape mismatch");
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            p[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
        }
    }
}

double global_norm(const std::vector<Tensor>& ts) {
    double acc = 0.0;  // serial accumulation keeps this bit-stable
    for (const Tensor& t : ts)
        acc += kernels::sumsq(t.data().data(), static_cast<size_t>(t.size()));
    return std::sqrt(acc);
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (Tensor& g : grads)
            for (double& x : g.mutable_data()) x *= s;
    }
    return norm;
}

void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
    if (grads.size() != params.size())
        throw shape_error("sgd_step: gradient count does not match parameters");
    for (size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        const auto g = grads[i].data();
        if (g.size() != p.size()) throw shape_error("sgd_step: gradient shape mismatch");
        for (size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    }
}

}  // namespace hypergen::ad
