#include "hypergen/base_net.hpp"

#include <cmath>

#include "hypergen/ad/ops.hpp"
#include "hypergen/ad/tape.hpp"
#include "hypergen/errors.hpp"
#include "hypergen/rng.hpp"

namespace hypergen::nets {

void BaseNetConfig::validate() const {
    if (input_dim < 1) throw config_error("base_net: input_dim must be >= 1");
    if (classes < 2) throw config_error("base_net: classes must be >= 2");
    for (int h : hidden)
        if (h < 1) throw config_error("base_net: hidden widths must be positive");
}

Manifest make_manifest(const BaseNetConfig& cfg) {
    cfg.validate();
    Manifest m;
    int prev = cfg.input_dim;
    for (int h : cfg.hidden) {
        m.push_back({prev, h, true});
        prev = h;
    }
    m.push_back({prev, cfg.classes, true});
    return m;
}

int param_count(const Manifest& manifest) {
    int n = 0;
    for (const auto& l : manifest) n += l.param_count();
    return n;
}

BaseWeights init_base(const BaseNetConfig& cfg, uint64_t seed) {
    // Stored weights are unit scale (variance 2, the relu gain); the forward
    // pass divides by sqrt(fan_in), so the effective per-layer weight variance
    // is the Kaiming value 2/fan_in. Storing the scale in the parametrization
    // instead of the init keeps preactivation variance and gradient step sizes
    // width-invariant.
    Manifest m = make_manifest(cfg);
    std::vector<double> flat(param_count(m), 0.0);
    Rng rng(seed);
    size_t off = 0;
    for (const auto& l : m) {
        for (int i = 0; i < l.weight_count(); ++i) flat[off + i] = rng.normal(0.0, std::sqrt(2.0));
        off += l.param_count();  // biases stay zero
    }
    return BaseWeights{ad::Tensor::from_vector(flat), std::move(m)};
}

ad::Tensor base_forward(const ad::Tensor& x, const BaseWeights& w) {
    if (x.shape().size() != 2) throw shape_error("base_forward: x must be a matrix");
    if (w.manifest.empty()) throw shape_error("base_forward: empty manifest");
    if (x.cols() != w.manifest.front().in)
        throw shape_error("base_forward: input dim does not match manifest");
    if (w.flat.shape().size() != 1 ||
        w.flat.shape()[0] != param_count(w.manifest))
        throw shape_error("base_forward: flat weight length does not match manifest");

    ad::Tensor a = x;
    int off = 0;
    for (size_t li = 0; li < w.manifest.size(); ++li) {
        const Layer& l = w.manifest[li];
        ad::Tensor wmat =
            ad::reshape(ad::slice(w.flat, off, off + l.weight_count()), {l.out, l.in});
        ad::Tensor z = ad::mul_scalar(ad::matmul_nt(a, wmat), 1.0 / std::sqrt(double(l.in)));
        if (l.has_bias) {
            ad::Tensor b = ad::slice(w.flat, off + l.weight_count(), off + l.param_count());
            z = ad::add(z, b);
        }
        off += l.param_count();
        a = (li + 1 == w.manifest.size()) ? z : ad::relu(z);
    }
    return a;
}

ad::Tensor task_loss(const BaseWeights& w, const tasks::LabeledSet& batch) {
    if (batch.n() < 1) throw config_error("task_loss: batch must be non-empty");
    return ad::softmax_cross_entropy(base_forward(batch.x, w), batch.y);
}

double accuracy(const BaseWeights& w, const tasks::LabeledSet& batch) {
    if (batch.n() < 1) throw config_error("accuracy: batch must be non-empty");
    ad::PauseScope pause;
    ad::Tensor logits = base_forward(batch.x, w);
    int hits = 0;
    for (int i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < logits.cols(); ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        hits += (best == batch.y[i]);
    }
    return static_cast<double>(hits) / batch.n();
}

BaseWeights fine_tune(const BaseWeights& w0, const tasks::LabeledSet& support, int steps,
                      double lr) {
    if (steps < 0) throw config_error("fine_tune: steps must be >= 0");
    if (!(lr > 0.0)) throw config_error("fine_tune: lr must be > 0");
    BaseWeights w{w0.flat.detach(), w0.manifest};
    for (int s = 0; s < steps; ++s) {
        ad::Tape tape;
        ad::TapeScope scope(tape);
        tape.watch(w.flat);
        ad::Tensor loss = task_loss(w, support);  // non-finite ops throw here
        std::vector<ad::Tensor> grads = ad::grad(tape, loss, {w.flat}, false);
        const ad::Tensor& g = grads[0];
        std::vector<double> next(w.flat.data().begin(), w.flat.data().end());
        auto gs = g.data();
        for (size_t i = 0; i < next.size(); ++i) next[i] -= lr * gs[i];
        w.flat = ad::Tensor::from_vector(next);
    }
    return w;
}

}  // namespace hypergen::nets
