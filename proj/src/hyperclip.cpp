#include "hypergen/hyperclip.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "hypergen/ad/ops.hpp"
#include "hypergen/ad/optim.hpp"
#include "hypergen/ad/tape.hpp"
#include "hypergen/errors.hpp"
#include "hypergen/rng.hpp"

namespace hypergen::clip {

namespace {

// Frozen seed-stream tags (FNV-1a of the stream names).
constexpr uint64_t kTagInit = 0x92d21ec51c8f15f9ull;     // parameter init
constexpr uint64_t kTagShuffle = 0xd242011f20116b90ull;  // per-epoch task order
constexpr uint64_t kTagPick = 0x8e4eb28a63cd5db2ull;     // per-epoch repeat choice

ad::Tensor xavier(int out, int in, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(out) * in);
    const double s = std::sqrt(1.0 / in);
    for (double& x : v) x = rng.normal(0.0, s);
    return ad::Tensor::matrix(out, in, std::move(v));
}

void check_unit_rows(const ad::Tensor& m, const char* who) {
    const int rows = m.shape()[0], cols = m.shape()[1];
    auto v = m.data();
    for (int r = 0; r < rows; ++r) {
        double s = 0;
        for (int c = 0; c < cols; ++c) {
            double x = v[static_cast<size_t>(r) * cols + c];
            s += x * x;
        }
        if (std::fabs(std::sqrt(s) - 1.0) > 1e-6)
            throw config_error(std::string(who) + ": row " + std::to_string(r) +
                               " is not unit-norm");
    }
}

void check_nonzero_rows(const ad::Tensor& m, const char* who) {
    const int rows = m.shape()[0], cols = m.shape()[1];
    auto v = m.data();
    for (int r = 0; r < rows; ++r) {
        double s = 0;
        for (int c = 0; c < cols; ++c) s += std::fabs(v[static_cast<size_t>(r) * cols + c]);
        if (s == 0.0)
            throw numeric_error(std::string(who) + ": zero embedding in row " +
                                std::to_string(r));
    }
}

}  // namespace

ad::Tensor HyperCLIPParams::tau_inv() const { return ad::exp(log_tau); }

int HyperCLIPConfig::hidden() const { return static_cast<int>(std::lround(256.0 * hidden_scale)); }

void HyperCLIPConfig::validate() const {
    if (!(hidden_scale > 0.0) || hidden() < 1)
        throw config_error("HyperCLIPConfig: hidden_scale must give a positive hidden size");
    if (!(tau_inv_init > 0.0) || !std::isfinite(tau_inv_init))
        throw config_error("HyperCLIPConfig: tau_inv_init must be finite, > 0");
    if (epochs < 0) throw config_error("HyperCLIPConfig: epochs must be >= 0");
    if (!std::isfinite(lr) || lr < 0.0)
        throw config_error("HyperCLIPConfig: lr must be finite, >= 0");
    if (batch_tasks < 1) throw config_error("HyperCLIPConfig: batch_tasks must be >= 1");
    if (!(clip_norm > 0.0)) throw config_error("HyperCLIPConfig: clip_norm must be > 0");
}

HyperCLIPParams init_hyperclip(int dim_w, int d_e, const HyperCLIPConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (dim_w < 1 || d_e < 1) throw config_error("init_hyperclip: dim_w and d_e must be >= 1");
    Rng rng(hash_seed({seed, kTagInit}));
    HyperCLIPParams p;
    p.w1 = xavier(cfg.hidden(), dim_w, rng);
    p.b1 = ad::Tensor::zeros({cfg.hidden()});
    p.w2 = xavier(d_e, cfg.hidden(), rng);
    p.b2 = ad::Tensor::zeros({d_e});
    p.log_tau = ad::Tensor::scalar(std::log(cfg.tau_inv_init));
    return p;
}

ad::Tensor hyperclip_encode_rows(const ad::Tensor& ws, const HyperCLIPParams& p) {
    if (!ws.defined() || ws.shape().size() != 2)
        throw config_error("hyperclip_encode_rows: weights must be a (rows, dim_w) matrix");
    if (ws.shape()[1] != p.w1.shape()[1])
        throw config_error("hyperclip_encode_rows: weight dimension does not match the encoder");
    ad::Tensor a = ad::tanh(ad::add(ad::matmul_nt(ws, p.w1), p.b1));
    return ad::add(ad::matmul_nt(a, p.w2), p.b2);
}

ad::Tensor hyperclip_encode(const nets::BaseWeights& w, const HyperCLIPParams& p) {
    if (!w.flat.defined() || w.flat.shape().size() != 1)
        throw config_error("hyperclip_encode: weights must be a flat vector");
    const int dim = static_cast<int>(w.flat.size());
    ad::Tensor rows = hyperclip_encode_rows(ad::reshape(w.flat, {1, dim}), p);
    return ad::reshape(rows, {p.d_e()});
}

ad::Tensor clip_matrix_loss(const ad::Tensor& t_rows, const ad::Tensor& h_rows,
                            const ad::Tensor& tau_inv) {
    if (!t_rows.defined() || !h_rows.defined() || t_rows.shape().size() != 2 ||
        h_rows.shape().size() != 2)
        throw config_error("clip_matrix_loss: inputs must be matrices");
    if (t_rows.shape() != h_rows.shape())
        throw config_error("clip_matrix_loss: matrices must have matching shapes");
    const int n = t_rows.shape()[0];
    if (n < 1) throw config_error("clip_matrix_loss: need at least one row");
    check_unit_rows(t_rows, "clip_matrix_loss(T)");
    check_unit_rows(h_rows, "clip_matrix_loss(H)");

    ad::Tensor logits = ad::mul(ad::matmul_nt(t_rows, h_rows), tau_inv);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = i;
    ad::Tensor ce_t = ad::softmax_cross_entropy(logits, labels);
    ad::Tensor ce_h = ad::softmax_cross_entropy(ad::transpose(logits), labels);
    return ad::mul_scalar(ad::add(ce_t, ce_h), 0.5);
}

ad::Tensor clip_matrix_loss(const ad::Tensor& t_rows, const ad::Tensor& h_rows,
                            double tau_inv) {
    return clip_matrix_loss(t_rows, h_rows, ad::Tensor::scalar(tau_inv));
}

ad::Tensor contrastive_batch_loss(const ad::Tensor& ws, const std::vector<int>& ids,
                                  const ad::Tensor& descriptors, const HyperCLIPParams& p) {
    if (!ws.defined() || ws.shape().size() != 2 ||
        ws.shape()[0] != static_cast<int>(ids.size()))
        throw config_error("contrastive_batch_loss: one weight row per task id required");
    std::set<int> uniq(ids.begin(), ids.end());
    if (uniq.size() != ids.size())
        throw config_error("contrastive_batch_loss: duplicate task ids make the "
                           "contrastive matching ill-posed");
    for (int id : ids)
        if (id < 0 || id >= descriptors.shape()[0])
            throw config_error("contrastive_batch_loss: task id outside the descriptor table");

    const int n = static_cast<int>(ids.size());
    const int d_e = descriptors.shape()[1];
    std::vector<double> trows(static_cast<size_t>(n) * d_e);
    auto dv = descriptors.data();
    for (int r = 0; r < n; ++r)
        std::copy_n(dv.begin() + static_cast<size_t>(ids[r]) * d_e, d_e,
                    trows.begin() + static_cast<size_t>(r) * d_e);
    ad::Tensor t_raw = ad::Tensor::matrix(n, d_e, std::move(trows));
    {
        auto tv = t_raw.data();
        for (int r = 0; r < n; ++r) {
            double s = 0;
            for (int c = 0; c < d_e; ++c) s += std::fabs(tv[static_cast<size_t>(r) * d_e + c]);
            if (s == 0.0)
                throw config_error("contrastive_batch_loss: descriptor for task " +
                                   std::to_string(ids[r]) + " is all zeros");
        }
    }

    ad::Tensor h_raw = hyperclip_encode_rows(ws, p);
    check_nonzero_rows(h_raw, "contrastive_batch_loss(embeddings)");
    return clip_matrix_loss(ad::normalize_rows(t_raw), ad::normalize_rows(h_raw), p.tau_inv());
}

CLIPTrainResult train_hyperclip(const ad::Tensor& ws, const std::vector<int>& task_ids,
                                const ad::Tensor& descriptors, const HyperCLIPConfig& cfg) {
    cfg.validate();
    if (!ws.defined() || ws.shape().size() != 2 || ws.shape()[0] < 1)
        throw config_error("train_hyperclip: corpus must be a non-empty (rows, dim_w) matrix");
    if (static_cast<int>(task_ids.size()) != ws.shape()[0])
        throw config_error("train_hyperclip: one task id per corpus row required");
    if (!descriptors.defined() || descriptors.shape().size() != 2)
        throw config_error("train_hyperclip: descriptor table must be a matrix");

    // Group corpus rows by task.
    std::vector<std::vector<int>> rows_of;
    for (size_t i = 0; i < task_ids.size(); ++i) {
        int id = task_ids[i];
        if (id < 0 || id >= descriptors.shape()[0])
            throw config_error("train_hyperclip: task id outside the descriptor table");
        if (id >= static_cast<int>(rows_of.size())) rows_of.resize(id + 1);
        rows_of[id].push_back(static_cast<int>(i));
    }
    std::vector<int> tasks;
    for (size_t id = 0; id < rows_of.size(); ++id)
        if (!rows_of[id].empty()) tasks.push_back(static_cast<int>(id));

    const int dim = ws.shape()[1];
    CLIPTrainResult out;
    out.params = init_hyperclip(dim, descriptors.shape()[1], cfg, cfg.seed);
    std::vector<ad::Tensor> trained = {out.params.w1, out.params.b1, out.params.w2,
                                       out.params.b2};
    if (cfg.learn_tau) trained.push_back(out.params.log_tau);
    ad::Adam opt(trained, {.lr = cfg.lr});

    auto wv = ws.data();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng sh(hash_seed({cfg.seed, kTagShuffle, static_cast<uint64_t>(epoch)}));
        std::vector<int> order = tasks;
        sh.shuffle(order.data(), order.size());
        Rng pick(hash_seed({cfg.seed, kTagPick, static_cast<uint64_t>(epoch)}));

        double epoch_loss = 0;
        int n_batches = 0;
        for (size_t lo = 0; lo < order.size(); lo += cfg.batch_tasks) {
            const size_t hi = std::min(order.size(), lo + cfg.batch_tasks);
            const int b = static_cast<int>(hi - lo);
            std::vector<int> ids(order.begin() + lo, order.begin() + hi);
            std::vector<double> rows(static_cast<size_t>(b) * dim);
            for (int r = 0; r < b; ++r) {
                const auto& cand = rows_of[ids[r]];
                int row = cand[pick.below(cand.size())];
                std::copy_n(wv.begin() + static_cast<size_t>(row) * dim, dim,
                            rows.begin() + static_cast<size_t>(r) * dim);
            }
            ad::Tensor batch = ad::Tensor::matrix(b, dim, std::move(rows));

            ad::Tape tape;
            ad::TapeScope scope(tape);
            for (auto& p : trained) tape.watch(p);
            ad::Tensor loss = contrastive_batch_loss(batch, ids, descriptors, out.params);
            if (!std::isfinite(loss.data()[0]))
                throw numeric_error("train_hyperclip diverged at epoch " +
                                    std::to_string(epoch));
            auto grads = ad::grad(tape, loss, trained, false);
            ad::clip_global_norm(grads, cfg.clip_norm);
            opt.step(grads);

            epoch_loss += loss.data()[0];
            ++n_batches;
        }
        out.loss_curve.push_back(epoch_loss / n_batches);
    }
    return out;
}

std::vector<double> task_inference(const nets::BaseWeights& w, const ad::Tensor& candidates,
                                   const HyperCLIPParams& p) {
    if (!candidates.defined() || candidates.shape().size() != 2 || candidates.shape()[0] < 1)
        throw config_error("task_inference: candidates must be a non-empty (k, d_e) matrix");
    if (candidates.shape()[1] != p.d_e())
        throw config_error("task_inference: candidate dimension does not match the encoder");

    ad::Tensor h = hyperclip_encode(w, p);
    double norm = 0;
    for (double v : h.data()) norm += v * v;
    if (norm == 0.0) throw numeric_error("task_inference: zero embedding has no direction");

    const int k = candidates.shape()[0];
    const double tau = p.tau_inv().data()[0];
    std::vector<double> logits(k);
    for (int j = 0; j < k; ++j) {
        ad::Tensor row = ad::slice_rows(candidates, j, j + 1);
        ad::Tensor cos = ad::cosine_similarity(h, ad::reshape(row, {p.d_e()}));
        logits[j] = tau * cos.data()[0];
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
}

ad::Tensor guidance_loss(const ad::Tensor& z, const ad::Tensor& z0, const ad::Tensor& e_t,
                         const nets::HyperParams& gen, const HyperCLIPParams& p, double lambda,
                         bool squared_penalty) {
    ad::Tensor flat = nets::hnet_forward(z, gen);
    ad::Tensor emb =
        hyperclip_encode_rows(ad::reshape(flat, {1, static_cast<int>(flat.size())}), p);
    ad::Tensor h = ad::reshape(emb, {p.d_e()});
    ad::Tensor sim = ad::cosine_similarity(h, e_t);
    ad::Tensor d = ad::sub(z, z0);
    ad::Tensor pen = squared_penalty ? ad::sum(ad::mul(d, d)) : ad::l2_norm(d);
    return ad::add(ad::neg(sim), ad::mul_scalar(pen, lambda));
}

ad::Tensor hyperclip_guidance(const ad::Tensor& z0, const ad::Tensor& e_t,
                              const nets::HyperParams& gen, const HyperCLIPParams& p,
                              double lambda, int steps, double lr, bool squared_penalty) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw config_error("hyperclip_guidance: lambda must be finite, >= 0");
    if (steps < 0) throw config_error("hyperclip_guidance: steps must be >= 0");
    if (!z0.defined() || z0.shape().size() != 1)
        throw config_error("hyperclip_guidance: z0 must be a vector");
    {
        double n = 0;
        for (double v : e_t.data()) n += v * v;
        if (std::fabs(std::sqrt(n) - 1.0) > 1e-6)
            throw config_error("hyperclip_guidance: e_t must be unit-norm");
    }
    if (steps == 0) return z0;

    ad::Tensor z = z0;
    for (int s = 0; s < steps; ++s) {
        ad::Tensor g;
        {
            ad::Tape tape;
            ad::TapeScope scope(tape);
            ad::Tensor zv = z;
            tape.watch(zv);
            // Zero embedding has no cosine direction; abort rather than treat
            // its subgradient as meaningful.
            ad::Tensor flat = nets::hnet_forward(zv, gen);
            ad::Tensor emb =
                hyperclip_encode_rows(ad::reshape(flat, {1, static_cast<int>(flat.size())}), p);
            check_nonzero_rows(emb, "hyperclip_guidance");
            ad::Tensor h = ad::reshape(emb, {p.d_e()});
            ad::Tensor sim = ad::cosine_similarity(h, e_t);
            ad::Tensor d = ad::sub(zv, z0);
            ad::Tensor pen = squared_penalty ? ad::sum(ad::mul(d, d)) : ad::l2_norm(d);
            ad::Tensor loss = ad::add(ad::neg(sim), ad::mul_scalar(pen, lambda));
            if (!std::isfinite(loss.data()[0]))
                throw numeric_error("hyperclip_guidance: non-finite guidance loss");
            g = ad::grad(tape, loss, {zv}, false)[0];
        }
        z = ad::sub(z, ad::mul_scalar(g, lr));
    }
    return z;
}

}  // namespace hypergen::clip
