#include "hypergen/hyperldm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hypergen/ad/ops.hpp"
#include "hypergen/ad/tape.hpp"
#include "hypergen/errors.hpp"

namespace hypergen::ldm {

namespace {

// Frozen seed-stream tags (FNV-1a of the stream names).
constexpr uint64_t kTagInit = 0xbac6a7a8bd9cf680ull;     // noise-net init
constexpr uint64_t kTagShuffle = 0x659224f78577b403ull;  // per-epoch row order
constexpr uint64_t kTagBatch = 0xa3a4eca8855b48d6ull;    // per-batch t/eps/drop
constexpr uint64_t kTagSample = 0xdd6395f6c1188e60ull;   // sampling trajectories

ad::Tensor gaussian(int out, int in, double std, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(out) * in);
    for (double& x : v) x = rng.normal(0.0, std);
    return ad::Tensor::matrix(out, in, std::move(v));
}

void check_t(int t, const DiffusionSchedule& sched, const char* who) {
    if (t < 1 || t > sched.T)
        throw config_error(std::string(who) + ": t = " + std::to_string(t) +
                           " outside 1.." + std::to_string(sched.T));
}

ad::Tensor detached_copy(const ad::Tensor& t) {
    return ad::Tensor::with_shape(t.shape(),
                                  std::vector<double>(t.data().begin(), t.data().end()));
}

}  // namespace

DiffusionSchedule make_schedule(int T, double beta1, double betaT, SigmaMode mode) {
    if (T < 2) throw config_error("make_schedule: T must be >= 2");
    if (!(beta1 > 0.0) || !(beta1 <= betaT) || !(betaT < 1.0))
        throw config_error("make_schedule: need 0 < beta1 <= betaT < 1");
    DiffusionSchedule s;
    s.T = T;
    s.mode = mode;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sigma.resize(T);
    double running = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = beta1 + (betaT - beta1) * (t - 1) / (T - 1);
        const double abar_prev = running;  // abar_0 = 1 (empty product)
        s.beta[t - 1] = b;
        s.alpha[t - 1] = 1.0 - b;
        running *= s.alpha[t - 1];
        s.alpha_bar[t - 1] = running;
        const double var = mode == SigmaMode::Beta ? b : b * (1.0 - abar_prev) / (1.0 - running);
        s.sigma[t - 1] = std::sqrt(var);
    }
    return s;
}

ad::Tensor q_sample(const ad::Tensor& z0, int t, const ad::Tensor& eps,
                    const DiffusionSchedule& sched) {
    check_t(t, sched, "q_sample");
    const double ab = sched.alpha_bar[t - 1];
    return ad::add(ad::mul_scalar(z0, std::sqrt(ab)), ad::mul_scalar(eps, std::sqrt(1.0 - ab)));
}

ad::Tensor time_embed(int t, int d_t) {
    if (t < 0) throw config_error("time_embed: t must be >= 0");
    if (d_t < 2 || d_t % 2 != 0) throw config_error("time_embed: d_t must be even, >= 2");
    const int half = d_t / 2;
    std::vector<double> v(d_t);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        v[2 * i] = std::sin(t * freq);
        v[2 * i + 1] = std::cos(t * freq);
    }
    return ad::Tensor::from_vector(std::move(v));
}

std::vector<ad::Tensor> NoiseNetParams::all() const {
    std::vector<ad::Tensor> out;
    for (const auto& blk : blocks) {
        out.push_back(blk.w);
        out.push_back(blk.b);
        out.push_back(blk.skip);
        out.push_back(blk.se_w1);
        out.push_back(blk.se_b1);
        out.push_back(blk.se_w2);
        out.push_back(blk.se_b2);
    }
    out.push_back(w_out);
    out.push_back(b_out);
    return out;
}

void LDMConfig::validate() const {
    if (T < 2) throw config_error("LDMConfig: T must be >= 2");
    if (!(beta1 > 0.0) || !(beta1 <= betaT) || !(betaT < 1.0))
        throw config_error("LDMConfig: need 0 < beta1 <= betaT < 1");
    if (hidden.empty()) throw config_error("LDMConfig: at least one hidden layer required");
    for (int h : hidden)
        if (h < 1) throw config_error("LDMConfig: hidden widths must be >= 1");
    if (d_t < 2 || d_t % 2 != 0) throw config_error("LDMConfig: d_t must be even, >= 2");
    if (!(p_drop >= 0.0) || !(p_drop <= 1.0))
        throw config_error("LDMConfig: p_drop must lie in [0, 1]");
    if (epochs < 0) throw config_error("LDMConfig: epochs must be >= 0");
    if (!std::isfinite(lr) || lr < 0.0) throw config_error("LDMConfig: lr must be finite, >= 0");
    if (batch < 1) throw config_error("LDMConfig: batch must be >= 1");
    if (!(clip_norm > 0.0)) throw config_error("LDMConfig: clip_norm must be > 0");
    if (!std::isfinite(tau_g)) throw config_error("LDMConfig: tau_g must be finite");
}

NoiseNetParams init_noise_net(int d_z, int d_e, const LDMConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (d_z < 1 || d_e < 1)
        throw config_error("init_noise_net: d_z and d_e must be >= 1");
    Rng rng(hash_seed({seed, kTagInit}));
    NoiseNetParams psi;
    psi.d_z = d_z;
    psi.d_t = cfg.d_t;
    psi.d_e = d_e;
    int m = d_z;
    for (int h : cfg.hidden) {
        const int in = m + cfg.d_t + d_e;
        const int r = std::max(1, h / 4);
        NoiseBlock blk;
        blk.w = gaussian(h, in, std::sqrt(2.0 / in), rng);
        blk.b = ad::Tensor::zeros({h});
        blk.skip = gaussian(h, m, std::sqrt(1.0 / m), rng);
        blk.se_w1 = gaussian(r, h, std::sqrt(2.0 / h), rng);
        blk.se_b1 = ad::Tensor::zeros({r});
        blk.se_w2 = gaussian(h, r, std::sqrt(1.0 / r), rng);
        blk.se_b2 = ad::Tensor::zeros({h});
        psi.blocks.push_back(std::move(blk));
        m = h;
    }
    psi.w_out = ad::Tensor::zeros({d_z, m});
    psi.b_out = ad::Tensor::zeros({d_z});
    return psi;
}

ad::Tensor noise_net_batch(const ad::Tensor& zs, const std::vector<int>& ts,
                           const ad::Tensor& es, const NoiseNetParams& psi) {
    if (!zs.defined() || zs.rank() != 2 || zs.shape()[1] != psi.d_z)
        throw config_error("noise_net: latents must be a (n, d_z) matrix");
    const int n = zs.shape()[0];
    if (static_cast<int>(ts.size()) != n)
        throw config_error("noise_net: one timestep per row required");
    if (!es.defined() || es.rank() != 2 || es.shape()[0] != n || es.shape()[1] != psi.d_e)
        throw config_error("noise_net: conditioning must be a (n, d_e) matrix");

    std::vector<double> tv(static_cast<size_t>(n) * psi.d_t);
    for (int r = 0; r < n; ++r) {
        ad::Tensor emb = time_embed(ts[r], psi.d_t);
        std::copy_n(emb.data().begin(), psi.d_t, tv.begin() + static_cast<size_t>(r) * psi.d_t);
    }
    ad::Tensor cond = ad::concat({ad::Tensor::matrix(n, psi.d_t, std::move(tv)), es}, 1);

    ad::Tensor a = zs;
    for (const auto& blk : psi.blocks) {
        ad::Tensor u = ad::relu(ad::add(ad::matmul_nt(ad::concat({a, cond}, 1), blk.w), blk.b));
        ad::Tensor bott = ad::relu(ad::add(ad::matmul_nt(u, blk.se_w1), blk.se_b1));
        ad::Tensor gate = ad::sigmoid(ad::add(ad::matmul_nt(bott, blk.se_w2), blk.se_b2));
        a = ad::add(ad::mul(u, gate), ad::matmul_nt(a, blk.skip));
    }
    return ad::add(ad::matmul_nt(a, psi.w_out), psi.b_out);
}

ad::Tensor noise_net(const ad::Tensor& z_t, int t, const ad::Tensor& e,
                     const NoiseNetParams& psi) {
    if (!z_t.defined() || z_t.rank() != 1 || z_t.shape()[0] != psi.d_z)
        throw config_error("noise_net: latent must be a vector of width d_z");
    if (!e.defined() || e.rank() != 1 || e.shape()[0] != psi.d_e)
        throw config_error("noise_net: conditioning must be a vector of width d_e");
    ad::Tensor out = noise_net_batch(ad::reshape(z_t, {1, psi.d_z}), {t},
                                     ad::reshape(e, {1, psi.d_e}), psi);
    return ad::reshape(out, {psi.d_z});
}

LatentStats latent_stats(const ad::Tensor& latents) {
    if (!latents.defined() || latents.rank() != 2 || latents.shape()[0] < 1)
        throw config_error("latent_stats: need a non-empty (n, d_z) matrix");
    const int n = latents.shape()[0], d = latents.shape()[1];
    auto v = latents.data();
    LatentStats st;
    st.mean.assign(d, 0.0);
    st.std.assign(d, 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) st.mean[c] += v[static_cast<size_t>(r) * d + c];
    for (double& m : st.mean) m /= n;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) {
            const double dev = v[static_cast<size_t>(r) * d + c] - st.mean[c];
            st.std[c] += dev * dev;
        }
    for (double& s : st.std) s = std::max(std::sqrt(s / n), 1e-8);
    return st;
}

ad::Tensor standardize(const ad::Tensor& latents, const LatentStats& stats) {
    if (!latents.defined() || latents.rank() != 2 ||
        latents.shape()[1] != static_cast<int>(stats.mean.size()))
        throw config_error("standardize: latent width does not match the statistics");
    const int n = latents.shape()[0], d = latents.shape()[1];
    std::vector<double> out(latents.data().begin(), latents.data().end());
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) {
            double& x = out[static_cast<size_t>(r) * d + c];
            x = (x - stats.mean[c]) / stats.std[c];
        }
    return ad::Tensor::matrix(n, d, std::move(out));
}

ad::Tensor destandardize(const ad::Tensor& z, const LatentStats& stats) {
    const int d = static_cast<int>(stats.mean.size());
    ad::Tensor mu = ad::Tensor::from_vector(std::vector<double>(stats.mean));
    ad::Tensor sd = ad::Tensor::from_vector(std::vector<double>(stats.std));
    if (z.rank() == 1) {
        if (static_cast<int>(z.size()) != d)
            throw config_error("destandardize: latent width does not match the statistics");
        return ad::add(ad::mul(z, sd), mu);
    }
    if (z.rank() == 2 && z.shape()[1] == d) {
        const int n = z.shape()[0];
        return ad::add(ad::mul(z, ad::broadcast_rows(sd, n)), ad::broadcast_rows(mu, n));
    }
    throw config_error("destandardize: latent width does not match the statistics");
}

ad::Tensor ldm_loss_batch(const NoiseNetParams& psi, const ad::Tensor& z0s,
                          const std::vector<int>& ts, const ad::Tensor& epss,
                          const ad::Tensor& es, const DiffusionSchedule& sched) {
    if (!z0s.defined() || z0s.rank() != 2 || z0s.shape()[0] < 1)
        throw config_error("ldm_loss_batch: batch must be non-empty");
    if (!epss.defined() || epss.shape() != z0s.shape())
        throw config_error("ldm_loss_batch: one noise row per latent row required");
    const int n = z0s.shape()[0], d = z0s.shape()[1];
    if (static_cast<int>(ts.size()) != n)
        throw config_error("ldm_loss_batch: one timestep per row required");

    // q_sample, vectorized host-side: both inputs are training constants.
    std::vector<double> zt(static_cast<size_t>(n) * d);
    auto zv = z0s.data(), ev = epss.data();
    for (int r = 0; r < n; ++r) {
        check_t(ts[r], sched, "ldm_loss_batch");
        const double ab = sched.alpha_bar[ts[r] - 1];
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        for (int c = 0; c < d; ++c) {
            const size_t i = static_cast<size_t>(r) * d + c;
            zt[i] = sa * zv[i] + sb * ev[i];
        }
    }
    ad::Tensor eps_hat = noise_net_batch(ad::Tensor::matrix(n, d, std::move(zt)), ts, es, psi);
    ad::Tensor diff = ad::sub(epss, eps_hat);
    return ad::mean(ad::sum_cols(ad::mul(diff, diff)));
}

double ldm_train_step(NoiseNetParams& psi, ad::Adam& opt, const ad::Tensor& z0s,
                      const ad::Tensor& es, const DiffusionSchedule& sched, double p_drop,
                      double clip_norm, Rng& rng) {
    if (!z0s.defined() || z0s.rank() != 2 || z0s.shape()[0] < 1)
        throw config_error("ldm_train_step: batch must be non-empty");
    const int n = z0s.shape()[0], d = z0s.shape()[1];
    if (!es.defined() || es.rank() != 2 || es.shape()[0] != n)
        throw config_error("ldm_train_step: one descriptor row per latent row required");

    std::vector<int> ts(n);
    std::vector<double> eps(static_cast<size_t>(n) * d);
    std::vector<double> cond(es.data().begin(), es.data().end());
    const int d_e = es.shape()[1];
    for (int r = 0; r < n; ++r) {
        ts[r] = 1 + static_cast<int>(rng.below(sched.T));
        for (int c = 0; c < d; ++c) eps[static_cast<size_t>(r) * d + c] = rng.normal();
        if (rng.uniform() < p_drop)
            std::fill_n(cond.begin() + static_cast<size_t>(r) * d_e, d_e, 0.0);
    }
    ad::Tensor epss = ad::Tensor::matrix(n, d, std::move(eps));
    ad::Tensor dropped = ad::Tensor::matrix(n, d_e, std::move(cond));

    std::vector<ad::Tensor> params = psi.all();
    ad::Tape tape;
    ad::TapeScope scope(tape);
    for (auto& p : params) tape.watch(p);
    ad::Tensor loss = ldm_loss_batch(psi, z0s, ts, epss, dropped, sched);
    const double value = loss.data()[0];
    if (!std::isfinite(value)) throw numeric_error("ldm_train_step: non-finite loss");
    auto grads = ad::grad(tape, loss, params, false);
    ad::clip_global_norm(grads, clip_norm);
    opt.step(grads);
    return value;
}

LDMTrainResult ldm_train(const ad::Tensor& latents, const ad::Tensor& descriptors,
                         const LDMConfig& cfg) {
    cfg.validate();
    if (!latents.defined() || latents.rank() != 2 || latents.shape()[0] < 1)
        throw config_error("ldm_train: latents must be a non-empty (n, d_z) matrix");
    if (!descriptors.defined() || descriptors.rank() != 2 ||
        descriptors.shape()[0] != latents.shape()[0])
        throw config_error("ldm_train: one descriptor row per latent required");

    const int n = latents.shape()[0];
    const int d = latents.shape()[1];
    const int d_e = descriptors.shape()[1];

    LDMTrainResult out;
    out.stats = latent_stats(latents);
    out.sched = make_schedule(cfg.T, cfg.beta1, cfg.betaT, cfg.sigma_mode);
    out.psi = init_noise_net(d, d_e, cfg, cfg.seed);
    ad::Tensor z0 = standardize(latents, out.stats);

    ad::Adam opt(out.psi.all(), {.lr = cfg.lr});
    auto zv = z0.data();
    auto ev = descriptors.data();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        Rng sh(hash_seed({cfg.seed, kTagShuffle, static_cast<uint64_t>(epoch)}));
        sh.shuffle(order.data(), order.size());

        double epoch_loss = 0;
        int n_batches = 0;
        for (int lo = 0; lo < n; lo += cfg.batch) {
            const int hi = std::min(n, lo + cfg.batch);
            const int b = hi - lo;
            std::vector<double> zrows(static_cast<size_t>(b) * d);
            std::vector<double> erows(static_cast<size_t>(b) * d_e);
            for (int r = 0; r < b; ++r) {
                const int src = order[lo + r];
                std::copy_n(zv.begin() + static_cast<size_t>(src) * d, d,
                            zrows.begin() + static_cast<size_t>(r) * d);
                std::copy_n(ev.begin() + static_cast<size_t>(src) * d_e, d_e,
                            erows.begin() + static_cast<size_t>(r) * d_e);
            }
            Rng rng(hash_seed({cfg.seed, kTagBatch, static_cast<uint64_t>(epoch),
                               static_cast<uint64_t>(lo)}));
            epoch_loss += ldm_train_step(out.psi, opt, ad::Tensor::matrix(b, d, std::move(zrows)),
                                         ad::Tensor::matrix(b, d_e, std::move(erows)), out.sched,
                                         cfg.p_drop, cfg.clip_norm, rng);
            ++n_batches;
        }
        out.loss_curve.push_back(epoch_loss / n_batches);
    }
    return out;
}

ad::Tensor cfg_mix(const ad::Tensor& eps_u, const ad::Tensor& eps_c, double gamma) {
    if (!eps_u.defined() || !eps_c.defined() || eps_u.shape() != eps_c.shape())
        throw config_error("cfg_mix: estimates must share a shape");
    return ad::add(ad::mul_scalar(eps_u, 1.0 - gamma), ad::mul_scalar(eps_c, gamma));
}

ad::Tensor ddpm_step(const ad::Tensor& z_t, int t, const ad::Tensor& eps_hat,
                     const ad::Tensor& xi, const DiffusionSchedule& sched) {
    check_t(t, sched, "ddpm_step");
    const double beta = sched.beta[t - 1];
    const double abar = sched.alpha_bar[t - 1];
    const double c_eps = beta / std::sqrt(1.0 - abar);
    const double inv_sa = 1.0 / std::sqrt(sched.alpha[t - 1]);
    ad::Tensor mean = ad::mul_scalar(ad::sub(z_t, ad::mul_scalar(eps_hat, c_eps)), inv_sa);
    if (t == 1) return mean;  // final step is deterministic
    return ad::add(mean, ad::mul_scalar(xi, sched.sigma[t - 1]));
}

ad::Tensor sample_latent(const ad::Tensor& e, double gamma, const NoiseNetParams& psi,
                         const DiffusionSchedule& sched, const LatentStats& stats,
                         uint64_t seed) {
    if (!(gamma >= 0.0) || !std::isfinite(gamma))
        throw config_error("sample_latent: gamma must be finite, >= 0");
    if (!e.defined() && gamma != 0.0)
        throw config_error("sample_latent: conditional sampling requires a descriptor");

    Rng rng(hash_seed({seed, kTagSample}));
    std::vector<double> init(psi.d_z);
    for (double& v : init) v = rng.normal();
    ad::Tensor z = ad::Tensor::from_vector(std::move(init));
    ad::Tensor null_e = ad::Tensor::zeros({psi.d_e});

    for (int t = sched.T; t >= 1; --t) {
        ad::Tensor eps_hat;
        if (gamma == 0.0) {
            eps_hat = noise_net(z, t, null_e, psi);
        } else if (gamma == 1.0) {
            eps_hat = noise_net(z, t, e, psi);
        } else {
            eps_hat = cfg_mix(noise_net(z, t, null_e, psi), noise_net(z, t, e, psi), gamma);
        }
        ad::Tensor xi;
        if (t > 1) {
            std::vector<double> noise(psi.d_z);
            for (double& v : noise) v = rng.normal();
            xi = ad::Tensor::from_vector(std::move(noise));
        }
        z = ddpm_step(z, t, eps_hat, xi, sched);
    }
    return destandardize(z, stats);
}

ad::Tensor guided_eps_from(const ad::Tensor& eps_c, const ad::Tensor& grad_log_like,
                           double eta, double sigma_t) {
    return ad::sub(eps_c, ad::mul_scalar(grad_log_like, eta * sigma_t));
}

ad::Tensor classifier_guided_eps(const ad::Tensor& z_t, int t, const ad::Tensor& e,
                                 double eta, const NoiseNetParams& psi,
                                 const clip::HyperCLIPParams& clip_params,
                                 const nets::HyperParams& gen, const DiffusionSchedule& sched,
                                 const LatentStats& stats, double tau_g) {
    check_t(t, sched, "classifier_guided_eps");
    if (!(eta >= 0.0) || !std::isfinite(eta))
        throw config_error("classifier_guided_eps: eta must be finite, >= 0");
    if (!e.defined() || e.rank() != 1)
        throw config_error("classifier_guided_eps: descriptor required");

    ad::Tensor eps_c = noise_net(z_t, t, e, psi);
    ad::Tensor g;
    {
        ad::Tape tape;
        ad::TapeScope scope(tape);
        ad::Tensor zc = detached_copy(z_t);
        tape.watch(zc);
        ad::Tensor w_flat = nets::hnet_forward(destandardize(zc, stats), gen);
        ad::Tensor emb = clip::hyperclip_encode_rows(
            ad::reshape(w_flat, {1, static_cast<int>(w_flat.size())}), clip_params);
        double norm = 0;
        for (double v : emb.data()) norm += v * v;
        if (norm == 0.0)
            throw numeric_error("classifier_guided_eps: zero embedding has no direction");
        ad::Tensor cosv =
            ad::cosine_similarity(ad::reshape(emb, {clip_params.d_e()}), e);
        ad::Tensor log_like = ad::mul_scalar(cosv, tau_g);
        g = ad::grad(tape, log_like, {zc}, false)[0];
    }
    return guided_eps_from(eps_c, g, eta, sched.sigma[t - 1]);
}

ad::Tensor sample_latent_guided(const ad::Tensor& e, double eta, const NoiseNetParams& psi,
                                const clip::HyperCLIPParams& clip_params,
                                const nets::HyperParams& gen, const DiffusionSchedule& sched,
                                const LatentStats& stats, double tau_g, uint64_t seed) {
    if (!e.defined())
        throw config_error("sample_latent_guided: guided sampling requires a descriptor");

    // Shares the unguided sampler's noise stream: eta = 0 reproduces
    // sample_latent(e, gamma = 1, ...) bit for bit.
    Rng rng(hash_seed({seed, kTagSample}));
    std::vector<double> init(psi.d_z);
    for (double& v : init) v = rng.normal();
    ad::Tensor z = ad::Tensor::from_vector(std::move(init));

    for (int t = sched.T; t >= 1; --t) {
        ad::Tensor eps_hat =
            classifier_guided_eps(z, t, e, eta, psi, clip_params, gen, sched, stats, tau_g);
        ad::Tensor xi;
        if (t > 1) {
            std::vector<double> noise(psi.d_z);
            for (double& v : noise) v = rng.normal();
            xi = ad::Tensor::from_vector(std::move(noise));
        }
        z = ddpm_step(z, t, eps_hat, xi, sched);
    }
    return destandardize(z, stats);
}

}  // namespace hypergen::ldm
