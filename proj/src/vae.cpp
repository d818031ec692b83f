#include "hypergen/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hypergen/ad/ops.hpp"
#include "hypergen/ad/optim.hpp"
#include "hypergen/ad/tape.hpp"
#include "hypergen/errors.hpp"
#include "hypergen/rng.hpp"

namespace hypergen::vae {

namespace {

// Frozen seed-stream tags (FNV-1a of the stream names).
constexpr uint64_t kTagEnc = 0xe74b9b7c98dd972dull;      // encoder init
constexpr uint64_t kTagDec = 0xf1abbc7c9f3a7a41ull;      // decoder init
constexpr uint64_t kTagShuffle = 0x4bb1c3df66d5f17cull;  // per-epoch row order
constexpr uint64_t kTagEps = 0xe7298b7c98c09597ull;      // reparameterization noise

ad::Tensor kaiming(int out, int in, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(out) * in);
    const double s = std::sqrt(2.0 / in);
    for (double& x : v) x = rng.normal(0.0, s);
    return ad::Tensor::matrix(out, in, std::move(v));
}

void check_finite_scalar(const ad::Tensor& loss, const std::string& who) {
    if (!std::isfinite(loss.data()[0])) throw numeric_error(who + ": non-finite loss");
}

}  // namespace

int VAEConfig::h1() const { return static_cast<int>(std::lround(512.0 * hidden_scale)); }
int VAEConfig::h2() const { return static_cast<int>(std::lround(256.0 * hidden_scale)); }

void VAEConfig::validate() const {
    if (d_z < 1) throw config_error("VAEConfig: d_z must be >= 1");
    if (!(hidden_scale > 0.0) || h1() < 1 || h2() < 1)
        throw config_error("VAEConfig: hidden_scale must give positive layer sizes");
    if (decoder_hidden < 1) throw config_error("VAEConfig: decoder_hidden must be >= 1");
    if (!(decoder_out_scale > 0.0))
        throw config_error("VAEConfig: decoder_out_scale must be > 0");
    if (!std::isfinite(beta_kl) || beta_kl < 0.0)
        throw config_error("VAEConfig: beta_kl must be finite, >= 0");
    if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0))
        throw config_error("VAEConfig: warmup_frac must lie in [0, 1]");
    if (epochs < 0) throw config_error("VAEConfig: epochs must be >= 0");
    if (!std::isfinite(lr) || lr < 0.0) throw config_error("VAEConfig: lr must be finite, >= 0");
    if (batch < 1) throw config_error("VAEConfig: batch must be >= 1");
    if (!(clip_norm > 0.0)) throw config_error("VAEConfig: clip_norm must be > 0");
}

EncoderParams init_encoder(int dim_w, const VAEConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (dim_w < 1) throw config_error("init_encoder: dim_w must be >= 1");
    Rng rng(seed);
    EncoderParams p;
    p.w1 = kaiming(cfg.h1(), dim_w, rng);
    p.b1 = ad::Tensor::zeros({cfg.h1()});
    p.w2 = kaiming(cfg.h2(), cfg.h1(), rng);
    p.b2 = ad::Tensor::zeros({cfg.h2()});
    // Zero head: the untrained posterior is exactly N(0, I) for any input.
    p.w3 = ad::Tensor::zeros({2 * cfg.d_z, cfg.h2()});
    p.b3 = ad::Tensor::zeros({2 * cfg.d_z});
    return p;
}

std::pair<ad::Tensor, ad::Tensor> vae_encode_rows(const ad::Tensor& ws,
                                                  const EncoderParams& enc) {
    if (!ws.defined() || ws.shape().size() != 2)
        throw config_error("vae_encode_rows: weights must be a (rows, dim_w) matrix");
    if (ws.shape()[1] != enc.w1.shape()[1])
        throw config_error("vae_encode_rows: weight dimension does not match the encoder");
    const int d_z = enc.d_z();
    ad::Tensor a1 = ad::relu(ad::add(ad::matmul_nt(ws, enc.w1), enc.b1));
    ad::Tensor a2 = ad::relu(ad::add(ad::matmul_nt(a1, enc.w2), enc.b2));
    ad::Tensor head = ad::add(ad::matmul_nt(a2, enc.w3), enc.b3);
    return {ad::slice_cols(head, 0, d_z), ad::slice_cols(head, d_z, 2 * d_z)};
}

std::pair<ad::Tensor, ad::Tensor> vae_encode(const nets::BaseWeights& w,
                                             const EncoderParams& enc) {
    if (!w.flat.defined() || w.flat.shape().size() != 1)
        throw config_error("vae_encode: weights must be a flat vector");
    const int dim = static_cast<int>(w.flat.size());
    auto [mu, lv] = vae_encode_rows(ad::reshape(w.flat, {1, dim}), enc);
    const int d_z = enc.d_z();
    return {ad::reshape(mu, {d_z}), ad::reshape(lv, {d_z})};
}

ad::Tensor reparameterize(const ad::Tensor& mu, const ad::Tensor& logvar,
                          const ad::Tensor& eps) {
    return ad::add(mu, ad::mul(ad::exp(ad::mul_scalar(logvar, 0.5)), eps));
}

ad::Tensor gaussian_kl(const ad::Tensor& mu, const ad::Tensor& logvar) {
    // 1/2 sum(mu^2 + exp(logvar) - 1 - logvar), averaged over rows for
    // matrix inputs.
    ad::Tensor e = ad::sub(ad::add_scalar(ad::add(ad::mul(mu, mu), ad::exp(logvar)), -1.0),
                           logvar);
    if (mu.shape().size() == 2) return ad::mul_scalar(ad::mean(ad::sum_cols(e)), 0.5);
    return ad::mul_scalar(ad::sum(e), 0.5);
}

ad::Tensor vae_loss(const nets::BaseWeights& w, const EncoderParams& enc,
                    const nets::HyperParams& dec, double beta_kl, const ad::Tensor& eps) {
    auto [mu, lv] = vae_encode(w, enc);
    ad::Tensor z = reparameterize(mu, lv, eps);
    ad::Tensor rec = nets::hnet_forward(z, dec);
    ad::Tensor d = ad::sub(w.flat, rec);
    ad::Tensor mse = ad::mul_scalar(ad::sum(ad::mul(d, d)), 1.0 / static_cast<double>(d.size()));
    ad::Tensor loss = ad::add(mse, ad::mul_scalar(gaussian_kl(mu, lv), beta_kl));
    check_finite_scalar(loss, "vae_loss");
    return loss;
}

ad::Tensor vae_loss_rows(const ad::Tensor& ws, const EncoderParams& enc,
                         const nets::HyperParams& dec, double beta_kl, const ad::Tensor& eps) {
    auto [mu, lv] = vae_encode_rows(ws, enc);
    ad::Tensor z = reparameterize(mu, lv, eps);
    ad::Tensor rec = nets::hnet_forward_batch(z, dec);
    ad::Tensor d = ad::sub(ws, rec);
    const double dim = static_cast<double>(ws.shape()[1]);
    ad::Tensor mse = ad::mul_scalar(ad::mean(ad::sum_cols(ad::mul(d, d))), 1.0 / dim);
    ad::Tensor loss = ad::add(mse, ad::mul_scalar(gaussian_kl(mu, lv), beta_kl));
    check_finite_scalar(loss, "vae_loss_rows");
    return loss;
}

VAETrainResult vae_train(const ad::Tensor& corpus_ws, const nets::Manifest& manifest,
                         const VAEConfig& cfg) {
    cfg.validate();
    if (!corpus_ws.defined() || corpus_ws.shape().size() != 2 || corpus_ws.shape()[0] < 1)
        throw config_error("vae_train: corpus must be a non-empty (rows, dim_w) matrix");
    const int n = corpus_ws.shape()[0];
    const int dim = corpus_ws.shape()[1];
    if (dim != nets::param_count(manifest))
        throw config_error("vae_train: corpus width does not match the manifest");

    VAETrainResult out;
    out.enc = init_encoder(dim, cfg, hash_seed({cfg.seed, kTagEnc}));
    out.dec_cfg = nets::HyperConfig{cfg.d_z, cfg.decoder_hidden, cfg.decoder_out_scale};
    out.dec = nets::init_hnet(out.dec_cfg, manifest, hash_seed({cfg.seed, kTagDec})).params;

    std::vector<ad::Tensor> enc_ps = out.enc.all();
    std::vector<ad::Tensor> dec_ps = out.dec.all();
    std::vector<ad::Tensor> all_ps = enc_ps;
    all_ps.insert(all_ps.end(), dec_ps.begin(), dec_ps.end());
    ad::Adam opt(all_ps, {.lr = cfg.lr});

    const int warm = std::max(1, static_cast<int>(std::lround(cfg.warmup_frac * cfg.epochs)));
    auto corpus_view = corpus_ws.data();

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double beta =
            cfg.beta_kl * std::min(1.0, static_cast<double>(epoch + 1) / warm);
        Rng sh(hash_seed({cfg.seed, kTagShuffle, static_cast<uint64_t>(epoch)}));
        sh.shuffle(order.data(), order.size());

        double epoch_loss = 0.0;
        int n_batches = 0;
        for (int lo = 0; lo < n; lo += cfg.batch) {
            const int hi = std::min(n, lo + cfg.batch);
            const int b = hi - lo;
            std::vector<double> rows(static_cast<size_t>(b) * dim);
            for (int r = 0; r < b; ++r)
                std::copy_n(corpus_view.begin() + static_cast<size_t>(order[lo + r]) * dim,
                            dim, rows.begin() + static_cast<size_t>(r) * dim);
            ad::Tensor batch = ad::Tensor::matrix(b, dim, std::move(rows));

            Rng erng(hash_seed({cfg.seed, kTagEps, static_cast<uint64_t>(epoch),
                                static_cast<uint64_t>(lo)}));
            std::vector<double> ev(static_cast<size_t>(b) * cfg.d_z);
            for (double& x : ev) x = erng.normal();
            ad::Tensor eps = ad::Tensor::matrix(b, cfg.d_z, std::move(ev));

            ad::Tape tape;
            ad::TapeScope scope(tape);
            for (auto& p : all_ps) tape.watch(p);
            ad::Tensor loss;
            try {
                loss = vae_loss_rows(batch, out.enc, out.dec, beta, eps);
            } catch (const numeric_error& e) {
                throw numeric_error("vae_train diverged at epoch " + std::to_string(epoch) +
                                    ", batch row " + std::to_string(lo) + ": " + e.what());
            }
            auto gm = ad::backward(tape, loss);

            std::vector<ad::Tensor> ge, gd;
            for (auto& p : enc_ps) ge.push_back(gm.for_param(p));
            for (auto& p : dec_ps) gd.push_back(gm.for_param(p));
            ad::clip_global_norm(ge, cfg.clip_norm);
            ad::clip_global_norm(gd, cfg.clip_norm);
            std::vector<ad::Tensor> gs = ge;
            gs.insert(gs.end(), gd.begin(), gd.end());
            opt.step(gs);

            epoch_loss += loss.data()[0];
            ++n_batches;
        }
        out.loss_curve.push_back(epoch_loss / n_batches);
    }
    return out;
}

}  // namespace hypergen::vae
