#include <cmath>
#include <vector>

#include "doctest.h"
#include "hypergen/ad/finite_diff.hpp"
#include "hypergen/ad/ops.hpp"
#include "hypergen/ad/tape.hpp"
#include "hypergen/base_net.hpp"
#include "hypergen/errors.hpp"
#include "hypergen/rng.hpp"
#include "hypergen/tasks.hpp"
#include "hypergen/vae.hpp"

using namespace hypergen;
using namespace hypergen::vae;
namespace N = hypergen::nets;
namespace T = hypergen::tasks;

namespace {

N::Manifest tiny_manifest() { return {{2, 3, true}, {3, 2, true}}; }  // 17 params

VAEConfig tiny_cfg() {
    VAEConfig c;
    c.d_z = 3;
    c.hidden_scale = 0.01;  // encoder hiddens 5 and 3
    c.decoder_hidden = 8;
    return c;
}

ad::Tensor stack_rows(const std::vector<ad::Tensor>& flats) {
    const int dim = static_cast<int>(flats[0].size());
    std::vector<double> v;
    v.reserve(flats.size() * dim);
    for (const auto& f : flats) v.insert(v.end(), f.data().begin(), f.data().end());
    return ad::Tensor::matrix(static_cast<int>(flats.size()), dim, std::move(v));
}

void fill_normal(ad::Tensor& t, Rng& rng, double std) {
    for (double& v : t.mutable_data()) v = rng.normal(0.0, std);
}

}  // namespace

TEST_SUITE("vae") {

TEST_CASE("config validation and scaled hidden sizes") {
    VAEConfig c;
    CHECK(c.h1() == 128);
    CHECK(c.h2() == 64);
    c.validate();

    VAEConfig bad = c;
    bad.d_z = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = c;
    bad.hidden_scale = 0.001;  // h2 rounds to zero
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = c;
    bad.beta_kl = -1e-3;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = c;
    bad.warmup_frac = 1.5;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = c;
    bad.batch = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = c;
    bad.clip_norm = 0.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("untrained encoder emits the unit posterior for any input") {
    auto man = tiny_manifest();
    auto cfg = tiny_cfg();
    EncoderParams enc = init_encoder(N::param_count(man), cfg, 3);
    CHECK(enc.w1.shape()[0] == cfg.h1());
    CHECK(enc.w1.shape()[1] == N::param_count(man));
    CHECK(enc.w3.shape()[0] == 2 * cfg.d_z);
    CHECK(enc.d_z() == cfg.d_z);

    N::BaseWeights w = N::init_base({2, {3}, 2}, 11);
    auto [mu, lv] = vae_encode(w, enc);
    for (double v : mu.data()) CHECK(v == 0.0);
    for (double v : lv.data()) CHECK(v == 0.0);

    // Deterministic: same W twice gives identical outputs.
    EncoderParams enc2 = init_encoder(N::param_count(man), cfg, 3);
    Rng rng(5);
    fill_normal(enc.w3, rng, 0.3);
    Rng rng2(5);
    fill_normal(enc2.w3, rng2, 0.3);
    auto [m1, l1] = vae_encode(w, enc);
    auto [m2, l2] = vae_encode(w, enc2);
    for (size_t i = 0; i < m1.data().size(); ++i) {
        REQUIRE(m1.data()[i] == m2.data()[i]);
        REQUIRE(l1.data()[i] == l2.data()[i]);
    }

    N::BaseWeights wrong{ad::Tensor::zeros({5}), man};
    CHECK_THROWS_AS(vae_encode(wrong, enc), config_error);
}

TEST_CASE("row-batched encoding matches the single-vector path bitwise") {
    auto man = tiny_manifest();
    auto cfg = tiny_cfg();
    EncoderParams enc = init_encoder(N::param_count(man), cfg, 7);
    Rng rng(9);
    fill_normal(enc.w3, rng, 0.4);
    fill_normal(enc.b3, rng, 0.1);

    std::vector<ad::Tensor> flats;
    for (uint64_t s : {1ull, 2ull, 3ull}) flats.push_back(N::init_base({2, {3}, 2}, s).flat);
    auto [mus, lvs] = vae_encode_rows(stack_rows(flats), enc);
    for (int r = 0; r < 3; ++r) {
        auto [mu, lv] = vae_encode({flats[r], man}, enc);
        for (int j = 0; j < cfg.d_z; ++j) {
            REQUIRE(mus.data()[r * cfg.d_z + j] == mu.data()[j]);
            REQUIRE(lvs.data()[r * cfg.d_z + j] == lv.data()[j]);
        }
    }
}

TEST_CASE("encoder gradients match finite differences") {
    auto man = tiny_manifest();
    auto cfg = tiny_cfg();
    const int dim = N::param_count(man);
    EncoderParams enc = init_encoder(dim, cfg, 13);
    Rng rng(21);
    fill_normal(enc.w3, rng, 0.5);  // zero head would make the check vacuous
    fill_normal(enc.b3, rng, 0.2);
    N::BaseWeights w = N::init_base({2, {3}, 2}, 2);

    auto loss_value = [&] {
        auto [mu, lv] = vae_encode(w, enc);
        return ad::sum(ad::mul(mu, mu)).data()[0];
    };

    std::vector<ad::Tensor> params = enc.all();
    std::vector<ad::Tensor> grads;
    {
        ad::Tape tape;
        ad::TapeScope scope(tape);
        for (auto& p : params) tape.watch(p);
        auto [mu, lv] = vae_encode(w, enc);
        ad::Tensor loss = ad::sum(ad::mul(mu, mu));
        grads = ad::grad(tape, loss, params, false);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        auto numeric = ad::finite_diff_grad(params[i], loss_value);
        CHECK(ad::max_rel_err(grads[i].data(), numeric) < 1e-4);
    }
}

TEST_CASE("reparameterize follows mu + exp(logvar/2) eps") {
    ad::Tensor mu = ad::Tensor::from_vector({0.3, -1.0});
    ad::Tensor lv = ad::Tensor::from_vector({std::log(0.25), std::log(4.0)});

    SUBCASE("zero noise returns the mean") {
        ad::Tensor z = reparameterize(mu, lv, ad::Tensor::zeros({2}));
        CHECK(z.data()[0] == mu.data()[0]);
        CHECK(z.data()[1] == mu.data()[1]);
    }
    SUBCASE("unit logvar shifts by the basis vector") {
        ad::Tensor z = reparameterize(mu, ad::Tensor::zeros({2}),
                                      ad::Tensor::from_vector({1.0, 0.0}));
        CHECK(z.data()[0] == doctest::Approx(mu.data()[0] + 1.0).epsilon(1e-15));
        CHECK(z.data()[1] == mu.data()[1]);
    }
    SUBCASE("sample variance matches exp(logvar) within 5%") {
        Rng rng(77);
        const int n = 10000;
        std::vector<double> s1(2, 0.0), s2(2, 0.0);
        for (int i = 0; i < n; ++i) {
            ad::Tensor eps = ad::Tensor::from_vector({rng.normal(), rng.normal()});
            ad::Tensor z = reparameterize(mu, lv, eps);
            for (int j = 0; j < 2; ++j) {
                s1[j] += z.data()[j];
                s2[j] += z.data()[j] * z.data()[j];
            }
        }
        for (int j = 0; j < 2; ++j) {
            double mean = s1[j] / n;
            double var = s2[j] / n - mean * mean;
            CHECK(var == doctest::Approx(std::exp(lv.data()[j])).epsilon(0.05));
        }
    }
}

TEST_CASE("gaussian KL closed form") {
    SUBCASE("standard posterior has zero divergence") {
        ad::Tensor kl = gaussian_kl(ad::Tensor::zeros({4}), ad::Tensor::zeros({4}));
        CHECK(kl.data()[0] == 0.0);
    }
    SUBCASE("unit mean in one dimension gives exactly one half") {
        ad::Tensor kl = gaussian_kl(ad::Tensor::from_vector({1.0}), ad::Tensor::zeros({1}));
        CHECK(kl.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("matrix input averages the per-row divergences") {
        ad::Tensor mu = ad::Tensor::matrix(2, 1, {1.0, 0.0});
        ad::Tensor lv = ad::Tensor::matrix(2, 1, {0.0, std::log(2.0)});
        // Row 0: 0.5. Row 1: 0.5 (2 - 1 - log 2).
        double row1 = 0.5 * (2.0 - 1.0 - std::log(2.0));
        ad::Tensor kl = gaussian_kl(mu, lv);
        CHECK(kl.data()[0] == doctest::Approx(0.5 * (0.5 + row1)).epsilon(1e-14));
    }
    SUBCASE("closed form agrees with a Monte Carlo estimate") {
        Rng rng(31);
        const int d = 6, n = 20000;
        std::vector<double> muv(d), lvv(d);
        for (int j = 0; j < d; ++j) {
            muv[j] = rng.normal(0.0, 0.8);
            lvv[j] = rng.normal(0.0, 0.5);
        }
        ad::Tensor mu = ad::Tensor::from_vector(muv);
        ad::Tensor lv = ad::Tensor::from_vector(lvv);
        double closed = gaussian_kl(mu, lv).data()[0];

        double sum = 0, sum2 = 0;
        for (int i = 0; i < n; ++i) {
            double diff = 0;
            for (int j = 0; j < d; ++j) {
                double e = rng.normal();
                double z = muv[j] + std::exp(0.5 * lvv[j]) * e;
                diff += 0.5 * (z * z - e * e - lvv[j]);
            }
            sum += diff;
            sum2 += diff * diff;
        }
        double mc = sum / n;
        double se = std::sqrt((sum2 / n - mc * mc) / n);
        CHECK(std::fabs(closed - mc) < 3 * se);
    }
}

TEST_CASE("vae_loss reduces to the weighted KL under a perfect decoder") {
    auto man = tiny_manifest();
    auto cfg = tiny_cfg();
    const int dim = N::param_count(man);
    EncoderParams enc = init_encoder(dim, cfg, 3);
    // Constant posterior (mu*, lv*) via the zero-weight head's bias.
    std::vector<double> head = {0.4, -0.2, 0.1, std::log(0.5), 0.3, -0.1};
    std::copy(head.begin(), head.end(), enc.b3.mutable_data().begin());

    nets::HyperParams dec = nets::init_hnet({cfg.d_z, 8, 0.5}, man, 17).params;
    Rng rng(23);
    std::vector<double> ev(cfg.d_z);
    for (double& x : ev) x = rng.normal();
    ad::Tensor eps = ad::Tensor::from_vector(ev);

    // Choose W as exactly what the decoder will emit for this posterior + eps.
    ad::Tensor mu = ad::Tensor::from_vector({head[0], head[1], head[2]});
    ad::Tensor lv = ad::Tensor::from_vector({head[3], head[4], head[5]});
    ad::Tensor z = reparameterize(mu, lv, eps);
    ad::Tensor w_target = nets::hnet_forward(z, dec);
    N::BaseWeights w{w_target, man};

    const double beta = 0.7;
    double expect = beta * gaussian_kl(mu, lv).data()[0];
    double loss = vae_loss(w, enc, dec, beta, eps).data()[0];
    CHECK(loss == doctest::Approx(expect).epsilon(1e-14));
    CHECK(vae_loss(w, enc, dec, 0.0, eps).data()[0] == 0.0);
}

TEST_CASE("batched loss matches the mean of per-sample losses") {
    auto man = tiny_manifest();
    auto cfg = tiny_cfg();
    EncoderParams enc = init_encoder(N::param_count(man), cfg, 5);
    Rng rng(41);
    fill_normal(enc.w3, rng, 0.3);
    nets::HyperParams dec = nets::init_hnet({cfg.d_z, 8, 0.5}, man, 19).params;

    std::vector<ad::Tensor> flats = {N::init_base({2, {3}, 2}, 1).flat,
                                     N::init_base({2, {3}, 2}, 2).flat};
    std::vector<double> ev(2 * cfg.d_z);
    for (double& x : ev) x = rng.normal();
    ad::Tensor eps = ad::Tensor::matrix(2, cfg.d_z, std::vector<double>(ev));

    double batched = vae_loss_rows(stack_rows(flats), enc, dec, 0.5, eps).data()[0];
    double singles = 0;
    for (int r = 0; r < 2; ++r) {
        ad::Tensor e = ad::Tensor::from_vector(
            std::vector<double>(ev.begin() + r * cfg.d_z, ev.begin() + (r + 1) * cfg.d_z));
        singles += 0.5 * vae_loss({flats[r], man}, enc, dec, 0.5, e).data()[0];
    }
    CHECK(batched == doctest::Approx(singles).epsilon(1e-12));
}

TEST_CASE("vae_train leaves parameters unchanged at zero learning rate") {
    auto man = tiny_manifest();
    auto cfg = tiny_cfg();
    cfg.epochs = 1;
    cfg.lr = 0.0;
    cfg.batch = 2;

    std::vector<ad::Tensor> flats;
    for (uint64_t s : {1ull, 2ull, 3ull, 4ull}) flats.push_back(N::init_base({2, {3}, 2}, s).flat);
    ad::Tensor corpus = stack_rows(flats);

    VAETrainResult r = vae_train(corpus, man, cfg);
    EncoderParams enc0 = init_encoder(N::param_count(man), cfg, hash_seed({cfg.seed, 0xe74b9b7c98dd972dull}));
    // Same init seed chain: the trained encoder must be bitwise equal.
    auto a = r.enc.w1.data(), b = enc0.w1.data();
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
    CHECK(r.loss_curve.size() == 1);
    CHECK(std::isfinite(r.loss_curve[0]));
}

TEST_CASE("vae_train memorizes a degenerate corpus") {
    auto man = tiny_manifest();
    VAEConfig cfg;
    cfg.d_z = 4;
    cfg.hidden_scale = 0.02;  // hiddens 10 and 5
    cfg.decoder_hidden = 16;
    cfg.epochs = 500;
    cfg.lr = 1e-2;
    cfg.batch = 4;
    cfg.seed = 5;

    ad::Tensor w = N::init_base({2, {3}, 2}, 9).flat;
    ad::Tensor corpus = stack_rows({w, w, w, w});
    VAETrainResult r = vae_train(corpus, man, cfg);

    for (double l : r.loss_curve) REQUIRE(std::isfinite(l));
    auto [mu, lv] = vae_encode({w, man}, r.enc);
    ad::Tensor rec = nets::hnet_forward(mu, r.dec);
    double mse = 0;
    for (size_t i = 0; i < rec.size(); ++i) {
        double d = rec.data()[i] - w.data()[i];
        mse += d * d / static_cast<double>(rec.size());
    }
    CHECK(mse < 1e-3);
}

TEST_CASE("vae_train is deterministic and validates its corpus") {
    auto man = tiny_manifest();
    auto cfg = tiny_cfg();
    cfg.epochs = 20;
    cfg.lr = 1e-3;
    cfg.batch = 3;

    std::vector<ad::Tensor> flats;
    for (uint64_t s : {1ull, 2ull, 3ull, 4ull, 5ull})
        flats.push_back(N::init_base({2, {3}, 2}, s).flat);
    ad::Tensor corpus = stack_rows(flats);

    VAETrainResult r1 = vae_train(corpus, man, cfg);
    VAETrainResult r2 = vae_train(corpus, man, cfg);
    REQUIRE(r1.loss_curve.size() == r2.loss_curve.size());
    for (size_t i = 0; i < r1.loss_curve.size(); ++i)
        REQUIRE(r1.loss_curve[i] == r2.loss_curve[i]);
    for (size_t i = 0; i < r1.dec.w2.data().size(); ++i)
        REQUIRE(r1.dec.w2.data()[i] == r2.dec.w2.data()[i]);

    CHECK_THROWS_AS(vae_train(ad::Tensor::zeros({3, 5}), man, cfg), config_error);
    CHECK_THROWS_AS(vae_train(ad::Tensor::zeros({17}), man, cfg), config_error);
}

TEST_CASE("decoded posterior means stay functional on real tasks") {
    T::UniverseConfig uc;
    uc.n_train_tasks = 4;
    uc.n_test_tasks = 1;
    T::Universe u(uc);
    N::BaseNetConfig bc;
    bc.hidden = {8, 8};
    auto man = N::make_manifest(bc);

    // Corpus of fine-tuned weights, one per task.
    std::vector<ad::Tensor> flats;
    for (int id : u.train_ids()) {
        auto sup = u.realize_split(id, 32, 1, 7).first;
        N::BaseWeights w0 = N::init_base(bc, 100 + id);
        flats.push_back(N::fine_tune(w0, sup, 30, 0.05).flat);
    }

    VAEConfig cfg;
    cfg.d_z = 4;
    cfg.hidden_scale = 0.05;  // hiddens 26 and 13
    cfg.decoder_hidden = 16;
    cfg.epochs = 60;
    cfg.lr = 2e-3;
    cfg.batch = 4;
    VAETrainResult r = vae_train(stack_rows(flats), man, cfg);

    for (int id : u.train_ids()) {
        auto [mu, lv] = vae_encode({flats[id], man}, r.enc);
        ad::Tensor rec = nets::hnet_forward(mu, r.dec);
        auto qry = u.eval_query(id, 32);
        double l = N::task_loss({rec, man}, qry).data()[0];
        CHECK(std::isfinite(l));
    }
}

}  // TEST_SUITE
