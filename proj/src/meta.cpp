#include "hypergen/meta.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "hypergen/ad/ops.hpp"
#include "hypergen/errors.hpp"

namespace hypergen::meta {

namespace {

// Frozen seed-stream tags (FNV-1a of the stream names).
constexpr uint64_t kTagSplit = 0xe40b38f2a0d6fe32ull;    // per-(step, task) data draw
constexpr uint64_t kTagSteps = 0x844da3152d9d0ed9ull;    // per-(step, task) inner step count
constexpr uint64_t kTagShuffle = 0xa13b2287e0a9cebbull;  // per-epoch task order
constexpr uint64_t kTagStep = 0xd7eabc8aefa06f30ull;     // per-(epoch, batch) step seed
constexpr uint64_t kTagInit = 0x4efa3766a60bd9b8ull;     // parameter init
constexpr uint64_t kTagCorpus = 0x740e96d4d7d520deull;   // corpus support draws

ad::Tensor detached_copy(const ad::Tensor& t) {
    auto view = t.data();
    return ad::Tensor::with_shape(t.shape(), std::vector<double>(view.begin(), view.end()));
}

void check_finite_scalar(const ad::Tensor& loss, const char* who) {
    if (!loss.defined() || loss.size() != 1)
        throw config_error(std::string(who) + ": loss_fn must return a scalar");
    if (!std::isfinite(loss.data()[0]))
        throw numeric_error(std::string(who) + ": non-finite loss");
}

}  // namespace

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::MNetMultitask: return "mnet-multitask";
        case Variant::MNetMaml: return "mnet-maml";
        case Variant::MNetFomaml: return "mnet-fomaml";
        case Variant::HNetMamlUncond: return "hnet-maml-uncond";
        case Variant::HNetMamlCond: return "hnet-maml-cond";
        case Variant::HNetMultitaskCond: return "hnet-multitask-cond";
    }
    throw config_error("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::MNetMultitask, Variant::MNetMaml, Variant::MNetFomaml,
                      Variant::HNetMamlUncond, Variant::HNetMamlCond,
                      Variant::HNetMultitaskCond})
        if (name == variant_name(v)) return v;
    throw config_error("unknown variant name '" + name + "'");
}

bool is_hypernet(Variant v) {
    return v == Variant::HNetMamlUncond || v == Variant::HNetMamlCond ||
           v == Variant::HNetMultitaskCond;
}

bool is_conditional(Variant v) {
    return v == Variant::HNetMamlCond || v == Variant::HNetMultitaskCond;
}

bool uses_adaptation(Variant v) {
    return v == Variant::MNetMaml || v == Variant::MNetFomaml ||
           v == Variant::HNetMamlUncond || v == Variant::HNetMamlCond;
}

void AdaptConfig::validate() const {
    if (!std::isfinite(lr) || lr < 0.0) throw config_error("AdaptConfig: lr must be finite, >= 0");
    if (steps_lo < 0 || steps_lo > steps_hi)
        throw config_error("AdaptConfig: need 0 <= steps_lo <= steps_hi");
}

AdaptConfig resolved_steps(AdaptConfig cfg, int k) {
    cfg.validate();
    if (k < cfg.steps_lo || k > cfg.steps_hi)
        throw config_error("resolved_steps: step count outside the configured range");
    cfg.steps_lo = cfg.steps_hi = k;
    return cfg;
}

int draw_steps(const AdaptConfig& cfg, Rng& rng) {
    cfg.validate();
    return rng.range_int(cfg.steps_lo, cfg.steps_hi);
}

ad::Tensor adapt(const ad::Tensor& init_params, const tasks::LabeledSet& support,
                 const AdaptConfig& cfg, const SupportLoss& loss_fn) {
    cfg.validate();
    if (!cfg.resolved()) throw config_error("adapt: step count must be resolved before the call");
    if (!init_params.defined()) throw config_error("adapt: undefined init_params");
    const int k = cfg.steps_lo;
    if (k == 0 || cfg.lr == 0.0) return init_params;

    if (ad::recording_active()) {
        ad::Tape& tape = *ad::active_tape();
        if (!init_params.requires_grad())
            throw config_error("adapt: under an active tape init_params must require grad");
        ad::Tensor phi = init_params;
        const bool exact = cfg.order == AdaptOrder::Exact;
        for (int s = 0; s < k; ++s) {
            ad::Tensor loss = loss_fn(phi, support);
            check_finite_scalar(loss, "adapt");
            // Exact keeps the gradient graph-connected; First returns a
            // constant, so the recorded update has an identity Jacobian.
            auto g = ad::grad(tape, loss, {phi}, /*create_graph=*/exact);
            phi = ad::sub(phi, ad::mul_scalar(g[0], cfg.lr));
        }
        return phi;
    }

    // No outer tape: one private tape per step, result detached.
    ad::Tensor phi = detached_copy(init_params);
    for (int s = 0; s < k; ++s) {
        ad::Tensor g;
        {
            ad::Tape tape;
            ad::TapeScope scope(tape);
            tape.watch(phi);
            ad::Tensor loss = loss_fn(phi, support);
            check_finite_scalar(loss, "adapt");
            g = ad::grad(tape, loss, {phi}, /*create_graph=*/false)[0];
        }
        phi = ad::sub(phi, ad::mul_scalar(g, cfg.lr));
    }
    return phi;
}

std::vector<ad::Tensor> MetaModel::owned() const {
    switch (variant) {
        case Variant::MNetMultitask:
        case Variant::MNetMaml:
        case Variant::MNetFomaml: return {w.flat};
        case Variant::HNetMamlUncond: {
            auto ps = h.all();
            ps.push_back(z0);
            return ps;
        }
        case Variant::HNetMamlCond:
        case Variant::HNetMultitaskCond: return h.all();
    }
    throw config_error("MetaModel::owned: unknown variant");
}

std::vector<ad::Tensor> MetaModel::all_params() const {
    auto ps = owned();
    if (is_hypernet(variant) && variant != Variant::HNetMamlUncond)
        ps.push_back(z0);  // frozen: must pick up exactly-zero meta-gradients
    return ps;
}

MetaModel init_meta(Variant v, const nets::BaseNetConfig& base_cfg,
                    const nets::HyperConfig& hyper_cfg, uint64_t seed) {
    base_cfg.validate();
    MetaModel m;
    m.variant = v;
    m.base_cfg = base_cfg;
    m.manifest = nets::make_manifest(base_cfg);
    if (is_hypernet(v)) {
        hyper_cfg.validate();
        m.hyper_cfg = hyper_cfg;
        nets::HnetInit init = nets::init_hnet(hyper_cfg, m.manifest, seed);
        m.h = init.params;
        m.z0 = init.z0;
    } else {
        m.w = nets::init_base(base_cfg, seed);
    }
    return m;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw config_error("TrainConfig: epochs must be >= 0");
    if (!std::isfinite(meta_lr) || meta_lr < 0.0)
        throw config_error("TrainConfig: meta_lr must be finite, >= 0");
    adapt.validate();
    if (meta_batch < 1) throw config_error("TrainConfig: meta_batch must be >= 1");
    if (n_support < 0 || n_query < 1 || n_all < 1)
        throw config_error("TrainConfig: need n_support >= 0, n_query >= 1, n_all >= 1");
    if (!(clip_norm > 0.0)) throw config_error("TrainConfig: clip_norm must be > 0");
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw config_error("TrainConfig: fraction must lie in [0, 1]");
}

TrainConfig default_train_config(Variant v) {
    TrainConfig t;
    switch (v) {
        case Variant::MNetMultitask:
            t.epochs = 600;
            t.meta_lr = 1e-3;
            break;
        case Variant::MNetMaml:
        case Variant::MNetFomaml:
            t.epochs = 800;
            t.meta_lr = 1e-4;
            t.adapt = {0.01, 0, 10, AdaptOrder::First};
            break;
        case Variant::HNetMamlUncond:
            t.epochs = 400;
            t.meta_lr = 1e-4;
            t.adapt = {0.1, 0, 10, AdaptOrder::Exact};
            break;
        case Variant::HNetMamlCond:
            t.epochs = 400;
            t.meta_lr = 1e-4;
            t.adapt = {0.1, 0, 10, AdaptOrder::Exact};
            break;
        case Variant::HNetMultitaskCond:
            t.epochs = 600;
            t.meta_lr = 3e-4;
            break;
    }
    return t;
}

uint64_t task_split_seed(uint64_t step_seed, int task_id) {
    return hash_seed({step_seed, kTagSplit, static_cast<uint64_t>(task_id)});
}

namespace {

// Task loss of the variant's per-task parameter: the flat weight vector for
// mnet variants, a latent or embedding pushed through the generator for
// hypernet ones.
ad::Tensor variant_task_loss(const MetaModel& m, const ad::Tensor& per_task,
                             const tasks::LabeledSet& data) {
    if (is_hypernet(m.variant)) {
        ad::Tensor flat = nets::hnet_forward(per_task, m.h);
        return nets::task_loss({flat, m.manifest}, data);
    }
    return nets::task_loss({per_task, m.manifest}, data);
}

void check_descriptor_dim(const MetaModel& m, const tasks::Universe& u) {
    if (is_conditional(m.variant) && m.hyper_cfg.d_in != u.config().d_e)
        throw config_error("conditional variant needs hypernet d_in == universe d_e");
}

struct TapedBatch {
    ad::Tape tape;
    std::vector<ad::Tensor> params;  // all_params(), watched
};

}  // namespace

StepGrads multitask_grads(const MetaModel& m, const tasks::Universe& u,
                          const std::vector<int>& ids, const TrainConfig& tcfg,
                          uint64_t step_seed) {
    tcfg.validate();
    if (m.variant != Variant::MNetMultitask && m.variant != Variant::HNetMultitaskCond)
        throw config_error("multitask_grads: variant is trained with meta_outer_step");
    if (ids.empty()) throw config_error("multitask_grads: empty task batch");
    check_descriptor_dim(m, u);

    ad::Tape tape;
    ad::TapeScope scope(tape);
    auto params = m.all_params();
    for (auto& p : params) tape.watch(p);

    ad::Tensor total;
    int n_used = 0;
    for (int id : ids) {
        if (is_conditional(m.variant) && !u.descriptor_available(id, tcfg.fraction)) continue;
        tasks::LabeledSet data =
            u.realize_split(id, 0, tcfg.n_all, task_split_seed(step_seed, id)).second;
        ad::Tensor per_task = is_hypernet(m.variant)
                                  ? ad::Tensor::from_vector(u.task(id).descriptor)
                                  : m.w.flat;
        ad::Tensor li = variant_task_loss(m, per_task, data);
        total = total.defined() ? ad::add(total, li) : li;
        ++n_used;
    }
    if (n_used == 0)
        throw config_error("multitask_grads: no task in the batch has an available descriptor");

    ad::Tensor mean_loss = ad::mul_scalar(total, 1.0 / n_used);
    check_finite_scalar(mean_loss, "multitask_grads");
    StepGrads out;
    out.loss = mean_loss.data()[0];
    out.n_tasks = n_used;
    out.grads = ad::backward(tape, mean_loss);
    return out;
}

StepGrads meta_outer_grads(const MetaModel& m, const tasks::Universe& u,
                           const std::vector<int>& ids, const TrainConfig& tcfg,
                           uint64_t step_seed) {
    tcfg.validate();
    if (!uses_adaptation(m.variant))
        throw config_error("meta_outer_grads: variant is trained with multitask_step");
    if (ids.empty()) throw config_error("meta_outer_grads: empty task batch");
    check_descriptor_dim(m, u);

    // MNet adaptation runs in full weight space, where exact second-order
    // graphs are disproportionately costly; latent/embedding adaptation
    // honors the configured order.
    AdaptConfig acfg = tcfg.adapt;
    if (!is_hypernet(m.variant)) acfg.order = AdaptOrder::First;

    ad::Tape tape;
    ad::TapeScope scope(tape);
    auto params = m.all_params();
    for (auto& p : params) tape.watch(p);

    ad::Tensor total;
    int n_used = 0;
    for (int id : ids) {
        if (is_conditional(m.variant) && !u.descriptor_available(id, tcfg.fraction)) continue;
        auto [sup, qry] =
            u.realize_split(id, tcfg.n_support, tcfg.n_query, task_split_seed(step_seed, id));
        Rng step_rng(hash_seed({step_seed, kTagSteps, static_cast<uint64_t>(id)}));
        AdaptConfig rcfg = resolved_steps(acfg, draw_steps(acfg, step_rng));

        ad::Tensor phi0;
        switch (m.variant) {
            case Variant::MNetMaml:
            case Variant::MNetFomaml: phi0 = m.w.flat; break;
            case Variant::HNetMamlUncond: phi0 = m.z0; break;
            case Variant::HNetMamlCond:
                phi0 = ad::Tensor::from_vector(u.task(id).descriptor);
                tape.watch(phi0);  // adapted, not meta-updated
                break;
            default: throw config_error("meta_outer_grads: unexpected variant");
        }
        auto loss_fn = [&m](const ad::Tensor& p, const tasks::LabeledSet& s) {
            return variant_task_loss(m, p, s);
        };
        ad::Tensor phi = adapt(phi0, sup, rcfg, loss_fn);
        ad::Tensor li = variant_task_loss(m, phi, qry);
        total = total.defined() ? ad::add(total, li) : li;
        ++n_used;
    }
    if (n_used == 0)
        throw config_error("meta_outer_grads: no task in the batch has an available descriptor");

    ad::Tensor mean_loss = ad::mul_scalar(total, 1.0 / n_used);
    check_finite_scalar(mean_loss, "meta_outer_grads");
    StepGrads out;
    out.loss = mean_loss.data()[0];
    out.n_tasks = n_used;
    out.grads = ad::backward(tape, mean_loss);
    return out;
}

namespace {

double apply_step(MetaModel& m, const StepGrads& sg, const TrainConfig& tcfg, ad::Adam& opt) {
    auto owned = m.owned();
    if (opt.params().size() != owned.size())
        throw config_error("optimizer state does not match the variant's owned parameters");
    for (size_t i = 0; i < owned.size(); ++i)
        if (opt.params()[i].impl() != owned[i].impl())
            throw config_error("optimizer state does not match the variant's owned parameters");
    std::vector<ad::Tensor> gs;
    gs.reserve(owned.size());
    for (const auto& p : owned) gs.push_back(sg.grads.for_param(p));
    ad::clip_global_norm(gs, tcfg.clip_norm);
    opt.step(gs);
    return sg.loss;
}

}  // namespace

double multitask_step(MetaModel& m, const tasks::Universe& u, const std::vector<int>& ids,
                      const TrainConfig& tcfg, uint64_t step_seed, ad::Adam& opt) {
    return apply_step(m, multitask_grads(m, u, ids, tcfg, step_seed), tcfg, opt);
}

double meta_outer_step(MetaModel& m, const tasks::Universe& u, const std::vector<int>& ids,
                       const TrainConfig& tcfg, uint64_t step_seed, ad::Adam& opt) {
    return apply_step(m, meta_outer_grads(m, u, ids, tcfg, step_seed), tcfg, opt);
}

TrainResult train_meta(Variant v, const tasks::Universe& u, const nets::BaseNetConfig& base_cfg,
                       const nets::HyperConfig& hyper_cfg, const TrainConfig& tcfg,
                       uint64_t init_seed) {
    tcfg.validate();
    const char* nm = variant_name(v);
    const uint64_t name_tag = fnv1a(nm, std::strlen(nm));
    MetaModel m = init_meta(v, base_cfg, hyper_cfg, hash_seed({init_seed, kTagInit, name_tag}));
    check_descriptor_dim(m, u);

    std::vector<int> pool;
    for (int id : u.train_ids())
        if (!is_conditional(v) || u.descriptor_available(id, tcfg.fraction)) pool.push_back(id);
    if (pool.empty()) throw config_error("train_meta: no training task has an available descriptor");

    ad::Adam opt(m.owned(), {.lr = tcfg.meta_lr});
    const bool bilevel = uses_adaptation(v);
    std::vector<double> curve;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng sh(hash_seed({tcfg.seed, kTagShuffle, name_tag, static_cast<uint64_t>(epoch)}));
        std::vector<int> order = pool;
        sh.shuffle(order.data(), order.size());
        for (size_t b = 0; b * tcfg.meta_batch < order.size(); ++b) {
            size_t lo = b * tcfg.meta_batch;
            size_t hi = std::min(order.size(), lo + tcfg.meta_batch);
            std::vector<int> batch(order.begin() + lo, order.begin() + hi);
            uint64_t step_seed = hash_seed(
                {tcfg.seed, kTagStep, name_tag, static_cast<uint64_t>(epoch), b});
            double loss = bilevel ? meta_outer_step(m, u, batch, tcfg, step_seed, opt)
                                  : multitask_step(m, u, batch, tcfg, step_seed, opt);
            curve.push_back(loss);
        }
    }
    return {std::move(m), std::move(curve)};
}

std::vector<CorpusEntry> collect_corpus(const MetaModel& trained, const tasks::Universe& u,
                                        const CorpusConfig& cfg) {
    if (trained.variant != Variant::HNetMamlUncond)
        throw config_error("collect_corpus: source model must be hnet-maml-uncond");
    cfg.adapt.validate();
    if (!cfg.adapt.resolved())
        throw config_error("collect_corpus: adapt step count must be resolved");
    if (cfg.repeats < 1 || cfg.n_support < 1)
        throw config_error("collect_corpus: need repeats >= 1 and n_support >= 1");

    auto loss_fn = [&trained](const ad::Tensor& z, const tasks::LabeledSet& s) {
        return variant_task_loss(trained, z, s);
    };
    std::vector<CorpusEntry> out;
    out.reserve(u.train_ids().size() * static_cast<size_t>(cfg.repeats));
    for (int id : u.train_ids()) {
        for (int r = 0; r < cfg.repeats; ++r) {
            uint64_t draw = hash_seed({cfg.seed, kTagCorpus, static_cast<uint64_t>(id),
                                       static_cast<uint64_t>(r)});
            // Support precedes query in the draw stream, so the discarded
            // single-point query leaves the support set unchanged.
            tasks::LabeledSet sup = u.realize_split(id, cfg.n_support, 1, draw).first;
            ad::Tensor z = adapt(trained.z0, sup, cfg.adapt, loss_fn);
            ad::Tensor w = nets::hnet_forward(z, trained.h);
            out.push_back({w, z, u.task(id).descriptor, id, r});
        }
    }
    return out;
}

}  // namespace hypergen::meta
