#include "hypergen/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hypergen/ad/ops.hpp"
#include "hypergen/errors.hpp"
#include "hypergen/rng.hpp"

namespace hypergen::harness {

namespace {

using nlohmann::json;

uint64_t str_hash(const std::string& s) { return fnv1a(s.data(), s.size()); }

const uint64_t kTagUntrained = str_hash("hypergen.harness.untrained");
const uint64_t kTagSample = str_hash("hypergen.harness.sample");

struct MethodInfo {
    Method m;
    const char* name;
    bool needs_descriptor;
};

const MethodInfo kMethodTable[] = {
    {Method::Untrained, "untrained", false},
    {Method::MNetMultitask, "mnet-multitask", false},
    {Method::MNetMaml, "mnet-maml", false},
    {Method::MNetFomaml, "mnet-fomaml", false},
    {Method::HNetMamlUncond, "hnet-maml-uncond", false},
    {Method::HNetMamlCond, "hnet-maml-cond", true},
    {Method::HNetMultitaskCond, "hnet-multitask-cond", true},
    {Method::HNetHyperclip, "hnet-hyperclip", true},
    {Method::HVaeHyperclip, "hvae-hyperclip", true},
    {Method::HNetHyperldm, "hnet-hyperldm", true},
    {Method::HVaeHyperldm, "hvae-hyperldm", true},
};

const MethodInfo& info(Method m) {
    for (const auto& mi : kMethodTable)
        if (mi.m == m) return mi;
    throw config_error("unknown method id");
}

// ---------------------------------------------------------------------------
// Strict JSON access: every key must be consumed, so typos fail loudly.

class Obj {
public:
    Obj(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object())
            throw config_error("config: " + where_ + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            it->get_to(out);
        } catch (const json::exception&) {
            throw config_error("config: bad value for " + where_ + "." + key);
        }
    }

    const json* sub(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void done() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw config_error("config: unknown key '" + it.key() + "' in " + where_);
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Block serialization. The same functions feed the canonical form, the
// fingerprints, and (in reverse) the parser, so they cannot drift apart.

json universe_json(const tasks::UniverseConfig& c) {
    return {{"seed", c.seed},
            {"classes", c.classes},
            {"patterns", c.patterns},
            {"d_e", c.d_e},
            {"sigma_lo", c.sigma_lo},
            {"sigma_hi", c.sigma_hi},
            {"n_train_tasks", c.n_train_tasks},
            {"n_test_tasks", c.n_test_tasks},
            {"descriptor_noise", c.descriptor_noise}};
}

void universe_from(const json& j, tasks::UniverseConfig& c) {
    Obj o(j, "universe");
    o.get("seed", c.seed);
    o.get("classes", c.classes);
    o.get("patterns", c.patterns);
    o.get("d_e", c.d_e);
    o.get("sigma_lo", c.sigma_lo);
    o.get("sigma_hi", c.sigma_hi);
    o.get("n_train_tasks", c.n_train_tasks);
    o.get("n_test_tasks", c.n_test_tasks);
    o.get("descriptor_noise", c.descriptor_noise);
    o.done();
}

json base_json(const nets::BaseNetConfig& c) {
    return {{"input_dim", c.input_dim}, {"hidden", c.hidden}, {"classes", c.classes}};
}

void base_from(const json& j, nets::BaseNetConfig& c) {
    Obj o(j, "base");
    o.get("input_dim", c.input_dim);
    o.get("hidden", c.hidden);
    o.get("classes", c.classes);
    o.done();
}

json hypernet_json(const nets::HyperConfig& c) {
    return {{"d_in", c.d_in}, {"hidden", c.hidden}, {"out_scale", c.out_scale}};
}

void hypernet_from(const json& j, nets::HyperConfig& c) {
    Obj o(j, "hypernet");
    o.get("d_in", c.d_in);
    o.get("hidden", c.hidden);
    o.get("out_scale", c.out_scale);
    o.done();
}

std::string order_name(meta::AdaptOrder o) {
    return o == meta::AdaptOrder::First ? "first" : "exact";
}

meta::AdaptOrder order_from(const std::string& s, const std::string& where) {
    if (s == "first") return meta::AdaptOrder::First;
    if (s == "exact") return meta::AdaptOrder::Exact;
    throw config_error("config: " + where + " must be 'first' or 'exact', got '" + s + "'");
}

json trainer_json(const meta::TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"meta_lr", c.meta_lr},
            {"adapt_lr", c.adapt.lr},
            {"adapt_steps_lo", c.adapt.steps_lo},
            {"adapt_steps_hi", c.adapt.steps_hi},
            {"adapt_order", order_name(c.adapt.order)},
            {"meta_batch", c.meta_batch},
            {"n_support", c.n_support},
            {"n_query", c.n_query},
            {"n_all", c.n_all},
            {"clip_norm", c.clip_norm},
            {"fraction", c.fraction},
            {"seed", c.seed}};
}

void trainer_from(const json& j, meta::TrainConfig& c, const std::string& where) {
    Obj o(j, where);
    o.get("epochs", c.epochs);
    o.get("meta_lr", c.meta_lr);
    o.get("adapt_lr", c.adapt.lr);
    o.get("adapt_steps_lo", c.adapt.steps_lo);
    o.get("adapt_steps_hi", c.adapt.steps_hi);
    std::string order = order_name(c.adapt.order);
    o.get("adapt_order", order);
    c.adapt.order = order_from(order, where + ".adapt_order");
    o.get("meta_batch", c.meta_batch);
    o.get("n_support", c.n_support);
    o.get("n_query", c.n_query);
    o.get("n_all", c.n_all);
    o.get("clip_norm", c.clip_norm);
    o.get("fraction", c.fraction);
    o.get("seed", c.seed);
    o.done();
}

json corpus_json(const meta::CorpusConfig& c) {
    return {{"repeats", c.repeats},
            {"n_support", c.n_support},
            {"adapt_lr", c.adapt.lr},
            {"adapt_steps", c.adapt.steps_lo},
            {"seed", c.seed}};
}

void corpus_from(const json& j, meta::CorpusConfig& c) {
    Obj o(j, "corpus");
    o.get("repeats", c.repeats);
    o.get("n_support", c.n_support);
    o.get("adapt_lr", c.adapt.lr);
    int steps = c.adapt.steps_lo;
    o.get("adapt_steps", steps);
    c.adapt.steps_lo = c.adapt.steps_hi = steps;
    o.get("seed", c.seed);
    o.done();
}

json vae_json(const vae::VAEConfig& c) {
    return {{"d_z", c.d_z},
            {"hidden_scale", c.hidden_scale},
            {"decoder_hidden", c.decoder_hidden},
            {"decoder_out_scale", c.decoder_out_scale},
            {"beta_kl", c.beta_kl},
            {"warmup_frac", c.warmup_frac},
            {"epochs", c.epochs},
            {"lr", c.lr},
            {"batch", c.batch},
            {"clip_norm", c.clip_norm},
            {"seed", c.seed}};
}

void vae_from(const json& j, vae::VAEConfig& c) {
    Obj o(j, "vae");
    o.get("d_z", c.d_z);
    o.get("hidden_scale", c.hidden_scale);
    o.get("decoder_hidden", c.decoder_hidden);
    o.get("decoder_out_scale", c.decoder_out_scale);
    o.get("beta_kl", c.beta_kl);
    o.get("warmup_frac", c.warmup_frac);
    o.get("epochs", c.epochs);
    o.get("lr", c.lr);
    o.get("batch", c.batch);
    o.get("clip_norm", c.clip_norm);
    o.get("seed", c.seed);
    o.done();
}

json clip_json(const clip::HyperCLIPConfig& c) {
    return {{"hidden_scale", c.hidden_scale},
            {"tau_inv_init", c.tau_inv_init},
            {"learn_tau", c.learn_tau},
            {"epochs", c.epochs},
            {"lr", c.lr},
            {"batch_tasks", c.batch_tasks},
            {"clip_norm", c.clip_norm},
            {"seed", c.seed}};
}

void clip_from(const json& j, clip::HyperCLIPConfig& c) {
    Obj o(j, "hyperclip");
    o.get("hidden_scale", c.hidden_scale);
    o.get("tau_inv_init", c.tau_inv_init);
    o.get("learn_tau", c.learn_tau);
    o.get("epochs", c.epochs);
    o.get("lr", c.lr);
    o.get("batch_tasks", c.batch_tasks);
    o.get("clip_norm", c.clip_norm);
    o.get("seed", c.seed);
    o.done();
}

std::string sigma_mode_name(ldm::SigmaMode m) {
    return m == ldm::SigmaMode::Beta ? "beta" : "tilde";
}

json ldm_json(const ldm::LDMConfig& c) {
    return {{"T", c.T},
            {"beta1", c.beta1},
            {"betaT", c.betaT},
            {"sigma_mode", sigma_mode_name(c.sigma_mode)},
            {"hidden", c.hidden},
            {"d_t", c.d_t},
            {"p_drop", c.p_drop},
            {"epochs", c.epochs},
            {"lr", c.lr},
            {"batch", c.batch},
            {"clip_norm", c.clip_norm},
            {"tau_g", c.tau_g},
            {"seed", c.seed}};
}

void ldm_from(const json& j, ldm::LDMConfig& c) {
    Obj o(j, "hyperldm");
    o.get("T", c.T);
    o.get("beta1", c.beta1);
    o.get("betaT", c.betaT);
    std::string mode = sigma_mode_name(c.sigma_mode);
    o.get("sigma_mode", mode);
    if (mode == "beta")
        c.sigma_mode = ldm::SigmaMode::Beta;
    else if (mode == "tilde")
        c.sigma_mode = ldm::SigmaMode::Tilde;
    else
        throw config_error("config: hyperldm.sigma_mode must be 'beta' or 'tilde'");
    o.get("hidden", c.hidden);
    o.get("d_t", c.d_t);
    o.get("p_drop", c.p_drop);
    o.get("epochs", c.epochs);
    o.get("lr", c.lr);
    o.get("batch", c.batch);
    o.get("clip_norm", c.clip_norm);
    o.get("tau_g", c.tau_g);
    o.get("seed", c.seed);
    o.done();
}

json eval_json(const EvalConfig& c) {
    return {{"n_support", c.n_support},
            {"n_query", c.n_query},
            {"adapt_steps", c.adapt_steps},
            {"w_lr", c.w_lr},
            {"latent_lr", c.latent_lr},
            {"seeds", c.seeds},
            {"gamma", c.gamma},
            {"fraction", c.fraction},
            {"guidance",
             {{"lambda", c.guidance.lambda},
              {"steps", c.guidance.steps},
              {"lr", c.guidance.lr}}}};
}

void eval_from(const json& j, EvalConfig& c) {
    Obj o(j, "eval");
    o.get("n_support", c.n_support);
    o.get("n_query", c.n_query);
    o.get("adapt_steps", c.adapt_steps);
    o.get("w_lr", c.w_lr);
    o.get("latent_lr", c.latent_lr);
    o.get("seeds", c.seeds);
    o.get("gamma", c.gamma);
    o.get("fraction", c.fraction);
    if (const json* g = o.sub("guidance")) {
        Obj og(*g, "eval.guidance");
        og.get("lambda", c.guidance.lambda);
        og.get("steps", c.guidance.steps);
        og.get("lr", c.guidance.lr);
        og.done();
    }
    o.done();
}

json config_json(const ExperimentConfig& cfg) {
    json trainers = json::object();
    for (const auto& [v, tc] : cfg.trainers) trainers[meta::variant_name(v)] = trainer_json(tc);
    std::vector<std::string> methods;
    for (Method m : cfg.methods) methods.push_back(method_name(m));
    return {{"out_dir", cfg.out_dir},
            {"init_seed", cfg.init_seed},
            {"universe", universe_json(cfg.universe)},
            {"base", base_json(cfg.base)},
            {"hypernet", hypernet_json(cfg.hypernet)},
            {"trainers", trainers},
            {"corpus", corpus_json(cfg.corpus)},
            {"vae", vae_json(cfg.vae)},
            {"hyperclip", clip_json(cfg.hyperclip)},
            {"hyperldm", ldm_json(cfg.hyperldm)},
            {"eval", eval_json(cfg.eval)},
            {"methods", methods},
            {"sweep_gammas", cfg.sweep_gammas},
            {"sweep_fractions", cfg.sweep_fractions}};
}

uint64_t jhash(const json& j) {
    const std::string s = j.dump();
    return fnv1a(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// Small numeric helpers

std::pair<double, double> mean_std(const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    return {mean, std::sqrt(var)};
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    return buf;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw checkpoint_error("cannot open " + path + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw checkpoint_error("short write to " + path);
}

ad::Tensor task_descriptor(const tasks::Universe& u, int id) {
    ad::Tensor row = u.descriptor_matrix({id});
    return ad::reshape(row, {u.config().d_e});
}

ad::Tensor curve_tensor(const std::vector<double>& curve) {
    return ad::Tensor::from_vector(std::vector<double>(curve.begin(), curve.end()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Method registry

const char* method_name(Method m) { return info(m).name; }

Method method_from_name(const std::string& name) {
    for (const auto& mi : kMethodTable)
        if (name == mi.name) return mi.m;
    throw config_error("unknown method '" + name + "'");
}

bool method_needs_descriptor(Method m) { return info(m).needs_descriptor; }

std::vector<Method> all_methods() {
    std::vector<Method> r;
    for (const auto& mi : kMethodTable) r.push_back(mi.m);
    return r;
}

// ---------------------------------------------------------------------------
// Config

void GuidanceConfig::validate() const {
    if (!(lambda >= 0) || !std::isfinite(lambda))
        throw config_error("guidance: lambda must be finite and >= 0");
    if (steps < 0) throw config_error("guidance: steps must be >= 0");
    if (!(lr > 0) || !std::isfinite(lr)) throw config_error("guidance: lr must be > 0");
}

void EvalConfig::validate() const {
    if (n_support < 1) throw config_error("eval: n_support must be >= 1");
    if (n_query < 1) throw config_error("eval: n_query must be >= 1");
    if (adapt_steps < 0) throw config_error("eval: adapt_steps must be >= 0");
    if (!(w_lr >= 0) || !std::isfinite(w_lr))
        throw config_error("eval: w_lr must be finite and >= 0");
    if (!(latent_lr >= 0) || !std::isfinite(latent_lr))
        throw config_error("eval: latent_lr must be finite and >= 0");
    if (seeds.empty()) throw config_error("eval: seeds must be non-empty");
    if (!(gamma >= 0) || !std::isfinite(gamma))
        throw config_error("eval: gamma must be finite and >= 0");
    if (!(fraction > 0) || fraction > 1)
        throw config_error("eval: fraction must lie in (0, 1]");
    guidance.validate();
}

void ExperimentConfig::validate() const {
    if (out_dir.empty()) throw config_error("config: out_dir must be non-empty");
    universe.validate();
    base.validate();
    if (base.classes != universe.classes)
        throw config_error("config: base.classes must match universe.classes");
    if (base.input_dim != 2)
        throw config_error("config: base.input_dim must be 2 (universe data is planar)");
    if (hypernet.d_in < 1) throw config_error("config: hypernet.d_in must be >= 1");
    if (trainers.empty()) throw config_error("config: trainers must be non-empty");
    for (const auto& [v, tc] : trainers) tc.validate();
    if (corpus.repeats < 1) throw config_error("config: corpus.repeats must be >= 1");
    if (corpus.n_support < 1) throw config_error("config: corpus.n_support must be >= 1");
    corpus.adapt.validate();
    vae.validate();
    hyperclip.validate();
    hyperldm.validate();
    eval.validate();
    if (methods.empty()) throw config_error("config: methods must be non-empty");
    std::set<Method> seen;
    for (Method m : methods)
        if (!seen.insert(m).second)
            throw config_error(std::string("config: duplicate method '") + method_name(m) +
                               "'");
    for (double g : sweep_gammas)
        if (!(g >= 0) || !std::isfinite(g))
            throw config_error("config: sweep_gammas must be finite and >= 0");
    for (double f : sweep_fractions)
        if (!(f > 0) || f > 1)
            throw config_error("config: sweep_fractions must lie in (0, 1]");
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    for (meta::Variant v :
         {meta::Variant::MNetMultitask, meta::Variant::MNetMaml, meta::Variant::MNetFomaml,
          meta::Variant::HNetMamlUncond, meta::Variant::HNetMamlCond,
          meta::Variant::HNetMultitaskCond})
        cfg.trainers[v] = meta::default_train_config(v);
    return cfg;
}

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig cfg = default_config();
    Obj o(j, "config");
    o.get("out_dir", cfg.out_dir);
    o.get("init_seed", cfg.init_seed);
    if (const json* u = o.sub("universe")) universe_from(*u, cfg.universe);
    if (const json* b = o.sub("base")) base_from(*b, cfg.base);
    if (const json* h = o.sub("hypernet")) hypernet_from(*h, cfg.hypernet);
    if (const json* t = o.sub("trainers")) {
        if (!t->is_object()) throw config_error("config: trainers must be an object");
        for (auto it = t->begin(); it != t->end(); ++it) {
            meta::Variant v = meta::variant_from_name(it.key());
            trainer_from(it.value(), cfg.trainers.at(v), "trainers." + it.key());
        }
    }
    if (const json* c = o.sub("corpus")) corpus_from(*c, cfg.corpus);
    if (const json* v = o.sub("vae")) vae_from(*v, cfg.vae);
    if (const json* c = o.sub("hyperclip")) clip_from(*c, cfg.hyperclip);
    if (const json* l = o.sub("hyperldm")) ldm_from(*l, cfg.hyperldm);
    if (const json* e = o.sub("eval")) eval_from(*e, cfg.eval);
    if (const json* m = o.sub("methods")) {
        std::vector<std::string> names;
        try {
            m->get_to(names);
        } catch (const json::exception&) {
            throw config_error("config: methods must be an array of strings");
        }
        cfg.methods.clear();
        for (const auto& n : names) cfg.methods.push_back(method_from_name(n));
    }
    o.get("sweep_gammas", cfg.sweep_gammas);
    o.get("sweep_fractions", cfg.sweep_fractions);
    o.done();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string canonical_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2); }

std::string resolve_out_dir(const ExperimentConfig& cfg) {
    const char* env = std::getenv("HYPERGEN_OUT");
    if (env != nullptr && env[0] != '\0') return env;
    return cfg.out_dir;
}

const std::vector<std::string> kStageOrder = {"universe", "trainers", "corpus",  "vae",
                                              "hyperclip", "hyperldm", "eval"};

uint64_t stage_fingerprint(const ExperimentConfig& cfg, const std::string& stage) {
    const uint64_t root =
        hash_seed({str_hash("root"), jhash(universe_json(cfg.universe)),
                   jhash(base_json(cfg.base)), jhash(hypernet_json(cfg.hypernet)),
                   cfg.init_seed});
    if (stage == "universe")
        return hash_seed({str_hash("universe"), jhash(universe_json(cfg.universe))});
    if (stage.rfind("trainer/", 0) == 0) {
        meta::Variant v = meta::variant_from_name(stage.substr(8));
        auto it = cfg.trainers.find(v);
        if (it == cfg.trainers.end())
            throw config_error("config: no trainer block for " + stage.substr(8));
        return hash_seed({str_hash(stage), root, jhash(trainer_json(it->second))});
    }
    if (stage == "corpus")
        return hash_seed({str_hash("corpus"),
                          stage_fingerprint(cfg, "trainer/hnet-maml-uncond"),
                          jhash(corpus_json(cfg.corpus))});
    if (stage == "vae")
        return hash_seed(
            {str_hash("vae"), stage_fingerprint(cfg, "corpus"), jhash(vae_json(cfg.vae))});
    if (stage == "hyperclip")
        return hash_seed({str_hash("hyperclip"), stage_fingerprint(cfg, "corpus"),
                          jhash(clip_json(cfg.hyperclip))});
    if (stage == "hyperldm/hnet")
        return hash_seed({str_hash("hyperldm/hnet"), stage_fingerprint(cfg, "corpus"),
                          jhash(ldm_json(cfg.hyperldm))});
    if (stage == "hyperldm/hvae")
        return hash_seed({str_hash("hyperldm/hvae"), stage_fingerprint(cfg, "vae"),
                          jhash(ldm_json(cfg.hyperldm))});
    throw config_error("unknown stage '" + stage + "'");
}

// ---------------------------------------------------------------------------
// Metrics

std::string metrics_csv(const MetricsTable& t) {
    std::string out = "method,setting,mean_pct,std_pct,n_seeds\n";
    for (const auto& r : t.rows) {
        out += r.method + "," + r.setting + "," + pct(r.mean) + "," + pct(r.stddev) + "," +
               std::to_string(r.n_seeds) + "\n";
    }
    return out;
}

MetricsTable parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "method,setting,mean_pct,std_pct,n_seeds")
        throw config_error("metrics csv: unexpected header");
    MetricsTable t;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        MetricsRow r;
        std::string mean_s, std_s, n_s;
        if (!std::getline(ls, r.method, ',') || !std::getline(ls, r.setting, ',') ||
            !std::getline(ls, mean_s, ',') || !std::getline(ls, std_s, ',') ||
            !std::getline(ls, n_s))
            throw config_error("metrics csv: malformed row '" + line + "'");
        try {
            r.mean = std::stod(mean_s) / 100.0;
            r.stddev = std::stod(std_s) / 100.0;
            r.n_seeds = std::stoi(n_s);
        } catch (const std::exception&) {
            throw config_error("metrics csv: malformed row '" + line + "'");
        }
        if (r.mean < -1e-9 || r.mean > 1.0 + 1e-9 || r.stddev < 0 || r.n_seeds < 1)
            throw config_error("metrics csv: out-of-range row '" + line + "'");
        t.rows.push_back(std::move(r));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Zero-shot weight production

namespace {

struct ZeroShotState {
    nets::BaseWeights w;
    ad::Tensor latent;                        // set when adaptation acts on a latent
    const nets::HyperParams* gen = nullptr;   // generator behind that latent
    bool adapt_weights = false;               // few-shot fine-tunes W directly
};

const meta::MetaModel& need_model(const Artifacts& a, meta::Variant v, Method m) {
    auto it = a.models.find(v);
    if (it == a.models.end())
        throw config_error(std::string("method '") + method_name(m) +
                           "' needs the trained variant '" + meta::variant_name(v) + "'");
    return it->second;
}

ad::Tensor descriptor_or_throw(const tasks::Universe& u, int id, double fraction,
                               Method m) {
    if (!u.descriptor_available(id, fraction))
        throw config_error(std::string("method '") + method_name(m) +
                           "' requires a descriptor but task " + std::to_string(id) +
                           "'s descriptor is masked");
    return task_descriptor(u, id);
}

ZeroShotState zero_shot_state(Method m, const Artifacts& a, const tasks::Universe& u,
                              int task_id, uint64_t eval_seed, const EvalConfig& cfg) {
    ZeroShotState s;
    switch (m) {
        case Method::Untrained: {
            s.w = nets::init_base(
                a.base_cfg,
                hash_seed({kTagUntrained, eval_seed, static_cast<uint64_t>(task_id)}));
            s.adapt_weights = true;
            return s;
        }
        case Method::MNetMultitask:
        case Method::MNetMaml:
        case Method::MNetFomaml: {
            meta::Variant v = m == Method::MNetMultitask ? meta::Variant::MNetMultitask
                              : m == Method::MNetMaml    ? meta::Variant::MNetMaml
                                                         : meta::Variant::MNetFomaml;
            s.w = need_model(a, v, m).w;
            s.adapt_weights = true;
            return s;
        }
        case Method::HNetMamlUncond: {
            const auto& model = need_model(a, meta::Variant::HNetMamlUncond, m);
            s.latent = model.z0;
            s.gen = &model.h;
            break;
        }
        case Method::HNetMamlCond:
        case Method::HNetMultitaskCond: {
            meta::Variant v = m == Method::HNetMamlCond ? meta::Variant::HNetMamlCond
                                                        : meta::Variant::HNetMultitaskCond;
            const auto& model = need_model(a, v, m);
            s.latent = descriptor_or_throw(u, task_id, cfg.fraction, m);
            s.gen = &model.h;
            break;
        }
        case Method::HNetHyperclip:
        case Method::HVaeHyperclip: {
            if (!a.has_hyperclip())
                throw config_error(std::string("method '") + method_name(m) +
                                   "' needs a trained HyperCLIP encoder");
            ad::Tensor e = descriptor_or_throw(u, task_id, cfg.fraction, m);
            ad::Tensor z0;
            if (m == Method::HNetHyperclip) {
                const auto& model = need_model(a, meta::Variant::HNetMamlUncond, m);
                z0 = model.z0;
                s.gen = &model.h;
            } else {
                if (!a.has_vae())
                    throw config_error("method 'hvae-hyperclip' needs a trained VAE");
                z0 = ad::Tensor::zeros({a.vae.dec_cfg.d_in});  // prior mean
                s.gen = &a.vae.dec;
            }
            s.latent = clip::hyperclip_guidance(z0, e, *s.gen, a.hyperclip.params,
                                                cfg.guidance.lambda, cfg.guidance.steps,
                                                cfg.guidance.lr);
            break;
        }
        case Method::HNetHyperldm:
        case Method::HVaeHyperldm: {
            const ldm::LDMTrainResult* d = nullptr;
            if (m == Method::HNetHyperldm) {
                if (!a.has_ldm_hnet())
                    throw config_error("method 'hnet-hyperldm' needs its diffusion model");
                d = &a.ldm_hnet;
                s.gen = &need_model(a, meta::Variant::HNetMamlUncond, m).h;
            } else {
                if (!a.has_ldm_hvae())
                    throw config_error("method 'hvae-hyperldm' needs its diffusion model");
                if (!a.has_vae())
                    throw config_error("method 'hvae-hyperldm' needs a trained VAE");
                d = &a.ldm_hvae;
                s.gen = &a.vae.dec;
            }
            // gamma = 0 samples unconditionally and never consults the
            // descriptor, masked or not.
            ad::Tensor e;
            if (cfg.gamma != 0.0) e = descriptor_or_throw(u, task_id, cfg.fraction, m);
            s.latent = ldm::sample_latent(
                e, cfg.gamma, d->psi, d->sched, d->stats,
                hash_seed({kTagSample, eval_seed, static_cast<uint64_t>(task_id)}));
            break;
        }
    }
    s.w = nets::BaseWeights{nets::hnet_forward(s.latent, *s.gen), a.manifest};
    return s;
}

nets::BaseWeights adapt_few_shot(const ZeroShotState& s, const Artifacts& a,
                                 const tasks::LabeledSet& support, const EvalConfig& cfg) {
    if (cfg.adapt_steps == 0) return s.w;
    if (s.adapt_weights) {
        if (cfg.w_lr == 0.0) return s.w;
        return nets::fine_tune(s.w, support, cfg.adapt_steps, cfg.w_lr);
    }
    meta::AdaptConfig ac{cfg.latent_lr, cfg.adapt_steps, cfg.adapt_steps,
                         meta::AdaptOrder::First};
    const nets::HyperParams* gen = s.gen;
    const nets::Manifest& man = a.manifest;
    meta::SupportLoss loss_fn = [gen, &man](const ad::Tensor& p,
                                            const tasks::LabeledSet& sup) {
        return nets::task_loss(nets::BaseWeights{nets::hnet_forward(p, *gen), man}, sup);
    };
    ad::Tensor adapted = meta::adapt(s.latent, support, ac, loss_fn);
    return nets::BaseWeights{nets::hnet_forward(adapted, *gen), a.manifest};
}

}  // namespace

nets::BaseWeights zero_shot_weights(Method m, const Artifacts& a, const tasks::Universe& u,
                                    int task_id, uint64_t eval_seed, const EvalConfig& cfg) {
    return zero_shot_state(m, a, u, task_id, eval_seed, cfg).w;
}

double query_accuracy(const WeightsOracle& oracle, const tasks::Universe& u,
                      const std::vector<int>& task_ids, uint64_t eval_seed, int n_query) {
    if (task_ids.empty()) throw config_error("query_accuracy: no tasks given");
    double acc = 0;
    for (int id : task_ids)
        acc += nets::accuracy(oracle(id, eval_seed), u.eval_query(id, n_query));
    return acc / static_cast<double>(task_ids.size());
}

double zero_shot_accuracy(Method m, const Artifacts& a, const tasks::Universe& u,
                          const std::vector<int>& task_ids, uint64_t eval_seed,
                          const EvalConfig& cfg) {
    return query_accuracy(
        [&](int id, uint64_t seed) { return zero_shot_weights(m, a, u, id, seed, cfg); }, u,
        task_ids, eval_seed, cfg.n_query);
}

MetricsRow eval_zero_shot(Method m, const Artifacts& a, const tasks::Universe& u,
                          const std::vector<int>& task_ids, const EvalConfig& cfg) {
    cfg.validate();
    const long before = tasks::support_access_count();
    std::vector<double> accs;
    for (uint64_t seed : cfg.seeds)
        accs.push_back(zero_shot_accuracy(m, a, u, task_ids, seed, cfg));
    if (tasks::support_access_count() != before)
        throw error("zero-shot evaluation touched support data");
    auto [mean, stddev] = mean_std(accs);
    return {method_name(m), "zero-shot", mean, stddev, static_cast<int>(accs.size())};
}

MetricsRow eval_few_shot(Method m, const Artifacts& a, const tasks::Universe& u,
                         const std::vector<int>& task_ids, const EvalConfig& cfg) {
    cfg.validate();
    if (task_ids.empty()) throw config_error("eval_few_shot: no tasks given");
    std::vector<double> accs;
    for (uint64_t seed : cfg.seeds) {
        double acc = 0;
        for (int id : task_ids) {
            ZeroShotState s = zero_shot_state(m, a, u, id, seed, cfg);
            tasks::LabeledSet support = u.eval_support(id, cfg.n_support, seed);
            nets::BaseWeights w = adapt_few_shot(s, a, support, cfg);
            acc += nets::accuracy(w, u.eval_query(id, cfg.n_query));
        }
        accs.push_back(acc / static_cast<double>(task_ids.size()));
    }
    auto [mean, stddev] = mean_std(accs);
    return {method_name(m), "few-shot", mean, stddev, static_cast<int>(accs.size())};
}

MetricsTable eval_methods(const std::vector<Method>& methods, const Artifacts& a,
                          const tasks::Universe& u, const EvalConfig& cfg) {
    MetricsTable t;
    const std::vector<int> test = u.test_ids();
    for (Method m : methods) {
        t.rows.push_back(eval_zero_shot(m, a, u, test, cfg));
        t.rows.push_back(eval_few_shot(m, a, u, test, cfg));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Sweeps

GammaSweep gamma_sweep(Method m, const Artifacts& a, const tasks::Universe& u,
                       const std::vector<int>& task_ids, const std::vector<double>& gammas,
                       const EvalConfig& cfg) {
    if (m != Method::HNetHyperldm && m != Method::HVaeHyperldm)
        throw config_error("gamma_sweep: method must be a diffusion method");
    bool has0 = false, has1 = false;
    int above1 = 0;
    for (double g : gammas) {
        if (g == 0.0) has0 = true;
        if (g == 1.0) has1 = true;
        if (g > 1.0) ++above1;
    }
    if (!has0 || !has1 || above1 < 2)
        throw config_error(
            "gamma_sweep: gamma list must include 0, 1, and at least two values > 1");

    GammaSweep s;
    s.gammas = gammas;
    for (double g : gammas) {
        EvalConfig ec = cfg;
        ec.gamma = g;
        std::vector<double> per_seed;
        for (uint64_t seed : cfg.seeds)
            per_seed.push_back(zero_shot_accuracy(m, a, u, task_ids, seed, ec));
        auto [mean, stddev] = mean_std(per_seed);
        s.per_seed.push_back(std::move(per_seed));
        s.mean.push_back(mean);
        s.stddev.push_back(stddev);
    }
    return s;
}

std::string gamma_sweep_csv(const GammaSweep& s) {
    std::string out = "gamma,mean_pct,std_pct,n_seeds\n";
    for (size_t i = 0; i < s.gammas.size(); ++i)
        out += num(s.gammas[i]) + "," + pct(s.mean[i]) + "," + pct(s.stddev[i]) + "," +
               std::to_string(s.per_seed[i].size()) + "\n";
    return out;
}

std::string fraction_sweep_csv(const FractionSweep& s) {
    std::string out = "method,fraction,mean_pct,std_pct,n_seeds\n";
    for (const auto& c : s.cells)
        out += c.method + "," + num(c.fraction) + "," + pct(c.mean) + "," + pct(c.stddev) +
               "," + std::to_string(c.n_seeds) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

namespace fs = std::filesystem;

struct StageNeeds {
    std::set<meta::Variant> variants;
    bool corpus = false;
    bool vae = false;
    bool clip = false;
    bool ldm_hnet = false;
    bool ldm_hvae = false;
};

StageNeeds needs_for_methods(const std::vector<Method>& methods) {
    StageNeeds n;
    for (Method m : methods) {
        switch (m) {
            case Method::Untrained:
                break;
            case Method::MNetMultitask:
                n.variants.insert(meta::Variant::MNetMultitask);
                break;
            case Method::MNetMaml:
                n.variants.insert(meta::Variant::MNetMaml);
                break;
            case Method::MNetFomaml:
                n.variants.insert(meta::Variant::MNetFomaml);
                break;
            case Method::HNetMamlUncond:
                n.variants.insert(meta::Variant::HNetMamlUncond);
                break;
            case Method::HNetMamlCond:
                n.variants.insert(meta::Variant::HNetMamlCond);
                break;
            case Method::HNetMultitaskCond:
                n.variants.insert(meta::Variant::HNetMultitaskCond);
                break;
            case Method::HNetHyperclip:
                n.variants.insert(meta::Variant::HNetMamlUncond);
                n.corpus = n.clip = true;
                break;
            case Method::HVaeHyperclip:
                n.corpus = n.vae = n.clip = true;
                break;
            case Method::HNetHyperldm:
                n.variants.insert(meta::Variant::HNetMamlUncond);
                n.corpus = n.ldm_hnet = true;
                break;
            case Method::HVaeHyperldm:
                n.corpus = n.vae = n.ldm_hvae = true;
                break;
        }
    }
    if (n.corpus) n.variants.insert(meta::Variant::HNetMamlUncond);
    return n;
}

nets::HyperConfig hyper_cfg_for(const ExperimentConfig& cfg, meta::Variant v) {
    nets::HyperConfig hc = cfg.hypernet;
    if (meta::is_conditional(v)) hc.d_in = cfg.universe.d_e;
    return hc;
}

// Resume-or-compute for one artifact file. `requested` marks stages the
// caller asked for by name (force recomputes those); everything else resumes
// when a valid checkpoint exists and is built otherwise.
template <class Compute, class Pack, class Unpack>
void ensure_artifact(const std::string& label, const std::string& path,
                     const std::string& component, uint64_t fp, bool requested,
                     const PipelineOptions& opt, PipelineResult& result, Compute compute,
                     Pack pack, Unpack unpack) {
    const bool have = ckpt::file_exists(path);
    if (have && !(requested && opt.force)) {
        ckpt::Checkpoint c = ckpt::load_expected(path, component, fp, opt.force);
        unpack(c);
        result.resumed.push_back(label);
        if (opt.verbose) std::printf("[%s] resumed from %s\n", label.c_str(), path.c_str());
        return;
    }
    if (!have && opt.require_deps && !requested)
        throw checkpoint_error("stage '" + label + "' needs missing artifact " + path +
                               "; run its stage first");
    compute();
    ckpt::Checkpoint c = pack();
    c.component = component;
    c.fingerprint = fp;
    ckpt::save(c, path);
    result.ran.push_back(label);
    if (opt.verbose) std::printf("[%s] trained and saved %s\n", label.c_str(), path.c_str());
}

ckpt::Checkpoint pack_meta(const meta::MetaModel& m, const std::vector<double>& curve,
                           uint64_t seed) {
    ckpt::Checkpoint c;
    c.seed = seed;
    if (meta::is_hypernet(m.variant)) {
        c.add("h_w1", m.h.w1);
        c.add("h_b1", m.h.b1);
        c.add("h_w2", m.h.w2);
        c.add("h_b2", m.h.b2);
        if (m.z0.defined()) c.add("z0", m.z0);
    } else {
        c.add("w", m.w.flat);
    }
    c.add("loss_curve", curve_tensor(curve));
    return c;
}

meta::MetaModel unpack_meta(const ckpt::Checkpoint& c, meta::Variant v,
                            const ExperimentConfig& cfg, const nets::Manifest& manifest) {
    meta::MetaModel m;
    m.variant = v;
    m.base_cfg = cfg.base;
    m.manifest = manifest;
    m.hyper_cfg = hyper_cfg_for(cfg, v);
    if (meta::is_hypernet(v)) {
        m.h = nets::HyperParams{c.get("h_w1"), c.get("h_b1"), c.get("h_w2"), c.get("h_b2")};
        if (c.has("z0")) m.z0 = c.get("z0");
    } else {
        m.w = nets::BaseWeights{c.get("w"), manifest};
        if (m.w.flat.size() != nets::param_count(manifest))
            throw checkpoint_error("trainer checkpoint does not match the base manifest");
    }
    return m;
}

std::vector<int> int_vector(const ad::Tensor& t) {
    std::vector<int> v;
    v.reserve(static_cast<size_t>(t.size()));
    for (double d : t.data()) v.push_back(static_cast<int>(std::lround(d)));
    return v;
}

ad::Tensor int_tensor(const std::vector<int>& v) {
    std::vector<double> d(v.begin(), v.end());
    return ad::Tensor::from_vector(std::move(d));
}

ckpt::Checkpoint pack_ldm(const ldm::LDMTrainResult& r, uint64_t seed) {
    ckpt::Checkpoint c;
    c.seed = seed;
    for (size_t i = 0; i < r.psi.blocks.size(); ++i) {
        const auto& b = r.psi.blocks[i];
        const std::string p = "b" + std::to_string(i) + "_";
        c.add(p + "w", b.w);
        c.add(p + "b", b.b);
        c.add(p + "skip", b.skip);
        c.add(p + "se_w1", b.se_w1);
        c.add(p + "se_b1", b.se_b1);
        c.add(p + "se_w2", b.se_w2);
        c.add(p + "se_b2", b.se_b2);
    }
    c.add("w_out", r.psi.w_out);
    c.add("b_out", r.psi.b_out);
    c.add("stats_mean", ad::Tensor::from_vector(std::vector<double>(r.stats.mean)));
    c.add("stats_std", ad::Tensor::from_vector(std::vector<double>(r.stats.std)));
    c.add("loss_curve", curve_tensor(r.loss_curve));
    return c;
}

ldm::LDMTrainResult unpack_ldm(const ckpt::Checkpoint& c, const ExperimentConfig& cfg) {
    ldm::LDMTrainResult r;
    const auto& w_out = c.get("w_out");
    r.psi.d_z = static_cast<int>(w_out.shape()[0]);
    r.psi.d_t = cfg.hyperldm.d_t;
    r.psi.d_e = cfg.universe.d_e;
    for (size_t i = 0; i < cfg.hyperldm.hidden.size(); ++i) {
        const std::string p = "b" + std::to_string(i) + "_";
        r.psi.blocks.push_back({c.get(p + "w"), c.get(p + "b"), c.get(p + "skip"),
                                c.get(p + "se_w1"), c.get(p + "se_b1"), c.get(p + "se_w2"),
                                c.get(p + "se_b2")});
    }
    r.psi.w_out = w_out;
    r.psi.b_out = c.get("b_out");
    r.sched = ldm::make_schedule(cfg.hyperldm.T, cfg.hyperldm.beta1, cfg.hyperldm.betaT,
                                 cfg.hyperldm.sigma_mode);
    const auto& sm = c.get("stats_mean").data();
    const auto& ss = c.get("stats_std").data();
    r.stats.mean.assign(sm.begin(), sm.end());
    r.stats.std.assign(ss.begin(), ss.end());
    const auto& lc = c.get("loss_curve").data();
    r.loss_curve.assign(lc.begin(), lc.end());
    return r;
}

void write_universe_csvs(const tasks::Universe& u, const std::string& out_dir) {
    const auto& cfg = u.config();
    std::string tasks_csv = "id,split,pattern,angle,radius,sigma\n";
    std::string desc_csv = "id";
    for (int d = 0; d < cfg.d_e; ++d) desc_csv += ",d" + std::to_string(d);
    desc_csv += "\n";
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (int id = 0; id < cfg.n_tasks(); ++id) {
        const tasks::TaskSpec& t = u.task(id);
        const bool train = id < cfg.n_train_tasks;
        tasks_csv += std::to_string(id) + "," + (train ? "train" : "test") + "," +
                     std::to_string(t.params.pattern) + "," + fmt(t.params.angle) + "," +
                     fmt(t.params.radius) + "," + fmt(t.params.sigma) + "\n";
        desc_csv += std::to_string(id);
        for (double d : t.descriptor) desc_csv += "," + fmt(d);
        desc_csv += "\n";
    }
    write_text(out_dir + "/tasks.csv", tasks_csv);
    write_text(out_dir + "/descriptors.csv", desc_csv);
}

// Corpus weight rows for one held-out repeat and the matching descriptor-row
// indices, the training split HyperCLIP consumes.
struct ClipSplit {
    ad::Tensor ws;            // training rows
    std::vector<int> ids;     // descriptor-row index per training row
    std::vector<int64_t> holdout;  // corpus row indices of the held-out repeat
};

ClipSplit clip_split(const Artifacts& a, const tasks::Universe& u, int repeats) {
    const int holdout_repeat = repeats > 1 ? repeats - 1 : -1;
    const auto train_ids = u.train_ids();
    std::map<int, int> row_of_task;
    for (size_t i = 0; i < train_ids.size(); ++i)
        row_of_task[train_ids[i]] = static_cast<int>(i);

    const int n = static_cast<int>(a.corpus_w.shape()[0]);
    const int dim_w = static_cast<int>(a.corpus_w.shape()[1]);
    ClipSplit s;
    std::vector<double> rows;
    for (int i = 0; i < n; ++i) {
        if (a.corpus_repeat[i] == holdout_repeat) {
            s.holdout.push_back(i);
            continue;
        }
        auto src = a.corpus_w.data().subspan(static_cast<size_t>(i) * dim_w, dim_w);
        rows.insert(rows.end(), src.begin(), src.end());
        s.ids.push_back(row_of_task.at(a.corpus_task[i]));
    }
    s.ws = ad::Tensor::matrix(static_cast<int>(s.ids.size()), dim_w, std::move(rows));
    return s;
}

ldm::LDMConfig flavored_ldm_cfg(const ExperimentConfig& cfg, const std::string& flavor) {
    ldm::LDMConfig lc = cfg.hyperldm;
    lc.seed = hash_seed({cfg.hyperldm.seed, str_hash(flavor)});
    return lc;
}

ad::Tensor vae_corpus_means(const Artifacts& a) {
    return vae::vae_encode_rows(a.corpus_w, a.vae.enc).first;
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opt) {
    cfg.validate();
    std::set<std::string> requested;
    for (const auto& s : opt.stages) {
        if (std::find(kStageOrder.begin(), kStageOrder.end(), s) == kStageOrder.end())
            throw config_error("unknown stage '" + s + "'");
        requested.insert(s);
    }

    const std::string out = resolve_out_dir(cfg);
    fs::create_directories(out);

    tasks::Universe u(cfg.universe);
    PipelineResult result;
    Artifacts& a = result.artifacts;
    a.base_cfg = cfg.base;
    a.manifest = nets::make_manifest(cfg.base);

    if (requested.count("universe")) {
        write_universe_csvs(u, out);
        result.ran.push_back("universe");
        if (opt.verbose) std::printf("[universe] wrote task CSVs to %s\n", out.c_str());
    }

    // Everything a requested stage transitively needs.
    StageNeeds needs = needs_for_methods(cfg.methods);
    const bool run_eval = requested.count("eval") > 0;
    StageNeeds active;  // what this invocation must materialize
    if (run_eval) active = needs;
    if (requested.count("trainers")) {
        if (!opt.train_variants.empty())
            active.variants.insert(opt.train_variants.begin(), opt.train_variants.end());
        else
            active.variants.insert(needs.variants.begin(), needs.variants.end());
    }
    if (requested.count("corpus")) active.corpus = true;
    if (requested.count("vae")) active.vae = true;
    if (requested.count("hyperclip")) active.clip = true;
    if (requested.count("hyperldm")) {
        if (needs.ldm_hnet || needs.ldm_hvae) {
            active.ldm_hnet = needs.ldm_hnet;
            active.ldm_hvae = needs.ldm_hvae;
        } else {
            active.ldm_hnet = active.ldm_hvae = true;
        }
    }
    if (active.ldm_hvae) active.vae = true;
    if (active.vae || active.clip || active.ldm_hnet || active.ldm_hvae) active.corpus = true;
    if (active.corpus) active.variants.insert(meta::Variant::HNetMamlUncond);

    // Trainers, in declaration order for stable logs.
    for (meta::Variant v :
         {meta::Variant::MNetMultitask, meta::Variant::MNetMaml, meta::Variant::MNetFomaml,
          meta::Variant::HNetMamlUncond, meta::Variant::HNetMamlCond,
          meta::Variant::HNetMultitaskCond}) {
        if (!active.variants.count(v)) continue;
        const std::string name = meta::variant_name(v);
        const std::string stage = "trainer/" + name;
        const bool req = requested.count("trainers") &&
                         (opt.train_variants.empty() ||
                          std::find(opt.train_variants.begin(), opt.train_variants.end(),
                                    v) != opt.train_variants.end());
        auto it = cfg.trainers.find(v);
        if (it == cfg.trainers.end())
            throw config_error("config: no trainer block for " + name);
        const meta::TrainConfig& tc = it->second;
        const uint64_t init_seed = hash_seed({cfg.init_seed, str_hash(name)});
        meta::TrainResult tr;
        ensure_artifact(
            stage, out + "/trainer_" + name + ".ckpt", stage,
            stage_fingerprint(cfg, stage), req, opt, result,
            [&] { tr = meta::train_meta(v, u, cfg.base, hyper_cfg_for(cfg, v), tc, init_seed); },
            [&] {
                a.models[v] = tr.model;
                return pack_meta(tr.model, tr.loss_curve, tc.seed);
            },
            [&](const ckpt::Checkpoint& c) { a.models[v] = unpack_meta(c, v, cfg, a.manifest); });
    }

    if (active.corpus) {
        std::vector<meta::CorpusEntry> entries;
        ensure_artifact(
            "corpus", out + "/corpus.ckpt", "corpus", stage_fingerprint(cfg, "corpus"),
            requested.count("corpus") > 0, opt, result,
            [&] {
                entries = meta::collect_corpus(a.models.at(meta::Variant::HNetMamlUncond), u,
                                               cfg.corpus);
            },
            [&] {
                const int n = static_cast<int>(entries.size());
                const int dim_w = nets::param_count(a.manifest);
                const int d_z = static_cast<int>(entries[0].z.size());
                const int d_e = cfg.universe.d_e;
                std::vector<double> w, z, e;
                std::vector<int> ts, rs;
                for (const auto& en : entries) {
                    auto wd = en.w_flat.data();
                    w.insert(w.end(), wd.begin(), wd.end());
                    auto zd = en.z.data();
                    z.insert(z.end(), zd.begin(), zd.end());
                    e.insert(e.end(), en.descriptor.begin(), en.descriptor.end());
                    ts.push_back(en.task_id);
                    rs.push_back(en.repeat);
                }
                a.corpus_w = ad::Tensor::matrix(n, dim_w, std::move(w));
                a.corpus_z = ad::Tensor::matrix(n, d_z, std::move(z));
                a.corpus_e = ad::Tensor::matrix(n, d_e, std::move(e));
                a.corpus_task = ts;
                a.corpus_repeat = rs;
                ckpt::Checkpoint c;
                c.seed = cfg.corpus.seed;
                c.add("w", a.corpus_w);
                c.add("z", a.corpus_z);
                c.add("e", a.corpus_e);
                c.add("task_id", int_tensor(ts));
                c.add("repeat", int_tensor(rs));
                return c;
            },
            [&](const ckpt::Checkpoint& c) {
                a.corpus_w = c.get("w");
                a.corpus_z = c.get("z");
                a.corpus_e = c.get("e");
                a.corpus_task = int_vector(c.get("task_id"));
                a.corpus_repeat = int_vector(c.get("repeat"));
                if (a.corpus_w.shape()[1] != nets::param_count(a.manifest))
                    throw checkpoint_error("corpus checkpoint does not match the manifest");
            });
    }

    if (active.vae) {
        ensure_artifact(
            "vae", out + "/vae.ckpt", "vae", stage_fingerprint(cfg, "vae"),
            requested.count("vae") > 0, opt, result,
            [&] { a.vae = vae::vae_train(a.corpus_w, a.manifest, cfg.vae); },
            [&] {
                ckpt::Checkpoint c;
                c.seed = cfg.vae.seed;
                c.add("enc_w1", a.vae.enc.w1);
                c.add("enc_b1", a.vae.enc.b1);
                c.add("enc_w2", a.vae.enc.w2);
                c.add("enc_b2", a.vae.enc.b2);
                c.add("enc_w3", a.vae.enc.w3);
                c.add("enc_b3", a.vae.enc.b3);
                c.add("dec_w1", a.vae.dec.w1);
                c.add("dec_b1", a.vae.dec.b1);
                c.add("dec_w2", a.vae.dec.w2);
                c.add("dec_b2", a.vae.dec.b2);
                c.add("loss_curve", curve_tensor(a.vae.loss_curve));
                return c;
            },
            [&](const ckpt::Checkpoint& c) {
                a.vae.enc = vae::EncoderParams{c.get("enc_w1"), c.get("enc_b1"),
                                               c.get("enc_w2"), c.get("enc_b2"),
                                               c.get("enc_w3"), c.get("enc_b3")};
                a.vae.dec = nets::HyperParams{c.get("dec_w1"), c.get("dec_b1"),
                                              c.get("dec_w2"), c.get("dec_b2")};
                a.vae.dec_cfg = nets::HyperConfig{cfg.vae.d_z, cfg.vae.decoder_hidden,
                                                  cfg.vae.decoder_out_scale};
                const auto& lc = c.get("loss_curve").data();
                a.vae.loss_curve.assign(lc.begin(), lc.end());
            });
    }

    if (active.clip) {
        ensure_artifact(
            "hyperclip", out + "/hyperclip.ckpt", "hyperclip",
            stage_fingerprint(cfg, "hyperclip"), requested.count("hyperclip") > 0, opt,
            result,
            [&] {
                ClipSplit split = clip_split(a, u, cfg.corpus.repeats);
                a.hyperclip = clip::train_hyperclip(
                    split.ws, split.ids, u.descriptor_matrix(u.train_ids()), cfg.hyperclip);
            },
            [&] {
                ckpt::Checkpoint c;
                c.seed = cfg.hyperclip.seed;
                c.add("w1", a.hyperclip.params.w1);
                c.add("b1", a.hyperclip.params.b1);
                c.add("w2", a.hyperclip.params.w2);
                c.add("b2", a.hyperclip.params.b2);
                c.add("log_tau", a.hyperclip.params.log_tau);
                c.add("loss_curve", curve_tensor(a.hyperclip.loss_curve));
                return c;
            },
            [&](const ckpt::Checkpoint& c) {
                a.hyperclip.params =
                    clip::HyperCLIPParams{c.get("w1"), c.get("b1"), c.get("w2"), c.get("b2"),
                                          c.get("log_tau")};
                const auto& lc = c.get("loss_curve").data();
                a.hyperclip.loss_curve.assign(lc.begin(), lc.end());
            });
    }

    if (active.ldm_hnet) {
        const ldm::LDMConfig lc = flavored_ldm_cfg(cfg, "hnet");
        ensure_artifact(
            "hyperldm/hnet", out + "/hyperldm_hnet.ckpt", "hyperldm/hnet",
            stage_fingerprint(cfg, "hyperldm/hnet"), requested.count("hyperldm") > 0, opt,
            result, [&] { a.ldm_hnet = ldm::ldm_train(a.corpus_z, a.corpus_e, lc); },
            [&] { return pack_ldm(a.ldm_hnet, lc.seed); },
            [&](const ckpt::Checkpoint& c) { a.ldm_hnet = unpack_ldm(c, cfg); });
    }

    if (active.ldm_hvae) {
        const ldm::LDMConfig lc = flavored_ldm_cfg(cfg, "hvae");
        ensure_artifact(
            "hyperldm/hvae", out + "/hyperldm_hvae.ckpt", "hyperldm/hvae",
            stage_fingerprint(cfg, "hyperldm/hvae"), requested.count("hyperldm") > 0, opt,
            result,
            [&] { a.ldm_hvae = ldm::ldm_train(vae_corpus_means(a), a.corpus_e, lc); },
            [&] { return pack_ldm(a.ldm_hvae, lc.seed); },
            [&](const ckpt::Checkpoint& c) { a.ldm_hvae = unpack_ldm(c, cfg); });
    }

    if (run_eval) {
        result.metrics = eval_methods(cfg.methods, a, u, cfg.eval);
        write_text(out + "/metrics.csv", metrics_csv(result.metrics));
        result.ran.push_back("eval");
        if (opt.verbose)
            std::printf("[eval] wrote %s\n", (out + "/metrics.csv").c_str());
    }
    return result;
}

FractionSweep fraction_sweep(const ExperimentConfig& cfg, const std::vector<Method>& methods,
                             const std::vector<double>& fractions,
                             const PipelineOptions& opt) {
    if (methods.empty()) throw config_error("fraction_sweep: no methods given");
    for (Method m : methods)
        if (m != Method::MNetMultitask && m != Method::HNetMultitaskCond &&
            m != Method::HNetHyperldm && m != Method::HVaeHyperldm)
            throw config_error(std::string("fraction_sweep: unsupported method '") +
                               method_name(m) + "'");
    for (double f : fractions)
        if (!(f > 0) || f > 1)
            throw config_error("fraction_sweep: fractions must lie in (0, 1]");

    // Unmasked artifacts; per-fraction runs re-use the corpus and VAE.
    ExperimentConfig base_cfg = cfg;
    base_cfg.methods = methods;
    PipelineOptions base_opt = opt;
    StageNeeds needs = needs_for_methods(methods);
    base_opt.stages = {"trainers"};
    if (needs.corpus) base_opt.stages.push_back("corpus");
    if (needs.vae || needs.ldm_hvae) base_opt.stages.push_back("vae");
    if (needs.ldm_hnet || needs.ldm_hvae) base_opt.stages.push_back("hyperldm");
    PipelineResult base = run_pipeline(base_cfg, base_opt);

    tasks::Universe u(cfg.universe);
    const std::vector<int> test = u.test_ids();
    const std::string out = resolve_out_dir(cfg);
    FractionSweep sweep;

    for (double f : fractions) {
        Artifacts* arts = &base.artifacts;
        Artifacts masked;
        PipelineResult scratch;
        if (f != 1.0) {
            int survivors = 0;
            for (int id : u.train_ids())
                if (u.descriptor_available(id, f)) ++survivors;
            if (survivors == 0)
                throw config_error("fraction_sweep: fraction " + num(f) +
                                   " leaves no training descriptors");

            masked = base.artifacts;
            const std::string frdir = out + "/fraction_" + num(f);
            fs::create_directories(frdir);
            const uint64_t fhash = str_hash(json(f).dump());

            if (std::find(methods.begin(), methods.end(), Method::HNetMultitaskCond) !=
                methods.end()) {
                ExperimentConfig mcfg = cfg;
                mcfg.trainers.at(meta::Variant::HNetMultitaskCond).fraction = f;
                const std::string stage = "trainer/hnet-multitask-cond";
                meta::TrainResult tr;
                ensure_artifact(
                    stage + "@" + num(f), frdir + "/trainer_hnet-multitask-cond.ckpt", stage,
                    stage_fingerprint(mcfg, stage), true, opt, scratch,
                    [&] {
                        tr = meta::train_meta(
                            meta::Variant::HNetMultitaskCond, u, cfg.base,
                            hyper_cfg_for(cfg, meta::Variant::HNetMultitaskCond),
                            mcfg.trainers.at(meta::Variant::HNetMultitaskCond),
                            hash_seed({cfg.init_seed, str_hash("hnet-multitask-cond")}));
                    },
                    [&] {
                        masked.models[meta::Variant::HNetMultitaskCond] = tr.model;
                        return pack_meta(tr.model, tr.loss_curve, cfg.trainers.at(
                            meta::Variant::HNetMultitaskCond).seed);
                    },
                    [&](const ckpt::Checkpoint& c) {
                        masked.models[meta::Variant::HNetMultitaskCond] =
                            unpack_meta(c, meta::Variant::HNetMultitaskCond, cfg,
                                        masked.manifest);
                    });
            }

            const bool want_hnet_ldm = std::find(methods.begin(), methods.end(),
                                                 Method::HNetHyperldm) != methods.end();
            const bool want_hvae_ldm = std::find(methods.begin(), methods.end(),
                                                 Method::HVaeHyperldm) != methods.end();
            if (want_hnet_ldm || want_hvae_ldm) {
                // Conditional phase only: zero the descriptor rows of masked
                // tasks so those entries train the null-token branch.
                const int n = static_cast<int>(base.artifacts.corpus_e.shape()[0]);
                const int d_e = cfg.universe.d_e;
                std::vector<double> es(base.artifacts.corpus_e.data().begin(),
                                       base.artifacts.corpus_e.data().end());
                for (int i = 0; i < n; ++i)
                    if (!u.descriptor_available(base.artifacts.corpus_task[i], f))
                        std::fill(es.begin() + static_cast<size_t>(i) * d_e,
                                  es.begin() + static_cast<size_t>(i + 1) * d_e, 0.0);
                ad::Tensor masked_es = ad::Tensor::matrix(n, d_e, std::move(es));

                if (want_hnet_ldm) {
                    const ldm::LDMConfig lc = flavored_ldm_cfg(cfg, "hnet");
                    ensure_artifact(
                        "hyperldm/hnet@" + num(f), frdir + "/hyperldm_hnet.ckpt",
                        "hyperldm/hnet",
                        hash_seed({stage_fingerprint(cfg, "hyperldm/hnet"), fhash}), true,
                        opt, scratch,
                        [&] {
                            masked.ldm_hnet =
                                ldm::ldm_train(base.artifacts.corpus_z, masked_es, lc);
                        },
                        [&] { return pack_ldm(masked.ldm_hnet, lc.seed); },
                        [&](const ckpt::Checkpoint& c) {
                            masked.ldm_hnet = unpack_ldm(c, cfg);
                        });
                }
                if (want_hvae_ldm) {
                    const ldm::LDMConfig lc = flavored_ldm_cfg(cfg, "hvae");
                    ensure_artifact(
                        "hyperldm/hvae@" + num(f), frdir + "/hyperldm_hvae.ckpt",
                        "hyperldm/hvae",
                        hash_seed({stage_fingerprint(cfg, "hyperldm/hvae"), fhash}), true,
                        opt, scratch,
                        [&] {
                            masked.ldm_hvae = ldm::ldm_train(vae_corpus_means(base.artifacts),
                                                             masked_es, lc);
                        },
                        [&] { return pack_ldm(masked.ldm_hvae, lc.seed); },
                        [&](const ckpt::Checkpoint& c) {
                            masked.ldm_hvae = unpack_ldm(c, cfg);
                        });
                }
            }
            arts = &masked;
        }

        for (Method m : methods) {
            const long before = tasks::support_access_count();
            std::vector<double> per_seed;
            for (uint64_t seed : cfg.eval.seeds)
                per_seed.push_back(zero_shot_accuracy(m, *arts, u, test, seed, cfg.eval));
            if (tasks::support_access_count() != before)
                throw error("zero-shot evaluation touched support data");
            auto [mean, stddev] = mean_std(per_seed);
            sweep.cells.push_back({method_name(m), f, mean, stddev,
                                   static_cast<int>(per_seed.size()), std::move(per_seed)});
        }
    }

    write_text(out + "/fraction_sweep.csv", fraction_sweep_csv(sweep));
    return sweep;
}

GammaSweep run_gamma_sweep(const ExperimentConfig& cfg, Method m,
                           const PipelineOptions& opt) {
    if (m != Method::HNetHyperldm && m != Method::HVaeHyperldm)
        throw config_error("gamma sweep: method must be a diffusion method");
    ExperimentConfig pcfg = cfg;
    pcfg.methods = {m};
    PipelineOptions popt = opt;
    popt.stages = {"trainers", "corpus", "hyperldm"};
    if (m == Method::HVaeHyperldm) popt.stages.insert(popt.stages.end() - 1, "vae");
    PipelineResult pipe = run_pipeline(pcfg, popt);

    tasks::Universe u(cfg.universe);
    GammaSweep sweep =
        gamma_sweep(m, pipe.artifacts, u, u.test_ids(), cfg.sweep_gammas, cfg.eval);
    write_text(resolve_out_dir(cfg) + "/gamma_sweep.csv", gamma_sweep_csv(sweep));
    return sweep;
}

}  // namespace hypergen::harness
