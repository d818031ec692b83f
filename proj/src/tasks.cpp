#include "hypergen/tasks.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numbers>

#include "hypergen/errors.hpp"
#include "hypergen/rng.hpp"

namespace hypergen::tasks {

namespace {

// Stream tags keep every consumer of the universe seed on a disjoint RNG
// stream. Values are FNV-1a of the stream name, frozen here as constants.
constexpr uint64_t kTagTask = 0xd0ff7b9517da1979ull;        // fnv1a("task-params")
constexpr uint64_t kTagData = 0x451e7514906f9d1bull;        // fnv1a("task-data")
constexpr uint64_t kTagDescMap = 0xc7797dab5987e6d7ull;     // fnv1a("descriptor-map")
constexpr uint64_t kTagDescNoise = 0x72afc44a14f15743ull;   // fnv1a("descriptor-noise")
constexpr uint64_t kTagMask = 0x7b5b1e2921f0b653ull;        // fnv1a("descriptor-mask")
constexpr uint64_t kTagRealize = 0x9ca71da24fc78d38ull;     // fnv1a("realize-split")
constexpr uint64_t kTagEvalQuery = 0xdb36b2c45b11202aull;   // fnv1a("eval-query")
constexpr uint64_t kTagEvalSupport = 0x4042905ba16b9f95ull; // fnv1a("eval-support")
constexpr uint64_t kTagBayes = 0xb3e2834bf073494eull;       // fnv1a("bayes-mc")

uint64_t double_bits(double v) {
    uint64_t u;
    std::memcpy(&u, &v, sizeof(u));
    return u;
}

void cluster_center(const TaskParams& p, int c, int classes, double* cx, double* cy) {
    const double theta = p.angle + 2.0 * std::numbers::pi * c / classes;
    *cx = p.radius * std::cos(theta);
    *cy = p.radius * std::sin(theta);
}

LabeledSet draw_points(Rng& rng, const TaskParams& p, const std::vector<int>& row, int classes,
                       int n) {
    std::vector<double> xs(static_cast<size_t>(n) * 2);
    std::vector<int> ys(n);
    for (int i = 0; i < n; ++i) {
        const int c = static_cast<int>(rng.below(static_cast<uint64_t>(classes)));
        double cx, cy;
        cluster_center(p, c, classes, &cx, &cy);
        xs[2 * i + 0] = cx + p.sigma * rng.normal();
        xs[2 * i + 1] = cy + p.sigma * rng.normal();
        ys[i] = row[c];
    }
    return LabeledSet{ad::Tensor::matrix(n, 2, xs), std::move(ys)};
}

}  // namespace

void UniverseConfig::validate() const {
    if (classes < 2) throw config_error("universe: classes must be >= 2");
    if (patterns < 1) throw config_error("universe: patterns must be >= 1");
    if (d_e < 2) throw config_error("universe: d_e must be >= 2");
    if (!(sigma_lo >= 0.0) || !(sigma_hi >= sigma_lo))
        throw config_error("universe: need 0 <= sigma_lo <= sigma_hi");
    if (n_train_tasks < 1 || n_test_tasks < 1)
        throw config_error("universe: need at least one train and one test task");
    if (!(descriptor_noise >= 0.0)) throw config_error("universe: descriptor_noise must be >= 0");
}

std::vector<std::vector<int>> pattern_table(int classes, int patterns) {
    if (classes == 4 && patterns == 8) {
        // Canonical table. Row 0 is the identity; label 0 fills 15 of 32 cells.
        return {
            {0, 1, 2, 3}, {0, 0, 2, 3}, {0, 1, 0, 3}, {0, 1, 2, 0},
            {0, 0, 1, 2}, {3, 0, 0, 1}, {2, 0, 1, 0}, {1, 2, 0, 0},
        };
    }
    // Generic sizes: identity row, then cyclic shifts with one cell forced to 0
    // to keep the majority-label skew.
    std::vector<std::vector<int>> table(patterns, std::vector<int>(classes));
    for (int k = 0; k < patterns; ++k) {
        for (int c = 0; c < classes; ++c) {
            if (k == 0)
                table[k][c] = c;
            else
                table[k][c] = (c == k % classes) ? 0 : (c + k) % classes;
        }
    }
    return table;
}

TaskSpec sample_task(const UniverseConfig& cfg, int task_index) {
    cfg.validate();
    if (task_index < 0) throw config_error("sample_task: task_index must be >= 0");
    Rng rng(hash_seed({cfg.seed, kTagTask, static_cast<uint64_t>(task_index)}));
    TaskSpec spec;
    spec.id = task_index;
    spec.params.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    spec.params.radius = rng.uniform(0.5, 2.0);
    spec.params.pattern = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.patterns)));
    spec.params.sigma = rng.uniform(cfg.sigma_lo, cfg.sigma_hi);
    spec.data_seed = hash_seed({cfg.seed, kTagData, static_cast<uint64_t>(task_index)});
    spec.descriptor = encode_descriptor(spec.params, cfg);
    return spec;
}

std::vector<double> encode_descriptor(const TaskParams& params, const UniverseConfig& cfg) {
    if (params.pattern < 0 || params.pattern >= cfg.patterns)
        throw config_error("encode_descriptor: pattern index out of range");
    const int d_f = 3 + cfg.patterns;
    std::vector<double> feat(d_f, 0.0);
    feat[0] = std::cos(params.angle);
    feat[1] = std::sin(params.angle);
    feat[2] = params.radius;
    feat[3 + params.pattern] = 1.0;

    if (cfg.d_e < d_f)
        throw config_error("encode_descriptor: d_e must be >= 3 + patterns");

    // One fixed random linear map per universe; never depends on the task.
    // Columns are orthonormalized so the map is an isometry: descriptor
    // cosines equal feature-space cosines exactly, which keeps distinct tasks
    // separated instead of leaving the margin to projection luck.
    Rng map_rng(hash_seed({cfg.seed, kTagDescMap}));
    std::vector<std::vector<double>> col(d_f, std::vector<double>(cfg.d_e));
    for (int i = 0; i < cfg.d_e; ++i)
        for (int j = 0; j < d_f; ++j) col[j][i] = map_rng.normal();
    for (int j = 0; j < d_f; ++j) {
        for (int i = 0; i < j; ++i) {
            double dot = 0;
            for (int t = 0; t < cfg.d_e; ++t) dot += col[j][t] * col[i][t];
            for (int t = 0; t < cfg.d_e; ++t) col[j][t] -= dot * col[i][t];
        }
        double ss = 0;
        for (int t = 0; t < cfg.d_e; ++t) ss += col[j][t] * col[j][t];
        const double inv = 1.0 / std::sqrt(ss);
        for (int t = 0; t < cfg.d_e; ++t) col[j][t] *= inv;
    }
    std::vector<double> v(cfg.d_e, 0.0);
    for (int j = 0; j < d_f; ++j)
        for (int i = 0; i < cfg.d_e; ++i) v[i] += col[j][i] * feat[j];

    if (cfg.descriptor_noise > 0.0) {
        // Corruption is a pure function of (params, universe seed) so the
        // descriptor stays deterministic for a given task.
        Rng noise_rng(hash_seed({cfg.seed, kTagDescNoise, double_bits(params.angle),
                                 double_bits(params.radius),
                                 static_cast<uint64_t>(params.pattern),
                                 double_bits(params.sigma)}));
        for (int i = 0; i < cfg.d_e; ++i) v[i] += cfg.descriptor_noise * noise_rng.normal();
    }

    double ss = 0.0;
    for (double t : v) ss += t * t;
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0)) throw numeric_error("encode_descriptor: zero-norm embedding");
    for (double& t : v) t /= norm;
    return v;
}

std::pair<LabeledSet, LabeledSet> realize_split(const TaskSpec& task, const UniverseConfig& cfg,
                                                int n_support, int n_query, uint64_t draw_seed) {
    if (n_support < 0) throw config_error("realize_split: n_support must be >= 0");
    if (n_query < 1) throw config_error("realize_split: n_query must be >= 1");
    const auto table = pattern_table(cfg.classes, cfg.patterns);
    const auto& row = table.at(task.params.pattern);
    // Single stream, support first: query points continue where support ended.
    Rng rng(hash_seed({task.data_seed, kTagRealize, draw_seed}));
    LabeledSet support = draw_points(rng, task.params, row, cfg.classes, n_support);
    LabeledSet query = draw_points(rng, task.params, row, cfg.classes, n_query);
    return {std::move(support), std::move(query)};
}

BayesResult bayes_accuracy(const TaskSpec& task, const UniverseConfig& cfg, int n_mc) {
    if (n_mc < 1000) throw config_error("bayes_accuracy: n_mc must be >= 1000");
    const auto table = pattern_table(cfg.classes, cfg.patterns);
    const auto& row = table.at(task.params.pattern);
    const TaskParams& p = task.params;
    const int C = cfg.classes;

    std::vector<double> cx(C), cy(C);
    for (int c = 0; c < C; ++c) cluster_center(p, c, C, &cx[c], &cy[c]);

    Rng rng(hash_seed({task.data_seed, kTagBayes}));
    long hits = 0;
    std::vector<double> lw(C), py(C);
    for (int i = 0; i < n_mc; ++i) {
        const int c_true = static_cast<int>(rng.below(static_cast<uint64_t>(C)));
        const double x0 = cx[c_true] + p.sigma * rng.normal();
        const double x1 = cy[c_true] + p.sigma * rng.normal();

        int pred;
        if (p.sigma == 0.0) {
            // Degenerate mixture: the point sits exactly on its center.
            int nearest = 0;
            double best = -1.0;
            for (int c = 0; c < C; ++c) {
                const double d2 =
                    (x0 - cx[c]) * (x0 - cx[c]) + (x1 - cy[c]) * (x1 - cy[c]);
                if (best < 0.0 || d2 < best) {
                    best = d2;
                    nearest = c;
                }
            }
            pred = row[nearest];
        } else {
            double lw_max = 0.0;
            for (int c = 0; c < C; ++c) {
                const double d2 =
                    (x0 - cx[c]) * (x0 - cx[c]) + (x1 - cy[c]) * (x1 - cy[c]);
                lw[c] = -d2 / (2.0 * p.sigma * p.sigma);
                if (c == 0 || lw[c] > lw_max) lw_max = lw[c];
            }
            std::fill(py.begin(), py.end(), 0.0);
            for (int c = 0; c < C; ++c) py[row[c]] += std::exp(lw[c] - lw_max);
            pred = 0;
            for (int y = 1; y < C; ++y)
                if (py[y] > py[pred]) pred = y;
        }
        if (pred == row[c_true]) ++hits;
    }
    const double acc = static_cast<double>(hits) / n_mc;
    return BayesResult{acc, std::sqrt(acc * (1.0 - acc) / n_mc)};
}

Universe::Universe(UniverseConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    table_ = pattern_table(cfg_.classes, cfg_.patterns);
    const int n = cfg_.n_tasks();
    specs_.reserve(n);
    mask_draws_.reserve(n);
    for (int i = 0; i < n; ++i) {
        specs_.push_back(sample_task(cfg_, i));
        Rng mr(hash_seed({cfg_.seed, kTagMask, static_cast<uint64_t>(i)}));
        mask_draws_.push_back(mr.uniform());
    }
}

const TaskSpec& Universe::task(int id) const {
    if (id < 0 || id >= static_cast<int>(specs_.size()))
        throw config_error("universe: task id out of range");
    return specs_[id];
}

std::vector<int> Universe::train_ids() const {
    std::vector<int> ids(cfg_.n_train_tasks);
    for (int i = 0; i < cfg_.n_train_tasks; ++i) ids[i] = i;
    return ids;
}

std::vector<int> Universe::test_ids() const {
    std::vector<int> ids(cfg_.n_test_tasks);
    for (int i = 0; i < cfg_.n_test_tasks; ++i) ids[i] = cfg_.n_train_tasks + i;
    return ids;
}

std::pair<LabeledSet, LabeledSet> Universe::realize_split(int id, int n_support, int n_query,
                                                          uint64_t draw_seed) const {
    return tasks::realize_split(task(id), cfg_, n_support, n_query, draw_seed);
}

LabeledSet Universe::eval_query(int id, int n_query) const {
    return tasks::realize_split(task(id), cfg_, 0, n_query, kTagEvalQuery).second;
}

namespace {
std::atomic<long> g_support_accesses{0};
}

long support_access_count() { return g_support_accesses.load(); }

LabeledSet Universe::eval_support(int id, int n_support, uint64_t eval_seed) const {
    if (n_support < 1) throw config_error("eval_support: n_support must be >= 1");
    g_support_accesses.fetch_add(1);
    return tasks::realize_split(task(id), cfg_, n_support, 1,
                                hash_seed({kTagEvalSupport, eval_seed}))
        .first;
}

BayesResult Universe::bayes_accuracy(int id, int n_mc) const {
    return tasks::bayes_accuracy(task(id), cfg_, n_mc);
}

bool Universe::descriptor_available(int id, double fraction) const {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw config_error("descriptor_available: fraction must be in [0, 1]");
    task(id);  // range check
    return mask_draws_[id] < fraction;  // draws live in [0,1), so 1.0 keeps all
}

ad::Tensor Universe::descriptor_matrix(const std::vector<int>& ids) const {
    const int n = static_cast<int>(ids.size());
    std::vector<double> rows(static_cast<size_t>(n) * cfg_.d_e);
    for (int i = 0; i < n; ++i) {
        const auto& d = task(ids[i]).descriptor;
        std::copy(d.begin(), d.end(), rows.begin() + static_cast<size_t>(i) * cfg_.d_e);
    }
    return ad::Tensor::matrix(n, cfg_.d_e, rows);
}

}  // namespace hypergen::tasks
