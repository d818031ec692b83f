#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hypergen/ad/tensor.hpp"

// Synthetic task universe: a parametric family of small 2-D Gaussian-cluster
// classification tasks with deterministic descriptor embeddings and a Bayes
// oracle. Every draw is a pure function of (universe seed, indices), so any
// consumer can re-materialize identical data from the config alone.
namespace hypergen::tasks {

struct TaskParams {
    double angle;   // cluster-ring rotation, [0, 2pi)
    double radius;  // ring radius, [0.5, 2.0]
    int pattern;    // row of the label-assignment table, {0..P-1}
    double sigma;   // cluster standard deviation
};

struct TaskSpec {
    int id = -1;
    TaskParams params{};
    std::vector<double> descriptor;  // unit norm, dim d_e
    uint64_t data_seed = 0;
};

struct LabeledSet {
    ad::Tensor x;        // (n, 2)
    std::vector<int> y;  // labels in {0..C-1}
    int n() const { return static_cast<int>(y.size()); }
};

struct BayesResult {
    double accuracy;
    double std_error;
};

struct UniverseConfig {
    uint64_t seed = 43;  // default chosen for comfortable descriptor separation
    int classes = 4;   // C: clusters per task = label space size
    int patterns = 8;  // P: rows of the label-assignment table
    int d_e = 16;      // descriptor embedding dimension
    double sigma_lo = 0.15;
    double sigma_hi = 0.45;
    int n_train_tasks = 64;
    int n_test_tasks = 16;
    double descriptor_noise = 0.0;  // optional corruption std, pre-normalization

    void validate() const;  // throws config_error
    int n_tasks() const { return n_train_tasks + n_test_tasks; }
};

// Label table: row k assigns a class label to each cluster position. Row 0 is
// the identity. The default 4x8 table is deliberately non-bijective with label
// 0 over-represented (15/32 of cells): with rotations marginalized, x carries
// no information about the pattern row, so the best descriptor-free classifier
// attains exactly the majority-label frequency. A skewed table therefore
// separates "learned the label prior" (~47%) from "ignores structure" (~25%)
// for unconditional methods, while conditional methods can exceed both.
std::vector<std::vector<int>> pattern_table(int classes, int patterns);

class Universe {
public:
    explicit Universe(UniverseConfig cfg);

    const UniverseConfig& config() const { return cfg_; }
    const std::vector<std::vector<int>>& table() const { return table_; }

    const TaskSpec& task(int id) const;
    std::vector<int> train_ids() const;
    std::vector<int> test_ids() const;

    // Support/query realization: disjoint draws from the task's cluster
    // mixture. Fresh draw_seed per call re-splits, matching stochastic
    // support/query sampling during training. n_support may be zero.
    std::pair<LabeledSet, LabeledSet> realize_split(int id, int n_support, int n_query,
                                                    uint64_t draw_seed) const;

    // Fixed per-universe evaluation sets (stable across calls).
    LabeledSet eval_query(int id, int n_query) const;
    LabeledSet eval_support(int id, int n_support, uint64_t eval_seed) const;

    // Monte Carlo estimate of Bayes-optimal accuracy; deterministic per task.
    BayesResult bayes_accuracy(int id, int n_mc) const;

    // Per-task descriptor availability at a masking fraction. A task's draw is
    // fixed once per universe, so masks are nested across fractions.
    bool descriptor_available(int id, double fraction) const;

    // Rows = descriptors of the given tasks, shape (ids.size(), d_e).
    ad::Tensor descriptor_matrix(const std::vector<int>& ids) const;

private:
    UniverseConfig cfg_;
    std::vector<std::vector<int>> table_;
    std::vector<TaskSpec> specs_;
    std::vector<double> mask_draws_;
};

// Process-wide count of evaluation-support draws. Zero-shot evaluation must
// not move it; the harness asserts a zero delta around its zero-shot paths.
long support_access_count();

// Spec-level free operations (Universe wraps these for convenience).
TaskSpec sample_task(const UniverseConfig& cfg, int task_index);
std::vector<double> encode_descriptor(const TaskParams& params, const UniverseConfig& cfg);
std::pair<LabeledSet, LabeledSet> realize_split(const TaskSpec& task, const UniverseConfig& cfg,
                                                int n_support, int n_query, uint64_t draw_seed);
BayesResult bayes_accuracy(const TaskSpec& task, const UniverseConfig& cfg, int n_mc);

}  // namespace hypergen::tasks
