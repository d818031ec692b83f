#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "hypergen/ad/tensor.hpp"

namespace hypergen::ad {

// Reverse-mode tape. Operations executed while a tape is active (via TapeScope)
// and touching at least one grad-requiring tensor append a record holding the
// pullback closure. Gradient computations themselves run through the same op
// layer, so a sweep with create_graph=true appends new records to the same
// tape; those records carry derivative generation rec.gen+1. A sweep that
// would need generation > 2 throws: exact bi-level meta-gradients need one
// backward-through-backward and nothing deeper is supported.
//
// Tapes are thread-confined: one active tape per thread, no sharing.

using PullbackFn =
    std::function<std::vector<Tensor>(const Tensor& gout, const std::vector<bool>& needs)>;

class Tape {
public:
    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a parameter: marks it grad-requiring and assigns it a node id
    // on this tape. backward() reports a gradient for every watched tensor.
    void watch(Tensor& param);

    const std::vector<Tensor>& watched() const { return watched_; }
    size_t num_records() const { return records_.size(); }
    // Highest derivative generation recorded so far (0: primal only).
    int generation() const { return max_gen_; }
    uint64_t id() const { return id_; }

    // Drops all records and watched parameters.
    void clear();

    struct Record {
        std::shared_ptr<detail::TensorData> out;
        std::vector<detail::TensorData*> ins;
        std::vector<Tensor> in_handles;  // keep input storage alive for the sweep
        PullbackFn fn;
        const char* name;
        int64_t id;
        int gen;
        bool first_order_only;
    };

private:
    uint64_t id_;
    int64_t next_node_id_ = 0;
    int max_gen_ = 0;
    int creation_gen_ = 0;  // generation stamped on records created right now
    std::vector<Record> records_;
    std::vector<Tensor> watched_;

    friend struct detail_access;
};

// Activates a tape on this thread for its scope. Only one may be active.
class TapeScope {
public:
    explicit TapeScope(Tape& t);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
};

// Suspends recording (ops run as plain evaluation) for its scope.
class PauseScope {
public:
    PauseScope();
    ~PauseScope();
    PauseScope(const PauseScope&) = delete;
    PauseScope& operator=(const PauseScope&) = delete;
};

bool recording_active();  // a tape is active and not paused
Tape* active_tape();      // nullptr when none

namespace detail {
// Appends a record for `out` if recording is active and any input requires
// grad. Stamps out's tape/node ids. Returns true when recorded.
bool maybe_record(Tensor& out, const char* name, const std::vector<Tensor>& ins,
                  PullbackFn fn, bool first_order_only = false);
bool maybe_record(Tensor& out, const char* name, std::initializer_list<Tensor> ins,
                  PullbackFn fn, bool first_order_only = false);
}  // namespace detail

// Gradients of a backward() call, aligned with the tape's watch order.
// Non-participating parameters get zero gradients.
class GradMap {
public:
    const Tensor& for_param(const Tensor& p) const;
    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<Tensor>& grads() const { return grads_; }

private:
    std::vector<Tensor> params_;
    std::vector<Tensor> grads_;
    friend struct detail_access;
};

// Full-tape reverse sweep from a scalar loss; returns gradients for every
// watched parameter. Pullbacks run unrecorded (first-order result).
GradMap backward(Tape& tape, const Tensor& loss);

// Partial reverse sweep returning dloss/dwrt for each target. With
// create_graph=true the gradient computation is recorded on the same tape and
// the returned tensors participate in later differentiation. Targets that are
// not on the tape (or unreachable from the loss) get zero gradients.
std::vector<Tensor> grad(Tape& tape, const Tensor& loss, const std::vector<Tensor>& wrt,
                         bool create_graph);

}  // namespace hypergen::ad
