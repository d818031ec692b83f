#include "hypergen/ad/tape.hpp"

#include <algorithm>
#include <atomic>
#include <optional>
#include <string>

#include "hypergen/ad/ops.hpp"

namespace hypergen::ad {

namespace {
std::atomic<uint64_t> g_tape_counter{1};
thread_local Tape* g_active_tape = nullptr;
thread_local int g_pause_depth = 0;
}  // namespace

struct detail_access {
    static std::vector<Tape::Record>& records(Tape& t) { return t.records_; }
    static int64_t next_id(Tape& t) { return t.next_node_id_++; }
    static int creation_gen(const Tape& t) { return t.creation_gen_; }
    static void set_creation_gen(Tape& t, int g) {
        t.creation_gen_ = g;
        t.max_gen_ = std::max(t.max_gen_, g);
    }
    static GradMap make_gradmap(std::vector<Tensor> params, std::vector<Tensor> grads) {
        GradMap m;
        m.params_ = std::move(params);
        m.grads_ = std::move(grads);
        return m;
    }
};

Tape::Tape() : id_(g_tape_counter.fetch_add(1, std::memory_order_relaxed)) {}

void Tape::watch(Tensor& param) {
    if (!param.defined()) throw error("watch: undefined tensor");
    auto* impl = param.impl();
    if (impl->tape_id == id_) {
        for (const Tensor& w : watched_)
            if (w.impl() == impl) return;  // already watched here
    }
    impl->requires_grad = true;
    impl->tape_id = id_;
    impl->node_id = next_node_id_++;
    watched_.push_back(param);
}

void Tape::clear() {
    records_.clear();
    watched_.clear();
    next_node_id_ = 0;
    max_gen_ = 0;
    creation_gen_ = 0;
}

TapeScope::TapeScope(Tape& t) {
    if (g_active_tape != nullptr)
        throw error("TapeScope: a tape is already active on this thread");
    g_active_tape = &t;
}

TapeScope::~TapeScope() { g_active_tape = nullptr; }

PauseScope::PauseScope() { ++g_pause_depth; }
PauseScope::~PauseScope() { --g_pause_depth; }

bool recording_active() { return g_active_tape != nullptr && g_pause_depth == 0; }
Tape* active_tape() { return g_active_tape; }

namespace detail {

bool maybe_record(Tensor& out, const char* name, const std::vector<Tensor>& ins,
                  PullbackFn fn, bool first_order_only) {
    if (!recording_active()) return false;
    bool any = false;
    for (const Tensor& t : ins)
        if (t.requires_grad()) any = true;
    if (!any) return false;

    Tape& tape = *g_active_tape;
    Tape::Record rec;
    rec.out = out.handle();
    rec.in_handles.assign(ins.begin(), ins.end());
    rec.ins.reserve(rec.in_handles.size());
    for (const Tensor& t : rec.in_handles) rec.ins.push_back(t.impl());
    rec.fn = std::move(fn);
    rec.name = name;
    rec.id = detail_access::next_id(tape);
    rec.gen = detail_access::creation_gen(tape);
    rec.first_order_only = first_order_only;

    out.impl()->requires_grad = true;
    out.impl()->tape_id = tape.id();
    out.impl()->node_id = rec.id;
    detail_access::records(tape).push_back(std::move(rec));
    return true;
}

bool maybe_record(Tensor& out, const char* name, std::initializer_list<Tensor> ins,
                  PullbackFn fn, bool first_order_only) {
    return maybe_record(out, name, std::vector<Tensor>(ins.begin(), ins.end()), std::move(fn),
                        first_order_only);
}

}  // namespace detail

namespace {

// Restores the tape's record-generation stamp on exit.
class GenScope {
public:
    GenScope(Tape& t, int gen) : tape_(t), prev_(detail_access::creation_gen(t)) {
        detail_access::set_creation_gen(t, gen);
    }
    ~GenScope() { detail_access::set_creation_gen(tape_, prev_); }

private:
    Tape& tape_;
    int prev_;
};

void check_loss(const Tape& tape, const Tensor& loss, const char* who) {
    if (!loss.defined() || loss.size() != 1)
        throw error(std::string(who) + ": loss must be a defined scalar");
    const auto* impl = loss.impl();
    if (impl->tape_id != tape.id() || impl->node_id < 0)
        throw error(std::string(who) + ": loss is not recorded on this tape");
}

void accumulate(std::unordered_map<detail::TensorData*, Tensor>& grads,
                detail::TensorData* key, const Tensor& g) {
    auto it = grads.find(key);
    if (it == grads.end())
        grads.emplace(key, g);
    else
        it->second = add(it->second, g);
}

// Reverse sweep over records with id in [stop_id, loss.node_id].
void run_sweep(Tape& tape, const Tensor& loss, int64_t stop_id, bool create_graph,
               std::unordered_map<detail::TensorData*, Tensor>& grads) {
    grads.emplace(loss.impl(), Tensor::scalar(1.0));
    auto& records = detail_access::records(tape);
    int sweep_gen = 1;

    // Records are id-sorted; find the first record with id > loss.node_id.
    size_t begin = records.size();
    while (begin > 0 && records[begin - 1].id > loss.impl()->node_id) --begin;

    for (size_t i = begin; i-- > 0;) {
        // Copy the record: create_graph pullbacks append to `records`, which
        // may reallocate mid-iteration.
        Tape::Record rec = records[i];
        if (rec.id < stop_id) break;
        auto git = grads.find(rec.out.get());
        if (git == grads.end()) continue;
        Tensor gout = git->second;

        sweep_gen = std::max(sweep_gen, rec.gen + 1);
        if (sweep_gen > 2)
            throw error("differentiation nesting depth exceeds 2 (op '" +
                        std::string(rec.name) + "')");
        if (create_graph && rec.first_order_only)
            throw error("op '" + std::string(rec.name) +
                        "' supports first-order differentiation only");

        std::vector<bool> needs(rec.ins.size());
        for (size_t j = 0; j < rec.ins.size(); ++j) needs[j] = rec.ins[j]->requires_grad;

        std::optional<PauseScope> pause;
        if (!create_graph) pause.emplace();
        GenScope gen_scope(tape, rec.gen + 1);
        std::vector<Tensor> gins = rec.fn(gout, needs);
        if (gins.size() != rec.ins.size())
            throw error("pullback of '" + std::string(rec.name) +
                        "' returned wrong arity");
        for (size_t j = 0; j < gins.size(); ++j) {
            if (!needs[j] || !gins[j].defined()) continue;
            accumulate(grads, rec.ins[j], gins[j]);
        }
    }
}

}  // namespace

GradMap backward(Tape& tape, const Tensor& loss) {
    check_loss(tape, loss, "backward");
    std::unordered_map<detail::TensorData*, Tensor> grads;
    run_sweep(tape, loss, 0, /*create_graph=*/false, grads);
    std::vector<Tensor> params = tape.watched();
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Tensor& p : params) {
        auto it = grads.find(p.impl());
        out.push_back(it != grads.end() ? it->second : Tensor::zeros(p.shape()));
    }
    return detail_access::make_gradmap(std::move(params), std::move(out));
}

std::vector<Tensor> grad(Tape& tape, const Tensor& loss, const std::vector<Tensor>& wrt,
                         bool create_graph) {
    check_loss(tape, loss, "grad");
    int64_t stop_id = loss.impl()->node_id;
    bool any_on_tape = false;
    for (const Tensor& t : wrt) {
        if (t.defined() && t.impl()->tape_id == tape.id() && t.impl()->node_id >= 0) {
            stop_id = std::min(stop_id, t.impl()->node_id);
            any_on_tape = true;
        }
    }
    std::unordered_map<detail::TensorData*, Tensor> grads;
    if (any_on_tape) run_sweep(tape, loss, stop_id, create_graph, grads);
    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const Tensor& t : wrt) {
        auto it = grads.find(t.impl());
        out.push_back(it != grads.end() ? it->second : Tensor::zeros(t.shape()));
    }
    return out;
}

const Tensor& GradMap::for_param(const Tensor& p) const {
    for (size_t i = 0; i < params_.size(); ++i)
        if (params_[i].impl() == p.impl()) return grads_[i];
    throw error("GradMap: tensor was not watched on the tape");
}

}  // namespace hypergen::ad
