#include "hypergen/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "hypergen/kernels.hpp"

namespace hypergen::ad {

namespace {

void ensure_finite(const Tensor& t, const char* op) {
    for (double v : t.data()) {
        if (!std::isfinite(v))
            throw numeric_error(std::string("non-finite value produced by op '") + op + "'");
    }
}

[[noreturn]] void bad_shapes(const char* op, const Tensor& a, const Tensor& b) {
    throw shape_error(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                      " and " + shape_str(b.shape()));
}

void need_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw shape_error(std::string(op) + ": expected rank-2, got " + shape_str(t.shape()));
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

using Pull = std::vector<Tensor>;

}  // namespace

// ---------------------------------------------------------------------------
// elementwise / scalar
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (same_shape(a, b)) {
        Tensor out = make_tensor(a.shape());
        kernels::add(a.data().data(), b.data().data(), out.mutable_data().data(),
                     static_cast<size_t>(a.size()));
        ensure_finite(out, "add");
        detail::maybe_record(out, "add", {a, b}, [](const Tensor& g, const std::vector<bool>& needs) {
            Pull r(2);
            if (needs[0]) r[0] = g;
            if (needs[1]) r[1] = g;
            return r;
        });
        return out;
    }
    if (b.rank() == 0) {
        Tensor out = make_tensor(a.shape());
        kernels::scale(a.data().data(), 1.0, b.item(), out.mutable_data().data(),
                       static_cast<size_t>(a.size()));
        ensure_finite(out, "add");
        detail::maybe_record(out, "add", {a, b}, [](const Tensor& g, const std::vector<bool>& needs) {
            Pull r(2);
            if (needs[0]) r[0] = g;
            if (needs[1]) r[1] = sum(g);
            return r;
        });
        return out;
    }
    if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.size()) {  // row broadcast
        const int m = a.rows(), n = a.cols();
        Tensor out = make_tensor(a.shape());
        const double* ap = a.data().data();
        const double* bp = b.data().data();
        double* op_ = out.mutable_data().data();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                op_[static_cast<size_t>(i) * n + j] = ap[static_cast<size_t>(i) * n + j] + bp[j];
        ensure_finite(out, "add");
        detail::maybe_record(out, "add", {a, b}, [](const Tensor& g, const std::vector<bool>& needs) {
            Pull r(2);
            if (needs[0]) r[0] = g;
            if (needs[1]) r[1] = sum_rows(g);
            return r;
        });
        return out;
    }
    bad_shapes("add", a, b);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (same_shape(a, b)) {
        Tensor out = make_tensor(a.shape());
        kernels::sub(a.data().data(), b.data().data(), out.mutable_data().data(),
                     static_cast<size_t>(a.size()));
        ensure_finite(out, "sub");
        detail::maybe_record(out, "sub", {a, b}, [](const Tensor& g, const std::vector<bool>& needs) {
            Pull r(2);
            if (needs[0]) r[0] = g;
            if (needs[1]) r[1] = neg(g);
            return r;
        });
        return out;
    }
    if (b.rank() == 0) {
        Tensor out = make_tensor(a.shape());
        kernels::scale(a.data().data(), 1.0, -b.item(), out.mutable_data().data(),
                       static_cast<size_t>(a.size()));
        ensure_finite(out, "sub");
        detail::maybe_record(out, "sub", {a, b}, [](const Tensor& g, const std::vector<bool>& needs) {
            Pull r(2);
            if (needs[0]) r[0] = g;
            if (needs[1]) r[1] = neg(sum(g));
            return r;
        });
        return out;
    }
    bad_shapes("sub", a, b);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (same_shape(a, b)) {
        Tensor out = make_tensor(a.shape());
        kernels::mul(a.data().data(), b.data().data(), out.mutable_data().data(),
                     static_cast<size_t>(a.size()));
        ensure_finite(out, "mul");
        Tensor A = a, B = b;
        detail::maybe_record(out, "mul", {a, b},
                             [A, B](const Tensor& g, const std::vector<bool>& needs) {
                                 Pull r(2);
                                 if (needs[0]) r[0] = mul(g, B);
                                 if (needs[1]) r[1] = mul(g, A);
                                 return r;
                             });
        return out;
    }
    if (b.rank() == 0) {
        Tensor out = make_tensor(a.shape());
        kernels::scale(a.data().data(), b.item(), 0.0, out.mutable_data().data(),
                       static_cast<size_t>(a.size()));
        ensure_finite(out, "mul");
        Tensor A = a, B = b;
        detail::maybe_record(out, "mul", {a, b},
                             [A, B](const Tensor& g, const std::vector<bool>& needs) {
                                 Pull r(2);
                                 if (needs[0]) r[0] = mul(g, B);
                                 if (needs[1]) r[1] = sum(mul(g, A));
                                 return r;
                             });
        return out;
    }
    if (a.rank() == 0) return mul(b, a);
    bad_shapes("mul", a, b);
}

Tensor add_scalar(const Tensor& x, double c) {
    Tensor out = make_tensor(x.shape());
    kernels::scale(x.data().data(), 1.0, c, out.mutable_data().data(),
                   static_cast<size_t>(x.size()));
    ensure_finite(out, "add_scalar");
    detail::maybe_record(out, "add_scalar", {x},
                         [](const Tensor& g, const std::vector<bool>&) { return Pull{g}; });
    return out;
}

Tensor mul_scalar(const Tensor& x, double c) {
    Tensor out = make_tensor(x.shape());
    kernels::scale(x.data().data(), c, 0.0, out.mutable_data().data(),
                   static_cast<size_t>(x.size()));
    ensure_finite(out, "mul_scalar");
    detail::maybe_record(out, "mul_scalar", {x},
                         [c](const Tensor& g, const std::vector<bool>&) {
                             return Pull{mul_scalar(g, c)};
                         });
    return out;
}

Tensor neg(const Tensor& x) {
    Tensor out = make_tensor(x.shape());
    kernels::map_unary(kernels::Unary::Neg, x.data().data(), out.mutable_data().data(),
                       static_cast<size_t>(x.size()));
    detail::maybe_record(out, "neg", {x}, [](const Tensor& g, const std::vector<bool>&) {
        return Pull{neg(g)};
    });
    return out;
}

Tensor exp(const Tensor& x) {
    Tensor out = make_tensor(x.shape());
    kernels::map_unary(kernels::Unary::Exp, x.data().data(), out.mutable_data().data(),
                       static_cast<size_t>(x.size()));
    ensure_finite(out, "exp");
    Tensor Y = out;
    detail::maybe_record(out, "exp", {x}, [Y](const Tensor& g, const std::vector<bool>&) {
        return Pull{mul(g, Y)};
    });
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = make_tensor(x.shape());
    kernels::map_unary(kernels::Unary::Relu, x.data().data(), out.mutable_data().data(),
                       static_cast<size_t>(x.size()));
    Tensor X = x;
    detail::maybe_record(out, "relu", {x}, [X](const Tensor& g, const std::vector<bool>&) {
        Tensor mask = make_tensor(X.shape());  // constant a.e.-derivative
        const auto xs = X.data();
        auto ms = mask.mutable_data();
        for (size_t i = 0; i < ms.size(); ++i) ms[i] = xs[i] > 0.0 ? 1.0 : 0.0;
        return Pull{mul(g, mask)};
    });
    return out;
}

Tensor tanh(const Tensor& x) {
    Tensor out = make_tensor(x.shape());
    kernels::map_unary(kernels::Unary::Tanh, x.data().data(), out.mutable_data().data(),
                       static_cast<size_t>(x.size()));
    Tensor Y = out;
    detail::maybe_record(out, "tanh", {x}, [Y](const Tensor& g, const std::vector<bool>&) {
        return Pull{mul(g, add_scalar(neg(mul(Y, Y)), 1.0))};
    });
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = make_tensor(x.shape());
    kernels::map_unary(kernels::Unary::Sigmoid, x.data().data(), out.mutable_data().data(),
                       static_cast<size_t>(x.size()));
    Tensor Y = out;
    detail::maybe_record(out, "sigmoid", {x}, [Y](const Tensor& g, const std::vector<bool>&) {
        return Pull{mul(g, mul(Y, add_scalar(neg(Y), 1.0)))};
    });
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    need_rank2(a, "matmul");
    need_rank2(b, "matmul");
    if (a.cols() != b.rows()) bad_shapes("matmul", a, b);
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_tensor({m, n});
    kernels::matmul_nn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
    ensure_finite(out, "matmul");
    Tensor A = a, B = b;
    detail::maybe_record(out, "matmul", {a, b},
                         [A, B](const Tensor& g, const std::vector<bool>& needs) {
                             Pull r(2);
                             if (needs[0]) r[0] = matmul_nt(g, B);
                             if (needs[1]) r[1] = matmul_tn(A, g);
                             return r;
                         });
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    need_rank2(a, "matmul_nt");
    need_rank2(b, "matmul_nt");
    if (a.cols() != b.cols()) bad_shapes("matmul_nt", a, b);
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = make_tensor({m, n});
    kernels::matmul_nt(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
    ensure_finite(out, "matmul_nt");
    Tensor A = a, B = b;
    detail::maybe_record(out, "matmul_nt", {a, b},
                         [A, B](const Tensor& g, const std::vector<bool>& needs) {
                             Pull r(2);
                             if (needs[0]) r[0] = matmul(g, B);
                             if (needs[1]) r[1] = matmul_tn(g, A);
                             return r;
                         });
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    need_rank2(a, "matmul_tn");
    need_rank2(b, "matmul_tn");
    if (a.rows() != b.rows()) bad_shapes("matmul_tn", a, b);
    const int k = a.rows(), m = a.cols(), n = b.cols();
    Tensor out = make_tensor({m, n});
    kernels::matmul_tn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
    ensure_finite(out, "matmul_tn");
    Tensor A = a, B = b;
    detail::maybe_record(out, "matmul_tn", {a, b},
                         [A, B](const Tensor& g, const std::vector<bool>& needs) {
                             Pull r(2);
                             if (needs[0]) r[0] = matmul_nt(B, g);
                             if (needs[1]) r[1] = matmul(A, g);
                             return r;
                         });
    return out;
}

Tensor mv(const Tensor& a, const Tensor& v) {
    need_rank2(a, "mv");
    if (v.rank() != 1 || v.size() != a.cols()) bad_shapes("mv", a, v);
    Tensor col = reshape(v, {static_cast<int>(v.size()), 1});
    Tensor res = matmul(a, col);
    return reshape(res, {a.rows()});
}

Tensor transpose(const Tensor& m) {
    need_rank2(m, "transpose");
    const int r = m.rows(), c = m.cols();
    Tensor out = make_tensor({c, r});
    const double* mp = m.data().data();
    double* op_ = out.mutable_data().data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            op_[static_cast<size_t>(j) * r + i] = mp[static_cast<size_t>(i) * c + j];
    detail::maybe_record(out, "transpose", {m}, [](const Tensor& g, const std::vector<bool>&) {
        return Pull{transpose(g)};
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions / broadcasts
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::scalar(kernels::sum(x.data().data(), static_cast<size_t>(x.size())));
    ensure_finite(out, "sum");
    Shape s = x.shape();
    detail::maybe_record(out, "sum", {x}, [s](const Tensor& g, const std::vector<bool>&) {
        return Pull{broadcast_scalar(g, s)};
    });
    return out;
}

Tensor mean(const Tensor& x) {
    const double n = static_cast<double>(x.size());
    Tensor out =
        Tensor::scalar(kernels::sum(x.data().data(), static_cast<size_t>(x.size())) / n);
    ensure_finite(out, "mean");
    Shape s = x.shape();
    detail::maybe_record(out, "mean", {x}, [s, n](const Tensor& g, const std::vector<bool>&) {
        return Pull{mul_scalar(broadcast_scalar(g, s), 1.0 / n)};
    });
    return out;
}

Tensor sum_rows(const Tensor& m) {
    need_rank2(m, "sum_rows");
    const int r = m.rows(), c = m.cols();
    Tensor out = Tensor::zeros({c});
    const double* mp = m.data().data();
    double* op_ = out.mutable_data().data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) op_[j] += mp[static_cast<size_t>(i) * c + j];
    ensure_finite(out, "sum_rows");
    detail::maybe_record(out, "sum_rows", {m}, [r](const Tensor& g, const std::vector<bool>&) {
        return Pull{broadcast_rows(g, r)};
    });
    return out;
}

Tensor sum_cols(const Tensor& m) {
    need_rank2(m, "sum_cols");
    const int r = m.rows(), c = m.cols();
    Tensor out = make_tensor({r});
    const double* mp = m.data().data();
    double* op_ = out.mutable_data().data();
    for (int i = 0; i < r; ++i)
        op_[i] = kernels::sum(mp + static_cast<size_t>(i) * c, static_cast<size_t>(c));
    ensure_finite(out, "sum_cols");
    detail::maybe_record(out, "sum_cols", {m}, [c](const Tensor& g, const std::vector<bool>&) {
        return Pull{broadcast_cols(g, c)};
    });
    return out;
}

Tensor broadcast_rows(const Tensor& v, int m) {
    if (v.rank() != 1) throw shape_error("broadcast_rows: expected rank-1");
    const int n = static_cast<int>(v.size());
    Tensor out = make_tensor({m, n});
    double* op_ = out.mutable_data().data();
    for (int i = 0; i < m; ++i)
        std::memcpy(op_ + static_cast<size_t>(i) * n, v.data().data(), sizeof(double) * n);
    detail::maybe_record(out, "broadcast_rows", {v},
                         [](const Tensor& g, const std::vector<bool>&) {
                             return Pull{sum_rows(g)};
                         });
    return out;
}

Tensor broadcast_cols(const Tensor& v, int n) {
    if (v.rank() != 1) throw shape_error("broadcast_cols: expected rank-1");
    const int m = static_cast<int>(v.size());
    Tensor out = make_tensor({m, n});
    const double* vp = v.data().data();
    double* op_ = out.mutable_data().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) op_[static_cast<size_t>(i) * n + j] = vp[i];
    detail::maybe_record(out, "broadcast_cols", {v},
                         [](const Tensor& g, const std::vector<bool>&) {
                             return Pull{sum_cols(g)};
                         });
    return out;
}

Tensor broadcast_scalar(const Tensor& s, Shape to) {
    if (s.size() != 1) throw shape_error("broadcast_scalar: expected a scalar");
    Tensor out = Tensor::full(to, s.item());
    detail::maybe_record(out, "broadcast_scalar", {s},
                         [](const Tensor& g, const std::vector<bool>&) {
                             return Pull{sum(g)};
                         });
    return out;
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw shape_error("concat: no inputs");
    const int rank = parts[0].rank();
    for (const Tensor& p : parts)
        if (p.rank() != rank) throw shape_error("concat: mixed ranks");

    if (rank == 1 && axis == 0) {
        int total = 0;
        for (const Tensor& p : parts) total += static_cast<int>(p.size());
        Tensor out = make_tensor({total});
        double* op_ = out.mutable_data().data();
        int off = 0;
        std::vector<std::pair<int, int>> spans;
        for (const Tensor& p : parts) {
            std::memcpy(op_ + off, p.data().data(), sizeof(double) * p.size());
            spans.emplace_back(off, off + static_cast<int>(p.size()));
            off += static_cast<int>(p.size());
        }
        detail::maybe_record(out, "concat", parts,
                             [spans](const Tensor& g, const std::vector<bool>& needs) {
                                 Pull r(spans.size());
                                 for (size_t i = 0; i < spans.size(); ++i)
                                     if (needs[i]) r[i] = slice(g, spans[i].first, spans[i].second);
                                 return r;
                             });
        return out;
    }
    if (rank == 2 && axis == 1) {
        const int m = parts[0].rows();
        int total = 0;
        for (const Tensor& p : parts) {
            if (p.rows() != m) throw shape_error("concat: row count mismatch");
            total += p.cols();
        }
        Tensor out = make_tensor({m, total});
        double* op_ = out.mutable_data().data();
        std::vector<std::pair<int, int>> spans;
        int off = 0;
        for (const Tensor& p : parts) {
            const int c = p.cols();
            const double* pp = p.data().data();
            for (int i = 0; i < m; ++i)
                std::memcpy(op_ + static_cast<size_t>(i) * total + off,
                            pp + static_cast<size_t>(i) * c, sizeof(double) * c);
            spans.emplace_back(off, off + c);
            off += c;
        }
        detail::maybe_record(out, "concat", parts,
                             [spans](const Tensor& g, const std::vector<bool>& needs) {
                                 Pull r(spans.size());
                                 for (size_t i = 0; i < spans.size(); ++i)
                                     if (needs[i])
                                         r[i] = slice_cols(g, spans[i].first, spans[i].second);
                                 return r;
                             });
        return out;
    }
    if (rank == 2 && axis == 0) {
        const int n = parts[0].cols();
        int total = 0;
        for (const Tensor& p : parts) {
            if (p.cols() != n) throw shape_error("concat: column count mismatch");
            total += p.rows();
        }
        Tensor out = make_tensor({total, n});
        double* op_ = out.mutable_data().data();
        std::vector<std::pair<int, int>> spans;
        int off = 0;
        for (const Tensor& p : parts) {
            std::memcpy(op_ + static_cast<size_t>(off) * n, p.data().data(),
                        sizeof(double) * p.size());
            spans.emplace_back(off, off + p.rows());
            off += p.rows();
        }
        detail::maybe_record(out, "concat", parts,
                             [spans](const Tensor& g, const std::vector<bool>& needs) {
                                 Pull r(spans.size());
                                 for (size_t i = 0; i < spans.size(); ++i)
                                     if (needs[i])
                                         r[i] = slice_rows(g, spans[i].first, spans[i].second);
                                 return r;
                             });
        return out;
    }
    throw shape_error("concat: unsupported rank/axis combination");
}

Tensor slice(const Tensor& v, int lo, int hi) {
    if (v.rank() != 1) throw shape_error("slice: expected rank-1");
    if (lo < 0 || hi > v.size() || lo >= hi) throw shape_error("slice: bad bounds");
    Tensor out = make_tensor({hi - lo});
    std::memcpy(out.mutable_data().data(), v.data().data() + lo, sizeof(double) * (hi - lo));
    const int total = static_cast<int>(v.size());
    detail::maybe_record(out, "slice", {v},
                         [lo, total](const Tensor& g, const std::vector<bool>&) {
                             return Pull{pad_vector(g, lo, total)};
                         });
    return out;
}

Tensor slice_rows(const Tensor& m, int r0, int r1) {
    need_rank2(m, "slice_rows");
    if (r0 < 0 || r1 > m.rows() || r0 >= r1) throw shape_error("slice_rows: bad bounds");
    const int c = m.cols();
    Tensor out = make_tensor({r1 - r0, c});
    std::memcpy(out.mutable_data().data(), m.data().data() + static_cast<size_t>(r0) * c,
                sizeof(double) * static_cast<size_t>(r1 - r0) * c);
    const int total = m.rows();
    detail::maybe_record(out, "slice_rows", {m},
                         [r0, total](const Tensor& g, const std::vector<bool>&) {
                             return Pull{pad_rows(g, r0, total)};
                         });
    return out;
}

Tensor slice_cols(const Tensor& m, int c0, int c1) {
    need_rank2(m, "slice_cols");
    if (c0 < 0 || c1 > m.cols() || c0 >= c1) throw shape_error("slice_cols: bad bounds");
    const int r = m.rows(), c = m.cols(), w = c1 - c0;
    Tensor out = make_tensor({r, w});
    const double* mp = m.data().data();
    double* op_ = out.mutable_data().data();
    for (int i = 0; i < r; ++i)
        std::memcpy(op_ + static_cast<size_t>(i) * w, mp + static_cast<size_t>(i) * c + c0,
                    sizeof(double) * w);
    const int total = c;
    detail::maybe_record(out, "slice_cols", {m},
                         [c0, total](const Tensor& g, const std::vector<bool>&) {
                             return Pull{pad_cols(g, c0, total)};
                         });
    return out;
}

Tensor reshape(const Tensor& x, Shape to) {
    if (shape_numel(to) != x.size())
        throw shape_error("reshape: element count mismatch for " + shape_str(to));
    Tensor out = make_tensor(to);
    std::memcpy(out.mutable_data().data(), x.data().data(), sizeof(double) * x.size());
    Shape from = x.shape();
    detail::maybe_record(out, "reshape", {x},
                         [from](const Tensor& g, const std::vector<bool>&) {
                             return Pull{reshape(g, from)};
                         });
    return out;
}

Tensor pad_vector(const Tensor& v, int lo, int total) {
    if (v.rank() != 1) throw shape_error("pad_vector: expected rank-1");
    if (lo < 0 || lo + v.size() > total) throw shape_error("pad_vector: bad bounds");
    Tensor out = Tensor::zeros({total});
    std::memcpy(out.mutable_data().data() + lo, v.data().data(), sizeof(double) * v.size());
    const int hi = lo + static_cast<int>(v.size());
    detail::maybe_record(out, "pad_vector", {v},
                         [lo, hi](const Tensor& g, const std::vector<bool>&) {
                             return Pull{slice(g, lo, hi)};
                         });
    return out;
}

Tensor pad_rows(const Tensor& m, int r0, int total_rows) {
    need_rank2(m, "pad_rows");
    if (r0 < 0 || r0 + m.rows() > total_rows) throw shape_error("pad_rows: bad bounds");
    const int c = m.cols();
    Tensor out = Tensor::zeros({total_rows, c});
    std::memcpy(out.mutable_data().data() + static_cast<size_t>(r0) * c, m.data().data(),
                sizeof(double) * m.size());
    const int r1 = r0 + m.rows();
    detail::maybe_record(out, "pad_rows", {m},
                         [r0, r1](const Tensor& g, const std::vector<bool>&) {
                             return Pull{slice_rows(g, r0, r1)};
                         });
    return out;
}

Tensor pad_cols(const Tensor& m, int c0, int total_cols) {
    need_rank2(m, "pad_cols");
    if (c0 < 0 || c0 + m.cols() > total_cols) throw shape_error("pad_cols: bad bounds");
    const int r = m.rows(), c = m.cols();
    Tensor out = Tensor::zeros({r, total_cols});
    const double* mp = m.data().data();
    double* op_ = out.mutable_data().data();
    for (int i = 0; i < r; ++i)
        std::memcpy(op_ + static_cast<size_t>(i) * total_cols + c0,
                    mp + static_cast<size_t>(i) * c, sizeof(double) * c);
    const int c1 = c0 + c;
    detail::maybe_record(out, "pad_cols", {m},
                         [c0, c1](const Tensor& g, const std::vector<bool>&) {
                             return Pull{slice_cols(g, c0, c1)};
                         });
    return out;
}

// ---------------------------------------------------------------------------
// fused
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
    need_rank2(logits, "softmax_rows");
    const int m = logits.rows(), c = logits.cols();
    Tensor out = make_tensor({m, c});
    const double* lp = logits.data().data();
    double* op_ = out.mutable_data().data();
    for (int i = 0; i < m; ++i) {
        const double* row = lp + static_cast<size_t>(i) * c;
        double* orow = op_ + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            z += orow[j];
        }
        for (int j = 0; j < c; ++j) orow[j] /= z;
    }
    ensure_finite(out, "softmax_rows");
    Tensor Y = out;
    detail::maybe_record(out, "softmax_rows", {logits},
                         [Y, c](const Tensor& g, const std::vector<bool>&) {
                             Tensor inner = sum_cols(mul(g, Y));  // per-row g.y
                             return Pull{mul(sub(g, broadcast_cols(inner, c)), Y)};
                         });
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    need_rank2(logits, "softmax_cross_entropy");
    const int m = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != m)
        throw shape_error("softmax_cross_entropy: label count does not match rows");
    for (int y : labels)
        if (y < 0 || y >= c) throw shape_error("softmax_cross_entropy: label out of range");

    const double* lp = logits.data().data();
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        const double* row = lp + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        total += mx + std::log(z) - row[labels[i]];
    }
    Tensor out = Tensor::scalar(total / m);
    ensure_finite(out, "softmax_cross_entropy");
    Tensor L = logits;
    std::vector<int> lab = labels;
    detail::maybe_record(out, "softmax_cross_entropy", {logits},
                         [L, lab, m, c](const Tensor& g, const std::vector<bool>&) {
                             Tensor p = softmax_rows(L);
                             Tensor diff = sub(p, onehot(lab, c));
                             Tensor gb = broadcast_scalar(mul_scalar(g, 1.0 / m), {m, c});
                             return Pull{mul(diff, gb)};
                         });
    return out;
}

Tensor l2_norm(const Tensor& x) {
    const double norm =
        std::sqrt(kernels::sumsq(x.data().data(), static_cast<size_t>(x.size())));
    Tensor out = Tensor::scalar(norm);
    ensure_finite(out, "l2_norm");
    Tensor X = x;
    detail::maybe_record(
        out, "l2_norm", {x},
        [X, norm](const Tensor& g, const std::vector<bool>&) {
            if (norm == 0.0) return Pull{Tensor::zeros(X.shape())};  // subgradient at 0
            return Pull{mul(broadcast_scalar(g, X.shape()), mul_scalar(X, 1.0 / norm))};
        },
        /*first_order_only=*/true);
    return out;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size())
        bad_shapes("cosine_similarity", a, b);
    const size_t n = static_cast<size_t>(a.size());
    const double na = std::sqrt(kernels::sumsq(a.data().data(), n));
    const double nb = std::sqrt(kernels::sumsq(b.data().data(), n));
    if (na == 0.0 || nb == 0.0)
        throw numeric_error("cosine_similarity: zero-norm input has no direction");
    const double cosv = kernels::dot(a.data().data(), b.data().data(), n) / (na * nb);
    Tensor out = Tensor::scalar(cosv);
    ensure_finite(out, "cosine_similarity");
    Tensor A = a, B = b;
    detail::maybe_record(
        out, "cosine_similarity", {a, b},
        [A, B, na, nb, cosv](const Tensor& g, const std::vector<bool>& needs) {
            Pull r(2);
            Tensor gb = broadcast_scalar(g, A.shape());
            if (needs[0])
                r[0] = mul(gb, add(mul_scalar(B, 1.0 / (na * nb)),
                                   mul_scalar(A, -cosv / (na * na))));
            if (needs[1])
                r[1] = mul(gb, add(mul_scalar(A, 1.0 / (na * nb)),
                                   mul_scalar(B, -cosv / (nb * nb))));
            return r;
        },
        /*first_order_only=*/true);
    return out;
}

Tensor normalize_rows(const Tensor& m) {
    need_rank2(m, "normalize_rows");
    const int r = m.rows(), c = m.cols();
    Tensor out = make_tensor({r, c});
    std::vector<double> rinv(static_cast<size_t>(r));
    const double* mp = m.data().data();
    double* op_ = out.mutable_data().data();
    for (int i = 0; i < r; ++i) {
        const double* row = mp + static_cast<size_t>(i) * c;
        const double norm = std::sqrt(kernels::sumsq(row, static_cast<size_t>(c)));
        if (norm == 0.0) throw numeric_error("normalize_rows: zero-norm row");
        rinv[static_cast<size_t>(i)] = 1.0 / norm;
        for (int j = 0; j < c; ++j) op_[static_cast<size_t>(i) * c + j] = row[j] / norm;
    }
    ensure_finite(out, "normalize_rows");
    Tensor xhat = out.detach();
    Tensor rv = Tensor::from_vector(std::move(rinv));
    detail::maybe_record(
        out, "normalize_rows", {m},
        [xhat, rv, c](const Tensor& g, const std::vector<bool>&) {
            Tensor proj = mul(xhat, broadcast_cols(sum_cols(mul(xhat, g)), c));
            return Pull{mul(sub(g, proj), broadcast_cols(rv, c))};
        },
        /*first_order_only=*/true);
    return out;
}

Tensor normalize(const Tensor& v) {
    if (v.rank() != 1) throw shape_error("normalize: expected rank-1");
    const int n = static_cast<int>(v.size());
    return reshape(normalize_rows(reshape(v, {1, n})), {n});
}

Tensor onehot(const std::vector<int>& labels, int classes) {
    Tensor out = Tensor::zeros({static_cast<int>(labels.size()), classes});
    auto d = out.mutable_data();
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) throw shape_error("onehot: label out of range");
        d[i * classes + labels[i]] = 1.0;
    }
    return out;
}

}  // namespace hypergen::ad
