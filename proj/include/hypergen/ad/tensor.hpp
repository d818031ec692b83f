#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hypergen/errors.hpp"

namespace hypergen::ad {

// Dense row-major float64 tensor of rank 0 (scalar), 1 (vector) or 2 (matrix).
using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

namespace detail {
struct TensorData {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    uint64_t tape_id = 0;  // tape on which this tensor was watched or produced
    int64_t node_id = -1;  // creation-order id on that tape
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor scalar(double v);
    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor from_vector(std::vector<double> v);
    static Tensor matrix(int rows, int cols, std::vector<double> v);
    static Tensor with_shape(Shape s, std::vector<double> v);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(d_->values.size()); }
    int rows() const;  // rank-2 only
    int cols() const;  // rank-2 only

    double item() const;  // requires size() == 1
    double at(int64_t i) const { return d_->values[static_cast<size_t>(i)]; }
    double at(int r, int c) const {
        return d_->values[static_cast<size_t>(r) * cols() + c];
    }

    std::span<const double> data() const { return d_->values; }
    // In-place value access for optimizer updates between steps. Mutating a
    // tensor that a live tape's records still reference invalidates the tape.
    std::span<double> mutable_data() { return d_->values; }

    bool requires_grad() const { return d_ && d_->requires_grad; }
    Tensor detach() const;  // value copy with no grad tracking

    detail::TensorData* impl() const { return d_.get(); }
    const std::shared_ptr<detail::TensorData>& handle() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<detail::TensorData> d_;

    friend Tensor make_tensor(Shape s);
};

// Uninitialized-value tensor for op outputs (values sized, not zeroed).
Tensor make_tensor(Shape s);

}  // namespace hypergen::ad
