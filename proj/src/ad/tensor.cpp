#include "hypergen/ad/tensor.hpp"

namespace hypergen::ad {

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

Tensor make_tensor(Shape s) {
    auto d = std::make_shared<detail::TensorData>();
    int64_t n = shape_numel(s);
    d->shape = std::move(s);
    d->values.resize(static_cast<size_t>(n));
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v) {
    Tensor t = make_tensor({});
    t.d_->values[0] = v;
    return t;
}

Tensor Tensor::zeros(Shape s) {
    Tensor t = make_tensor(std::move(s));
    std::fill(t.d_->values.begin(), t.d_->values.end(), 0.0);
    return t;
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t = make_tensor(std::move(s));
    std::fill(t.d_->values.begin(), t.d_->values.end(), v);
    return t;
}

Tensor Tensor::from_vector(std::vector<double> v) {
    auto d = std::make_shared<detail::TensorData>();
    d->shape = {static_cast<int>(v.size())};
    d->values = std::move(v);
    return Tensor(std::move(d));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
    if (static_cast<int64_t>(v.size()) != static_cast<int64_t>(rows) * cols)
        throw shape_error("matrix: value count does not match rows*cols");
    auto d = std::make_shared<detail::TensorData>();
    d->shape = {rows, cols};
    d->values = std::move(v);
    return Tensor(std::move(d));
}

Tensor Tensor::with_shape(Shape s, std::vector<double> v) {
    if (shape_numel(s) != static_cast<int64_t>(v.size()))
        throw shape_error("with_shape: value count does not match shape " + shape_str(s));
    auto d = std::make_shared<detail::TensorData>();
    d->shape = std::move(s);
    d->values = std::move(v);
    return Tensor(std::move(d));
}

int Tensor::rows() const {
    if (rank() != 2) throw shape_error("rows: tensor is not rank-2, shape " + shape_str(shape()));
    return d_->shape[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw shape_error("cols: tensor is not rank-2, shape " + shape_str(shape()));
    return d_->shape[1];
}

double Tensor::item() const {
    if (size() != 1)
        throw shape_error("item: tensor has " + std::to_string(size()) + " elements");
    return d_->values[0];
}

Tensor Tensor::detach() const {
    auto d = std::make_shared<detail::TensorData>();
    d->shape = d_->shape;
    d->values = d_->values;
    return Tensor(std::move(d));
}

}  // namespace hypergen::ad
