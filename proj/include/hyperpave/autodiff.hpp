// autodiff.hpp - dense tensors with tape-based reverse-mode gradients
#ifndef HYPERPAVE_AUTODIFF_HPP
#define HYPERPAVE_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "hyperpave/common.hpp"

namespace hyperpave::autodiff {

// Dense rank-0/1/2 tensor of doubles. Rank 0 (empty shape) is a scalar.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v = {});

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;
    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Named trainable tensor with a gradient slot, owned outside any tape.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor(value.shape());
    }
    void zero_grad() { grad.fill(0.0); }
};

// Shared forward kernels. The tape ops and the model's no-grad inference
// path both call these, so the two paths are numerically identical.
namespace kernels {

inline void matvec(double* y, const double* a, const double* x, std::size_t m, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = a + i * k;
        for (std::size_t j = 0; j < k; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

inline void vecmat(double* y, const double* x, const double* a, std::size_t n, std::size_t k) {
    for (std::size_t j = 0; j < k; ++j) y[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = x[i];
        const double* row = a + i * k;
        for (std::size_t j = 0; j < k; ++j) y[j] += xi * row[j];
    }
}

inline double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }
inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

inline void softmax_inplace(double* x, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    for (std::size_t i = 0; i < n; ++i) x[i] /= sum;
}

inline double l2_norm(const double* x, std::size_t n) { return std::sqrt(dot(x, x, n)); }

inline double cosine(const double* a, const double* b, std::size_t n) {
    const double na = l2_norm(a, n), nb = l2_norm(b, n);
    if (na == 0.0 || nb == 0.0) throw InvariantError("cosine of zero vector");
    return dot(a, b, n) / (na * nb);
}

inline constexpr double kBceEps = 1e-7;

}  // namespace kernels

class Tape;

// Handle to a tape node. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) { return make_leaf(std::move(value), false); }
    Var leaf(Tensor value, bool requires_grad) { return make_leaf(std::move(value), requires_grad); }
    // Leaf bound to an external Param; backward() accumulates into p.grad.
    Var param(Param& p);

    const Tensor& value(Var v) const;
    // Gradient of a requires_grad leaf; valid after backward().
    const Tensor& grad(Var v) const;

    // Reverse sweep from a scalar loss. Populates bound Param grad slots
    // (accumulating), frees intermediate gradient buffers, and may be called
    // only once per tape.
    void backward(Var loss);

    std::size_t node_count() const { return nodes_.size(); }

    // --- differentiable operations -------------------------------------
    friend Var add(Var a, Var b);
    friend Var sub(Var a, Var b);
    friend Var mul(Var a, Var b);
    friend Var scale(Var a, double c);
    friend Var affine(Var a, double mult, double shift);
    friend Var matmul(Var a, Var b);
    friend Var matvec(Var a, Var x);
    friend Var vecmat(Var x, Var a);
    friend Var dot(Var a, Var b);
    friend Var tanh(Var a);
    friend Var leaky_relu(Var a, double slope);
    friend Var elu(Var a);
    friend Var softmax(Var a, std::size_t axis);
    friend Var concat(std::span<const Var> parts);
    friend Var stack_rows(std::span<const Var> rows);
    friend Var mean_rows(Var a);
    friend Var mean_all(Var a);
    friend Var l2_norm(Var a);
    friend Var cosine(Var a, Var b);
    friend Var dropout(Var a, double p, std::uint64_t mask_seed);
    friend Var bce(Var pred, std::span<const double> targets);

private:
    enum class Op : std::uint8_t {
        Leaf, Add, Sub, Mul, Scale, Affine, MatMul, MatVec, VecMat, Dot, Tanh,
        LeakyRelu, Elu, Softmax, Concat, StackRows, MeanRows, MeanAll, L2Norm,
        Cosine, Dropout, Bce
    };

    struct Node {
        Op op = Op::Leaf;
        Tensor value;
        Tensor grad;  // allocated during backward, freed afterwards for intermediates
        std::vector<int> parents;
        double a = 0.0, b = 0.0;   // per-op scalars (slope, mult/shift, axis, p)
        std::vector<double> aux;   // dropout mask, bce targets
        bool requires_grad = false;
    };

    Var make_leaf(Tensor value, bool requires_grad);
    Var make_node(Op op, Tensor value, std::vector<int> parents, double a = 0.0, double b = 0.0,
                  std::vector<double> aux = {});
    Node& node(Var v);
    const Node& node(Var v) const;
    void check_finite(const Tensor& t, const char* op) const;
    Tensor& grad_slot(int id);
    void backprop_node(int id);

    std::vector<Node> nodes_;
    std::vector<std::pair<int, Param*>> bindings_;
    bool backward_done_ = false;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var affine(Var a, double mult, double shift);
Var matmul(Var a, Var b);
Var matvec(Var a, Var x);
Var vecmat(Var x, Var a);
Var dot(Var a, Var b);
Var tanh(Var a);
Var leaky_relu(Var a, double slope);
Var elu(Var a);
Var softmax(Var a, std::size_t axis = 0);
Var concat(std::span<const Var> parts);
Var stack_rows(std::span<const Var> rows);
Var mean_rows(Var a);
Var mean_all(Var a);
Var l2_norm(Var a);
Var cosine(Var a, Var b);
Var dropout(Var a, double p, std::uint64_t mask_seed);
Var bce(Var pred, std::span<const double> targets);

inline Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var stack_rows(std::initializer_list<Var> rows) {
    return stack_rows(std::span<const Var>(rows.begin(), rows.size()));
}

}  // namespace hyperpave::autodiff

#endif  // HYPERPAVE_AUTODIFF_HPP
