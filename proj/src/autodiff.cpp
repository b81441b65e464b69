#include "hyperpave/autodiff.hpp"

#include <cmath>
#include <numeric>

namespace hyperpave::autodiff {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
        throw InvariantError("Tensor: data length does not match shape " + shape_str());
}

Tensor Tensor::vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    if (v.empty()) v.assign(rows * cols, 0.0);
    return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw InvariantError("rows() on tensor of shape " + shape_str());
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw InvariantError("cols() on tensor of shape " + shape_str());
    return shape_[1];
}

std::string Tensor::shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape_[i]);
    }
    return s + ")";
}

Var Tape::param(Param& p) {
    Var v = make_leaf(p.value, true);
    bindings_.emplace_back(v.id, &p);
    return v;
}

Var Tape::make_leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::make_node(Op op, Tensor value, std::vector<int> parents, double a, double b,
                    std::vector<double> aux) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.a = a;
    n.b = b;
    n.aux = std::move(aux);
    for (int p : n.parents)
        if (nodes_[static_cast<std::size_t>(p)].requires_grad) {
            n.requires_grad = true;
            break;
        }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Var v) {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw InvariantError("Var does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    return const_cast<Tape*>(this)->node(v);
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.requires_grad) throw InvariantError("grad() only valid for requires_grad leaves");
    if (!backward_done_) throw InvariantError("grad() called before backward()");
    return n.grad;
}

void Tape::check_finite(const Tensor& t, const char* op) const {
    for (double x : t.values())
        if (!std::isfinite(x))
            throw InvariantError(std::string("non-finite output of op '") + op + "'");
}

Tensor& Tape::grad_slot(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0 && n.value.size() > 0) n.grad = Tensor(n.value.shape());
    return n.grad;
}

namespace {

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw InvariantError("operands belong to different tapes");
}

}  // namespace

// ---------------------------------------------------------------------------
// forward ops

Var add(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (!va.same_shape(vb))
        throw InvariantError("add: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    t.check_finite(out, "add");
    return t.make_node(Tape::Op::Add, std::move(out), {a.id, b.id});
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (!va.same_shape(vb))
        throw InvariantError("sub: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    t.check_finite(out, "sub");
    return t.make_node(Tape::Op::Sub, std::move(out), {a.id, b.id});
}

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (!va.same_shape(vb))
        throw InvariantError("mul: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    t.check_finite(out, "mul");
    return t.make_node(Tape::Op::Mul, std::move(out), {a.id, b.id});
}

Var scale(Var a, double c) {
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * va[i];
    t.check_finite(out, "scale");
    return t.make_node(Tape::Op::Scale, std::move(out), {a.id}, c);
}

Var affine(Var a, double mult, double shift) {
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mult * va[i] + shift;
    t.check_finite(out, "affine");
    return t.make_node(Tape::Op::Affine, std::move(out), {a.id}, mult, shift);
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows())
        throw InvariantError("matmul: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    const std::size_t m = va.rows(), k = va.cols(), n = vb.cols();
    Tensor out = Tensor::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += va[i * k + l] * vb[l * n + j];
            out[i * n + j] = acc;
        }
    t.check_finite(out, "matmul");
    return t.make_node(Tape::Op::MatMul, std::move(out), {a.id, b.id});
}

Var matvec(Var a, Var x) {
    check_same_tape(a, x);
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    const Tensor& vx = t.value(x);
    if (va.rank() != 2 || vx.rank() != 1 || va.cols() != vx.size())
        throw InvariantError("matvec: shape mismatch " + va.shape_str() + " vs " + vx.shape_str());
    Tensor out(std::vector<std::size_t>{va.rows()});
    kernels::matvec(out.data(), va.data(), vx.data(), va.rows(), va.cols());
    t.check_finite(out, "matvec");
    return t.make_node(Tape::Op::MatVec, std::move(out), {a.id, x.id});
}

Var vecmat(Var x, Var a) {
    check_same_tape(x, a);
    Tape& t = *x.tape;
    const Tensor& vx = t.value(x);
    const Tensor& va = t.value(a);
    if (vx.rank() != 1 || va.rank() != 2 || vx.size() != va.rows())
        throw InvariantError("vecmat: shape mismatch " + vx.shape_str() + " vs " + va.shape_str());
    Tensor out(std::vector<std::size_t>{va.cols()});
    kernels::vecmat(out.data(), vx.data(), va.data(), va.rows(), va.cols());
    t.check_finite(out, "vecmat");
    return t.make_node(Tape::Op::VecMat, std::move(out), {x.id, a.id});
}

Var dot(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (va.rank() != 1 || !va.same_shape(vb))
        throw InvariantError("dot: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    Tensor out = Tensor::scalar(kernels::dot(va.data(), vb.data(), va.size()));
    t.check_finite(out, "dot");
    return t.make_node(Tape::Op::Dot, std::move(out), {a.id, b.id});
}

Var tanh(Var a) {
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(va[i]);
    t.check_finite(out, "tanh");
    return t.make_node(Tape::Op::Tanh, std::move(out), {a.id});
}

Var leaky_relu(Var a, double slope) {
    if (!(slope > 0.0)) throw InvariantError("leaky_relu: slope must be positive");
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = kernels::leaky_relu(va[i], slope);
    t.check_finite(out, "leaky_relu");
    return t.make_node(Tape::Op::LeakyRelu, std::move(out), {a.id}, slope);
}

Var elu(Var a) {
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = kernels::elu(va[i]);
    t.check_finite(out, "elu");
    return t.make_node(Tape::Op::Elu, std::move(out), {a.id});
}

Var softmax(Var a, std::size_t axis) {
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    Tensor out = va;
    if (va.rank() == 1) {
        if (axis != 0) throw InvariantError("softmax: axis out of range for rank-1 tensor");
        if (va.size() == 0) throw InvariantError("softmax of empty tensor");
        kernels::softmax_inplace(out.data(), out.size());
    } else if (va.rank() == 2) {
        const std::size_t r = va.rows(), c = va.cols();
        if (axis == 1) {
            for (std::size_t i = 0; i < r; ++i) kernels::softmax_inplace(out.data() + i * c, c);
        } else if (axis == 0) {
            std::vector<double> col(r);
            for (std::size_t j = 0; j < c; ++j) {
                for (std::size_t i = 0; i < r; ++i) col[i] = out[i * c + j];
                kernels::softmax_inplace(col.data(), r);
                for (std::size_t i = 0; i < r; ++i) out[i * c + j] = col[i];
            }
        } else {
            throw InvariantError("softmax: axis out of range for rank-2 tensor");
        }
    } else {
        throw InvariantError("softmax: unsupported tensor shape " + va.shape_str());
    }
    t.check_finite(out, "softmax");
    return t.make_node(Tape::Op::Softmax, std::move(out), {a.id}, static_cast<double>(axis));
}

Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw InvariantError("concat of zero tensors");
    Tape& t = *parts[0].tape;
    std::size_t total = 0;
    std::vector<int> parents;
    parents.reserve(parts.size());
    for (Var p : parts) {
        check_same_tape(parts[0], p);
        total += t.value(p).size();
        parents.push_back(p.id);
    }
    Tensor out(std::vector<std::size_t>{total});
    std::size_t at = 0;
    for (Var p : parts) {
        const Tensor& v = t.value(p);
        std::copy(v.data(), v.data() + v.size(), out.data() + at);
        at += v.size();
    }
    return t.make_node(Tape::Op::Concat, std::move(out), std::move(parents));
}

Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw InvariantError("stack_rows of zero tensors");
    Tape& t = *rows[0].tape;
    const std::size_t k = t.value(rows[0]).size();
    std::vector<int> parents;
    parents.reserve(rows.size());
    for (Var r : rows) {
        check_same_tape(rows[0], r);
        const Tensor& v = t.value(r);
        if (v.rank() != 1 || v.size() != k)
            throw InvariantError("stack_rows: row shape mismatch " + v.shape_str());
        parents.push_back(r.id);
    }
    Tensor out = Tensor::matrix(rows.size(), k);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Tensor& v = t.value(rows[i]);
        std::copy(v.data(), v.data() + k, out.data() + i * k);
    }
    return t.make_node(Tape::Op::StackRows, std::move(out), std::move(parents));
}

Var mean_rows(Var a) {
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    if (va.rank() != 2 || va.rows() == 0)
        throw InvariantError("mean_rows needs a non-empty rank-2 tensor, got " + va.shape_str());
    const std::size_t r = va.rows(), c = va.cols();
    Tensor out(std::vector<std::size_t>{c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += va[i * c + j];
    for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
    t.check_finite(out, "mean_rows");
    return t.make_node(Tape::Op::MeanRows, std::move(out), {a.id});
}

Var mean_all(Var a) {
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    if (va.size() == 0) throw InvariantError("mean_all of empty tensor");
    double acc = 0.0;
    for (double x : va.values()) acc += x;
    Tensor out = Tensor::scalar(acc / static_cast<double>(va.size()));
    t.check_finite(out, "mean_all");
    return t.make_node(Tape::Op::MeanAll, std::move(out), {a.id});
}

Var l2_norm(Var a) {
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    if (va.rank() != 1) throw InvariantError("l2_norm needs a rank-1 tensor");
    Tensor out = Tensor::scalar(kernels::l2_norm(va.data(), va.size()));
    t.check_finite(out, "l2_norm");
    return t.make_node(Tape::Op::L2Norm, std::move(out), {a.id});
}

Var cosine(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (va.rank() != 1 || !va.same_shape(vb))
        throw InvariantError("cosine: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    const double na = kernels::l2_norm(va.data(), va.size());
    const double nb = kernels::l2_norm(vb.data(), vb.size());
    if (na == 0.0 || nb == 0.0) throw InvariantError("cosine of zero vector");
    Tensor out = Tensor::scalar(kernels::dot(va.data(), vb.data(), va.size()) / (na * nb));
    t.check_finite(out, "cosine");
    return t.make_node(Tape::Op::Cosine, std::move(out), {a.id, b.id}, na, nb);
}

Var dropout(Var a, double p, std::uint64_t mask_seed) {
    if (!(p >= 0.0 && p < 1.0)) throw InvariantError("dropout: p must be in [0, 1)");
    Tape& t = *a.tape;
    const Tensor& va = t.value(a);
    std::vector<double> mask(va.size(), 1.0);
    if (p > 0.0) {
        Rng rng(mask_seed);
        const double keep = 1.0 - p;
        for (double& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    }
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * mask[i];
    t.check_finite(out, "dropout");
    return t.make_node(Tape::Op::Dropout, std::move(out), {a.id}, p, 0.0, std::move(mask));
}

Var bce(Var pred, std::span<const double> targets) {
    Tape& t = *pred.tape;
    const Tensor& vp = t.value(pred);
    if (vp.rank() != 1 || vp.size() == 0)
        throw InvariantError("bce needs a non-empty rank-1 prediction tensor");
    if (vp.size() != targets.size())
        throw InvariantError("bce: " + std::to_string(vp.size()) + " predictions vs " +
                             std::to_string(targets.size()) + " targets");
    constexpr double eps = kernels::kBceEps;
    double acc = 0.0;
    for (std::size_t i = 0; i < vp.size(); ++i) {
        const double target = targets[i];
        if (!(target >= 0.0 && target <= 1.0))
            throw InvariantError("bce: target outside [0, 1]");
        const double p = std::clamp(vp[i], eps, 1.0 - eps);
        acc -= target * std::log(p) + (1.0 - target) * std::log(1.0 - p);
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(vp.size()));
    t.check_finite(out, "bce");
    return t.make_node(Tape::Op::Bce, std::move(out), {pred.id}, 0.0, 0.0,
                       std::vector<double>(targets.begin(), targets.end()));
}

// ---------------------------------------------------------------------------
// backward

void Tape::backprop_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::Leaf || n.grad.size() == 0 || !n.requires_grad) return;
    const Tensor& g = n.grad;

    auto parent_value = [&](std::size_t i) -> const Tensor& {
        return nodes_[static_cast<std::size_t>(n.parents[i])].value;
    };
    auto parent_grad = [&](std::size_t i) -> Tensor& { return grad_slot(n.parents[i]); };
    auto parent_requires = [&](std::size_t i) {
        return nodes_[static_cast<std::size_t>(n.parents[i])].requires_grad;
    };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            for (std::size_t s = 0; s < 2; ++s)
                if (parent_requires(s)) {
                    Tensor& pg = parent_grad(s);
                    const double sign = 1.0;
                    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += sign * g[i];
                }
            break;
        }
        case Op::Sub: {
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
            }
            if (parent_requires(1)) {
                Tensor& pg = parent_grad(1);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
            }
            break;
        }
        case Op::Mul: {
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                const Tensor& vb = parent_value(1);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * vb[i];
            }
            if (parent_requires(1)) {
                Tensor& pg = parent_grad(1);
                const Tensor& va = parent_value(0);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * va[i];
            }
            break;
        }
        case Op::Scale: {
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += n.a * g[i];
            }
            break;
        }
        case Op::Affine: {
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += n.a * g[i];
            }
            break;
        }
        case Op::MatMul: {
            const Tensor& va = parent_value(0);
            const Tensor& vb = parent_value(1);
            const std::size_t m = va.rows(), k = va.cols(), c = vb.cols();
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);  // g (m,c) * b^T (c,k)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * vb[l * c + j];
                        pg[i * k + l] += acc;
                    }
            }
            if (parent_requires(1)) {
                Tensor& pg = parent_grad(1);  // a^T (k,m) * g (m,c)
                for (std::size_t l = 0; l < k; ++l)
                    for (std::size_t j = 0; j < c; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i) acc += va[i * k + l] * g[i * c + j];
                        pg[l * c + j] += acc;
                    }
            }
            break;
        }
        case Op::MatVec: {
            const Tensor& va = parent_value(0);
            const Tensor& vx = parent_value(1);
            const std::size_t m = va.rows(), k = va.cols();
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j) pg[i * k + j] += g[i] * vx[j];
            }
            if (parent_requires(1)) {
                Tensor& pg = parent_grad(1);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j) pg[j] += va[i * k + j] * g[i];
            }
            break;
        }
        case Op::VecMat: {
            const Tensor& vx = parent_value(0);
            const Tensor& va = parent_value(1);
            const std::size_t r = va.rows(), c = va.cols();
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                for (std::size_t i = 0; i < r; ++i)
                    pg[i] += kernels::dot(g.data(), va.data() + i * c, c);
            }
            if (parent_requires(1)) {
                Tensor& pg = parent_grad(1);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) pg[i * c + j] += vx[i] * g[j];
            }
            break;
        }
        case Op::Dot: {
            const double gs = g[0];
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                const Tensor& vb = parent_value(1);
                for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += gs * vb[i];
            }
            if (parent_requires(1)) {
                Tensor& pg = parent_grad(1);
                const Tensor& va = parent_value(0);
                for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += gs * va[i];
            }
            break;
        }
        case Op::Tanh: {
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                for (std::size_t i = 0; i < g.size(); ++i)
                    pg[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
            }
            break;
        }
        case Op::LeakyRelu: {
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                const Tensor& vx = parent_value(0);
                for (std::size_t i = 0; i < g.size(); ++i)
                    pg[i] += g[i] * (vx[i] > 0.0 ? 1.0 : n.a);
            }
            break;
        }
        case Op::Elu: {
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                const Tensor& vx = parent_value(0);
                for (std::size_t i = 0; i < g.size(); ++i)
                    pg[i] += g[i] * (vx[i] > 0.0 ? 1.0 : n.value[i] + 1.0);
            }
            break;
        }
        case Op::Softmax: {
            if (!parent_requires(0)) break;
            Tensor& pg = parent_grad(0);
            const Tensor& y = n.value;
            const std::size_t axis = static_cast<std::size_t>(n.a);
            auto slice_back = [&](std::size_t offset, std::size_t stride, std::size_t len) {
                double inner = 0.0;
                for (std::size_t i = 0; i < len; ++i)
                    inner += g[offset + i * stride] * y[offset + i * stride];
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t at = offset + i * stride;
                    pg[at] += y[at] * (g[at] - inner);
                }
            };
            if (y.rank() == 1) {
                slice_back(0, 1, y.size());
            } else {
                const std::size_t r = y.rows(), c = y.cols();
                if (axis == 1)
                    for (std::size_t i = 0; i < r; ++i) slice_back(i * c, 1, c);
                else
                    for (std::size_t j = 0; j < c; ++j) slice_back(j, c, r);
            }
            break;
        }
        case Op::Concat: {
            std::size_t at = 0;
            for (std::size_t s = 0; s < n.parents.size(); ++s) {
                const std::size_t len = parent_value(s).size();
                if (parent_requires(s)) {
                    Tensor& pg = parent_grad(s);
                    for (std::size_t i = 0; i < len; ++i) pg[i] += g[at + i];
                }
                at += len;
            }
            break;
        }
        case Op::StackRows: {
            const std::size_t k = n.value.cols();
            for (std::size_t s = 0; s < n.parents.size(); ++s) {
                if (!parent_requires(s)) continue;
                Tensor& pg = parent_grad(s);
                for (std::size_t i = 0; i < k; ++i) pg[i] += g[s * k + i];
            }
            break;
        }
        case Op::MeanRows: {
            if (!parent_requires(0)) break;
            Tensor& pg = parent_grad(0);
            const std::size_t r = parent_value(0).rows(), c = parent_value(0).cols();
            const double inv = 1.0 / static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pg[i * c + j] += g[j] * inv;
            break;
        }
        case Op::MeanAll: {
            if (!parent_requires(0)) break;
            Tensor& pg = parent_grad(0);
            const double inv = g[0] / static_cast<double>(pg.size());
            for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += inv;
            break;
        }
        case Op::L2Norm: {
            if (!parent_requires(0)) break;
            Tensor& pg = parent_grad(0);
            const Tensor& vx = parent_value(0);
            const double norm = n.value[0];
            if (norm > 0.0) {
                const double gs = g[0] / norm;
                for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += gs * vx[i];
            }
            // subgradient 0 at the origin
            break;
        }
        case Op::Cosine: {
            const Tensor& va = parent_value(0);
            const Tensor& vb = parent_value(1);
            const double na = n.a, nb = n.b, c = n.value[0], gs = g[0];
            if (parent_requires(0)) {
                Tensor& pg = parent_grad(0);
                for (std::size_t i = 0; i < pg.size(); ++i)
                    pg[i] += gs * (vb[i] / (na * nb) - c * va[i] / (na * na));
            }
            if (parent_requires(1)) {
                Tensor& pg = parent_grad(1);
                for (std::size_t i = 0; i < pg.size(); ++i)
                    pg[i] += gs * (va[i] / (na * nb) - c * vb[i] / (nb * nb));
            }
            break;
        }
        case Op::Dropout: {
            if (!parent_requires(0)) break;
            Tensor& pg = parent_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * n.aux[i];
            break;
        }
        case Op::Bce: {
            if (!parent_requires(0)) break;
            Tensor& pg = parent_grad(0);
            const Tensor& vp = parent_value(0);
            constexpr double eps = kernels::kBceEps;
            const double gs = g[0] / static_cast<double>(vp.size());
            for (std::size_t i = 0; i < vp.size(); ++i) {
                // clamp is flat outside [eps, 1-eps]; no gradient flows there
                if (vp[i] <= eps || vp[i] >= 1.0 - eps) continue;
                pg[i] += gs * (vp[i] - n.aux[i]) / (vp[i] * (1.0 - vp[i]));
            }
            break;
        }
    }
}

void Tape::backward(Var loss) {
    if (backward_done_)
        throw InvariantError("backward() called twice on the same tape");
    Node& ln = node(loss);
    if (ln.value.size() != 1)
        throw InvariantError("backward() needs a scalar loss, got shape " + ln.value.shape_str());
    grad_slot(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) backprop_node(id);
    for (auto& [id, param] : bindings_) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.size() == 0) continue;  // loss independent of this parameter
        for (std::size_t i = 0; i < n.grad.size(); ++i) param->grad[i] += n.grad[i];
    }
    // Free intermediate gradient buffers; keep leaves for grad() queries.
    for (Node& n : nodes_)
        if (n.op != Op::Leaf || !n.requires_grad) n.grad = Tensor();
    backward_done_ = true;
}

}  // namespace hyperpave::autodiff
