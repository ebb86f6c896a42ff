#include "dppvae/autodiff.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "dppvae/errors.hpp"

namespace dppvae {

namespace {

void accumulate(Matrix& acc, const Matrix& g) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += g.data[i];
}

void check_same_tape(Node a, Node b, const char* op) {
    if (a.tape != b.tape) throw InvalidParams(std::string(op) + ": nodes from different tapes");
}

}  // namespace

Node Tape::leaf(Matrix value, bool requires_grad) {
    return emit(std::move(value), requires_grad, nullptr);
}

Node Tape::emit(Matrix value, bool requires_grad, std::function<void(Tape&)> backprop) {
    Record r;
    r.grad = Matrix(value.rows, value.cols);
    r.value = std::move(value);
    r.requires_grad = requires_grad;
    r.backprop = std::move(backprop);
    records_.push_back(std::move(r));
    return Node{this, records_.size() - 1};
}

void Tape::backward(Node loss) {
    if (loss.tape != this) throw InvalidParams("backward: loss from a different tape");
    const Record& lr = records_[loss.index];
    if (lr.value.rows != 1 || lr.value.cols != 1)
        throw NotScalarLoss("backward expects a 1x1 loss, got " + std::to_string(lr.value.rows) +
                            "x" + std::to_string(lr.value.cols));
    if (consumed_) throw TapeConsumed("backward already ran; call reset_gradients() first");
    consumed_ = true;
    records_[loss.index].grad(0, 0) = 1.0;
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        Record& r = records_[i];
        if (r.requires_grad && r.backprop) r.backprop(*this);
    }
}

void Tape::reset_gradients() {
    for (Record& r : records_)
        for (double& g : r.grad.data) g = 0.0;
    consumed_ = false;
}

// ---- op implementations -------------------------------------------------

Node add(Node a, Node b) {
    check_same_tape(a, b, "add");
    check_same_shape(a.value(), b.value(), "add");
    Tape& t = *a.tape;
    Matrix out = dppvae::add(a.value(), b.value());
    const std::size_t ia = a.index, ib = b.index;
    Node n = t.emit(std::move(out), a.requires_grad() || b.requires_grad(), nullptr);
    const std::size_t io = n.index;
    t.rec(io).backprop = [ia, ib, io](Tape& tp) {
        const Matrix& g = tp.rec(io).grad;
        if (tp.rec(ia).requires_grad) accumulate(tp.rec(ia).grad, g);
        if (tp.rec(ib).requires_grad) accumulate(tp.rec(ib).grad, g);
    };
    return n;
}

Node sub(Node a, Node b) {
    check_same_tape(a, b, "sub");
    check_same_shape(a.value(), b.value(), "sub");
    Tape& t = *a.tape;
    Node n = t.emit(dppvae::sub(a.value(), b.value()), a.requires_grad() || b.requires_grad(),
                    nullptr);
    const std::size_t ia = a.index, ib = b.index, io = n.index;
    t.rec(io).backprop = [ia, ib, io](Tape& tp) {
        const Matrix& g = tp.rec(io).grad;
        if (tp.rec(ia).requires_grad) accumulate(tp.rec(ia).grad, g);
        if (tp.rec(ib).requires_grad) {
            Matrix& gb = tp.rec(ib).grad;
            for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] -= g.data[i];
        }
    };
    return n;
}

Node mul(Node a, Node b) {
    check_same_tape(a, b, "mul");
    check_same_shape(a.value(), b.value(), "mul");
    Tape& t = *a.tape;
    Node n = t.emit(hadamard(a.value(), b.value()), a.requires_grad() || b.requires_grad(),
                    nullptr);
    const std::size_t ia = a.index, ib = b.index, io = n.index;
    t.rec(io).backprop = [ia, ib, io](Tape& tp) {
        const Matrix& g = tp.rec(io).grad;
        if (tp.rec(ia).requires_grad) accumulate(tp.rec(ia).grad, hadamard(g, tp.rec(ib).value));
        if (tp.rec(ib).requires_grad) accumulate(tp.rec(ib).grad, hadamard(g, tp.rec(ia).value));
    };
    return n;
}

Node scale(Node a, double c) {
    Tape& t = *a.tape;
    Node n = t.emit(dppvae::scale(a.value(), c), a.requires_grad(), nullptr);
    const std::size_t ia = a.index, io = n.index;
    t.rec(io).backprop = [ia, io, c](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        accumulate(tp.rec(ia).grad, dppvae::scale(tp.rec(io).grad, c));
    };
    return n;
}

Node negate(Node a) { return scale(a, -1.0); }

namespace {

template <typename F, typename DF>
Node elementwise(Node a, F&& f, DF&& df) {
    Tape& t = *a.tape;
    Matrix out = a.value();
    for (double& v : out.data) v = f(v);
    Node n = t.emit(std::move(out), a.requires_grad(), nullptr);
    const std::size_t ia = a.index, io = n.index;
    t.rec(io).backprop = [ia, io, df](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        const Matrix& g = tp.rec(io).grad;
        const Matrix& x = tp.rec(ia).value;
        const Matrix& y = tp.rec(io).value;
        Matrix& acc = tp.rec(ia).grad;
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc.data[i] += g.data[i] * df(x.data[i], y.data[i]);
    };
    return n;
}

}  // namespace

Node exp(Node a) {
    return elementwise(a, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

Node log(Node a) {
    return elementwise(a, [](double v) { return std::log(v); },
                       [](double x, double) { return 1.0 / x; });
}

Node square(Node a) {
    return elementwise(a, [](double v) { return v * v; },
                       [](double x, double) { return 2.0 * x; });
}

Node relu(Node a) {
    return elementwise(a, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Node sigmoid(Node a) {
    return elementwise(a,
                       [](double v) {
                           return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                           : std::exp(v) / (1.0 + std::exp(v));
                       },
                       [](double, double y) { return y * (1.0 - y); });
}

Node clamp(Node a, double lo, double hi) {
    if (!(lo < hi)) throw InvalidParams("clamp: lo must be < hi");
    return elementwise(a,
                       [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
                       [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Node matmul(Node a, Node b) {
    check_same_tape(a, b, "matmul");
    Tape& t = *a.tape;
    Node n = t.emit(dppvae::matmul(a.value(), b.value()),
                    a.requires_grad() || b.requires_grad(), nullptr);
    const std::size_t ia = a.index, ib = b.index, io = n.index;
    t.rec(io).backprop = [ia, ib, io](Tape& tp) {
        const Matrix& g = tp.rec(io).grad;
        if (tp.rec(ia).requires_grad)
            accumulate(tp.rec(ia).grad, dppvae::matmul(g, dppvae::transpose(tp.rec(ib).value)));
        if (tp.rec(ib).requires_grad)
            accumulate(tp.rec(ib).grad, dppvae::matmul(dppvae::transpose(tp.rec(ia).value), g));
    };
    return n;
}

Node transpose(Node a) {
    Tape& t = *a.tape;
    Node n = t.emit(dppvae::transpose(a.value()), a.requires_grad(), nullptr);
    const std::size_t ia = a.index, io = n.index;
    t.rec(io).backprop = [ia, io](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        accumulate(tp.rec(ia).grad, dppvae::transpose(tp.rec(io).grad));
    };
    return n;
}

Node sum(Node a) {
    Tape& t = *a.tape;
    double s = 0.0;
    for (double v : a.value().data) s += v;
    Node n = t.emit(Matrix(1, 1, s), a.requires_grad(), nullptr);
    const std::size_t ia = a.index, io = n.index;
    t.rec(io).backprop = [ia, io](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        const double g = tp.rec(io).grad(0, 0);
        for (double& v : tp.rec(ia).grad.data) v += g;
    };
    return n;
}

Node mean(Node a) {
    const double inv = 1.0 / static_cast<double>(a.value().size());
    return scale(sum(a), inv);
}

Node row_sums(Node a) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    Matrix out(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) s += x(i, j);
        out(i, 0) = s;
    }
    Node n = t.emit(std::move(out), a.requires_grad(), nullptr);
    const std::size_t ia = a.index, io = n.index;
    t.rec(io).backprop = [ia, io](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        const Matrix& g = tp.rec(io).grad;
        Matrix& acc = tp.rec(ia).grad;
        for (std::size_t i = 0; i < acc.rows; ++i)
            for (std::size_t j = 0; j < acc.cols; ++j) acc(i, j) += g(i, 0);
    };
    return n;
}

Node broadcast_row(Node row, std::size_t nrows) {
    const Matrix& r = row.value();
    if (r.rows != 1) throw ShapeMismatch("broadcast_row expects a 1xN row vector");
    Tape& t = *row.tape;
    Matrix out(nrows, r.cols);
    for (std::size_t i = 0; i < nrows; ++i)
        for (std::size_t j = 0; j < r.cols; ++j) out(i, j) = r(0, j);
    Node n = t.emit(std::move(out), row.requires_grad(), nullptr);
    const std::size_t ia = row.index, io = n.index;
    t.rec(io).backprop = [ia, io](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        const Matrix& g = tp.rec(io).grad;
        Matrix& acc = tp.rec(ia).grad;
        for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < g.cols; ++j) acc(0, j) += g(i, j);
    };
    return n;
}

Node slice_rows(Node a, std::size_t r0, std::size_t r1) {
    const Matrix& x = a.value();
    if (r0 >= r1 || r1 > x.rows) throw ShapeMismatch("slice_rows: bad range");
    Tape& t = *a.tape;
    Matrix out(r1 - r0, x.cols);
    for (std::size_t i = r0; i < r1; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out(i - r0, j) = x(i, j);
    Node n = t.emit(std::move(out), a.requires_grad(), nullptr);
    const std::size_t ia = a.index, io = n.index;
    t.rec(io).backprop = [ia, io, r0](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        const Matrix& g = tp.rec(io).grad;
        Matrix& acc = tp.rec(ia).grad;
        for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < g.cols; ++j) acc(i + r0, j) += g(i, j);
    };
    return n;
}

Node slice_cols(Node a, std::size_t c0, std::size_t c1) {
    const Matrix& x = a.value();
    if (c0 >= c1 || c1 > x.cols) throw ShapeMismatch("slice_cols: bad range");
    Tape& t = *a.tape;
    Matrix out(x.rows, c1 - c0);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = x(i, j);
    Node n = t.emit(std::move(out), a.requires_grad(), nullptr);
    const std::size_t ia = a.index, io = n.index;
    t.rec(io).backprop = [ia, io, c0](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        const Matrix& g = tp.rec(io).grad;
        Matrix& acc = tp.rec(ia).grad;
        for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < g.cols; ++j) acc(i, j + c0) += g(i, j);
    };
    return n;
}

Node concat_rows(const std::vector<Node>& parts) {
    if (parts.empty()) throw InvalidParams("concat_rows: no parts");
    Tape& t = *parts[0].tape;
    const std::size_t cols = parts[0].value().cols;
    std::size_t rows = 0;
    bool rg = false;
    for (Node p : parts) {
        check_same_tape(parts[0], p, "concat_rows");
        if (p.value().cols != cols) throw ShapeMismatch("concat_rows: column mismatch");
        rows += p.value().rows;
        rg = rg || p.requires_grad();
    }
    Matrix out(rows, cols);
    std::size_t at = 0;
    std::vector<std::size_t> idx, offs;
    for (Node p : parts) {
        const Matrix& x = p.value();
        for (std::size_t i = 0; i < x.rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out(at + i, j) = x(i, j);
        idx.push_back(p.index);
        offs.push_back(at);
        at += x.rows;
    }
    Node n = t.emit(std::move(out), rg, nullptr);
    const std::size_t io = n.index;
    t.rec(io).backprop = [idx, offs, io](Tape& tp) {
        const Matrix& g = tp.rec(io).grad;
        for (std::size_t p = 0; p < idx.size(); ++p) {
            Tape::Record& r = tp.rec(idx[p]);
            if (!r.requires_grad) continue;
            for (std::size_t i = 0; i < r.grad.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j)
                    r.grad(i, j) += g(offs[p] + i, j);
        }
    };
    return n;
}

Node logdet_spd(Node a, const JitterPolicy& policy) {
    const Matrix& x = a.value();
    if (!x.is_square()) throw ShapeMismatch("logdet_spd: matrix not square");
    Tape& t = *a.tape;
    CholeskyFactor factor = cholesky(x, policy);
    double ld = 0.0;
    for (std::size_t i = 0; i < factor.lower.rows; ++i) ld += std::log(factor.lower(i, i));
    ld *= 2.0;
    Node n = t.emit(Matrix(1, 1, ld), a.requires_grad(), nullptr);
    const std::size_t ia = a.index, io = n.index;
    t.rec(io).backprop = [ia, io, factor = std::move(factor)](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        const double g = tp.rec(io).grad(0, 0);
        Matrix inv = symmetrize(spd_inverse(factor));
        accumulate(tp.rec(ia).grad, dppvae::scale(inv, g));
    };
    return n;
}

Node bernoulli_nll_logits(const Matrix& targets, Node logits) {
    const Matrix& l = logits.value();
    check_same_shape(targets, l, "bernoulli_nll_logits");
    for (double v : targets.data)
        if (!(v >= 0.0 && v <= 1.0))
            throw DomainError("bernoulli_nll_logits: targets must lie in [0,1]");
    double nll = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
        const double z = l.data[i];
        const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z)));
        nll += softplus - targets.data[i] * z;
    }
    Tape& t = *logits.tape;
    Node n = t.emit(Matrix(1, 1, nll), logits.requires_grad(), nullptr);
    const std::size_t ia = logits.index, io = n.index;
    t.rec(io).backprop = [ia, io, targets](Tape& tp) {
        if (!tp.rec(ia).requires_grad) return;
        const double g = tp.rec(io).grad(0, 0);
        const Matrix& z = tp.rec(ia).value;
        Matrix& acc = tp.rec(ia).grad;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double v = z.data[i];
            const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                      : std::exp(v) / (1.0 + std::exp(v));
            acc.data[i] += g * (s - targets.data[i]);
        }
    };
    return n;
}

double grad_check(const std::function<Node(Tape&, Node)>& f, const Matrix& point, double h) {
    if (!(h >= 1e-7 && h <= 1e-3)) throw InvalidParams("grad_check: h outside [1e-7, 1e-3]");
    Matrix analytic;
    {
        Tape t;
        Node x = t.leaf(point, true);
        Node y = f(t, x);
        if (y.value().rows != 1 || y.value().cols != 1)
            throw NotScalarLoss("grad_check: f must be scalar-valued");
        t.backward(y);
        analytic = x.grad();
    }
    auto eval = [&](const Matrix& p) {
        Tape t;
        Node x = t.leaf(p, false);
        return f(t, x).value()(0, 0);
    };
    double worst = 0.0;
    Matrix p = point;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p.data[i];
        p.data[i] = orig + h;
        const double up = eval(p);
        p.data[i] = orig - h;
        const double down = eval(p);
        p.data[i] = orig;
        const double fd = (up - down) / (2.0 * h);
        const double ad = analytic.data[i];
        const double denom = std::max(std::max(std::fabs(fd), std::fabs(ad)), 1e-8);
        worst = std::max(worst, std::fabs(fd - ad) / denom);
    }
    return worst;
}

}  // namespace dppvae
