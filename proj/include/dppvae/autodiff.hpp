#ifndef DPPVAE_AUTODIFF_HPP
#define DPPVAE_AUTODIFF_HPP

#include <cstddef>
#include <functional>
#include <vector>

#include "dppvae/linalg.hpp"
#include "dppvae/matrix.hpp"

namespace dppvae {

class Tape;

/// Handle into a Tape. Cheap to copy; valid while the tape lives.
struct Node {
    Tape* tape = nullptr;
    std::size_t index = 0;

    const Matrix& value() const;
    const Matrix& grad() const;
    bool requires_grad() const;
};

/// Reverse-mode tape. Records every operation in execution order; backward
/// walks the records in exact reverse order, accumulating gradients (+=).
/// One tape per training step; single-threaded.
class Tape {
public:
    struct Record {
        Matrix value;
        Matrix grad;  // same shape, zero until backward
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;  // empty for leaves
    };

    Node leaf(Matrix value, bool requires_grad = false);
    Node constant(Matrix value) { return leaf(std::move(value), false); }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad node.
    /// loss must be 1x1 (NotScalarLoss) and the tape unconsumed (TapeConsumed).
    void backward(Node loss);

    /// Clears all gradients and re-arms backward.
    void reset_gradients();

    std::size_t size() const { return records_.size(); }
    Record& rec(std::size_t i) { return records_[i]; }
    const Record& rec(std::size_t i) const { return records_[i]; }

    Node emit(Matrix value, bool requires_grad, std::function<void(Tape&)> backprop);

private:
    std::vector<Record> records_;
    bool consumed_ = false;
};

inline const Matrix& Node::value() const { return tape->rec(index).value; }
inline const Matrix& Node::grad() const { return tape->rec(index).grad; }
inline bool Node::requires_grad() const { return tape->rec(index).requires_grad; }

// ---- forward ops ------------------------------------------------------

Node add(Node a, Node b);
Node sub(Node a, Node b);
Node mul(Node a, Node b);      // elementwise
Node scale(Node a, double c);
Node negate(Node a);
Node exp(Node a);
Node log(Node a);
Node square(Node a);
Node relu(Node a);
Node sigmoid(Node a);
Node clamp(Node a, double lo, double hi);  // gradient passes inside (lo, hi)
Node matmul(Node a, Node b);
Node transpose(Node a);
Node sum(Node a);              // 1x1
Node mean(Node a);             // 1x1
Node row_sums(Node a);         // rows x 1
Node broadcast_row(Node row, std::size_t nrows);   // 1xN -> nrows x N
Node slice_rows(Node a, std::size_t r0, std::size_t r1);
Node slice_cols(Node a, std::size_t c0, std::size_t c1);
Node concat_rows(const std::vector<Node>& parts);

/// log det of an SPD matrix as a differentiable scalar. Backward adds
/// upstream * inverse(A + jitter I), symmetrized, computed via Cholesky
/// solves from the cached factor.
Node logdet_spd(Node a, const JitterPolicy& policy = {});

/// Sum of binary cross-entropy between targets in [0,1] and logits,
/// evaluated in the numerically stable softplus form.
Node bernoulli_nll_logits(const Matrix& targets, Node logits);

inline Node operator+(Node a, Node b) { return add(a, b); }
inline Node operator-(Node a, Node b) { return sub(a, b); }
inline Node operator-(Node a) { return negate(a); }
inline Node operator*(Node a, Node b) { return mul(a, b); }
inline Node operator*(double c, Node a) { return scale(a, c); }

// ---- verification -----------------------------------------------------

/// Central-difference check of the tape gradient of a scalar-valued
/// function. Returns the worst relative error over all entries of `point`,
/// with an absolute floor of 1e-8 in the denominator.
double grad_check(const std::function<Node(Tape&, Node)>& f, const Matrix& point, double h);

}  // namespace dppvae

#endif
