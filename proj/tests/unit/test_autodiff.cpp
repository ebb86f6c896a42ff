#include <doctest.h>

#include <cmath>
#include <vector>

#include "dppvae/autodiff.hpp"
#include "dppvae/errors.hpp"
#include "dppvae/rng.hpp"
#include "oracles.hpp"

using namespace dppvae;

TEST_CASE("relu forward and mask") {
    Tape t;
    Node x = t.leaf(Matrix::from_rows({{-1, 0, 2}}), true);
    Node y = relu(x);
    CHECK(y.value()(0, 0) == 0.0);
    CHECK(y.value()(0, 1) == 0.0);
    CHECK(y.value()(0, 2) == 2.0);
    t.backward(sum(y));
    CHECK(x.grad()(0, 0) == 0.0);
    CHECK(x.grad()(0, 1) == 0.0);
    CHECK(x.grad()(0, 2) == 1.0);
}

TEST_CASE("sigmoid at zero") {
    Tape t;
    Node x = t.leaf(Matrix(1, 1, 0.0), true);
    Node y = sigmoid(x);
    CHECK(y.value()(0, 0) == doctest::Approx(0.5));
    t.backward(y);
    CHECK(x.grad()(0, 0) == doctest::Approx(0.25));
}

TEST_CASE("backward of sum is all-ones; square analytic") {
    Tape t;
    Node x = t.leaf(Matrix::from_rows({{1, 2}}), true);
    Node loss = sum(square(x));
    t.backward(loss);
    CHECK(loss.value()(0, 0) == doctest::Approx(5.0));
    CHECK(x.grad()(0, 0) == doctest::Approx(2.0));
    CHECK(x.grad()(0, 1) == doctest::Approx(4.0));

    Tape t2;
    Node z = t2.leaf(Matrix(3, 4, 0.7), true);
    t2.backward(sum(z));
    for (double g : z.grad().data) CHECK(g == 1.0);
}

TEST_CASE("backward guards: scalar loss and consumed tape") {
    Tape t;
    Node x = t.leaf(Matrix(2, 2, 1.0), true);
    CHECK_THROWS_AS(t.backward(x), NotScalarLoss);
    Node s = sum(x);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), TapeConsumed);
    t.reset_gradients();
    t.backward(s);  // fine after reset
    CHECK(x.grad()(0, 0) == 1.0);
}

TEST_CASE("gradients accumulate over shared subexpressions") {
    Tape t;
    Node x = t.leaf(Matrix(1, 1, 3.0), true);
    Node y = add(square(x), square(x));  // 2 x^2
    t.backward(y);
    CHECK(x.grad()(0, 0) == doctest::Approx(12.0));
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(3);
    Matrix b0 = oracles::random_matrix(3, 4, rng);
    auto f = [&](Tape& t, Node a) {
        Node b = t.constant(b0);
        return sum(square(matmul(a, b)));
    };
    CHECK(grad_check(f, oracles::random_matrix(2, 3, rng), 1e-5) < 1e-6);
}

TEST_CASE("elementwise op gradient checks") {
    Rng rng(17);
    auto near = [&](std::size_t r, std::size_t c, double lo, double hi) {
        Matrix m(r, c);
        for (double& v : m.data) v = rng.uniform(lo, hi);
        return m;
    };
    CHECK(grad_check([](Tape&, Node x) { return sum(exp(x)); }, near(3, 3, -1, 1), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape&, Node x) { return sum(log(x)); }, near(3, 3, 0.5, 2), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape&, Node x) { return sum(square(x)); }, near(2, 5, -2, 2), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape&, Node x) { return sum(sigmoid(x)); }, near(4, 2, -3, 3), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape&, Node x) { return mean(negate(x)); }, near(3, 4, -1, 1), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape& t, Node x) {
        Node y = t.constant(Matrix(3, 3, 0.5));
        return sum(mul(x, y));
    }, near(3, 3, -1, 1), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape&, Node x) { return sum(row_sums(square(x))); },
                     near(4, 3, -1, 1), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape&, Node x) { return sum(square(broadcast_row(x, 5))); },
                     near(1, 4, -1, 1), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape&, Node x) { return sum(square(transpose(x))); },
                     near(3, 2, -1, 1), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape&, Node x) { return sum(square(slice_rows(x, 1, 3))); },
                     near(4, 3, -1, 1), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape&, Node x) { return sum(square(slice_cols(x, 0, 2))); },
                     near(3, 4, -1, 1), 1e-5) < 1e-6);
    CHECK(grad_check([](Tape& t, Node x) {
        std::vector<Node> parts = {x, square(x)};
        return sum(square(concat_rows(parts)));
    }, near(2, 3, -1, 1), 1e-5) < 1e-6);
    // clamp passes gradient strictly inside the interval
    CHECK(grad_check([](Tape&, Node x) { return sum(square(clamp(x, -0.9, 0.9))); },
                     near(3, 3, -0.5, 0.5), 1e-5) < 1e-6);
}

TEST_CASE("logdet at identity and diagonal") {
    Tape t;
    Node a = t.leaf(Matrix::identity(4), true);
    Node y = logdet_spd(a);
    CHECK(y.value()(0, 0) == doctest::Approx(0.0));
    t.backward(y);
    CHECK(max_abs_diff(a.grad(), Matrix::identity(4)) < 1e-12);

    Tape t2;
    Node d = t2.leaf(Matrix::from_rows({{2, 0}, {0, 5}}), true);
    Node y2 = logdet_spd(d);
    CHECK(y2.value()(0, 0) == doctest::Approx(std::log(10.0)));
    t2.backward(y2);
    CHECK(d.grad()(0, 0) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(d.grad()(1, 1) == doctest::Approx(0.2).epsilon(1e-10));
}

TEST_CASE("logdet gradient matches finite differences") {
    Rng rng(29);
    Matrix a = oracles::random_spd(5, rng);
    auto f = [](Tape&, Node x) { return logdet_spd(x); };
    CHECK(grad_check(f, a, 1e-5) < 1e-5);
}

TEST_CASE("grad_check exact on linear functions") {
    Rng rng(31);
    CHECK(grad_check([](Tape&, Node x) { return sum(x); },
                     oracles::random_matrix(3, 3, rng), 1e-5) < 1e-10);
}

TEST_CASE("bernoulli_nll_logits value and gradient") {
    // target 1, logit 0 -> log 2 per entry
    Tape t;
    Node l = t.leaf(Matrix(2, 2, 0.0), true);
    Node y = bernoulli_nll_logits(Matrix(2, 2, 1.0), l);
    CHECK(y.value()(0, 0) == doctest::Approx(4.0 * std::log(2.0)));
    t.backward(y);
    CHECK(l.grad()(0, 0) == doctest::Approx(-0.5));

    Rng rng(41);
    Matrix targets(3, 2);
    for (double& v : targets.data) v = rng.uniform();
    auto f = [&](Tape&, Node x) { return bernoulli_nll_logits(targets, x); };
    CHECK(grad_check(f, oracles::random_matrix(3, 2, rng), 1e-5) < 1e-6);

    CHECK_THROWS_AS(bernoulli_nll_logits(Matrix(2, 2, 1.5), l), DomainError);
}

TEST_CASE("tape linearity: backward of a sum equals summed backwards") {
    Rng rng(43);
    Matrix p = oracles::random_matrix(3, 3, rng);

    Matrix joint;
    {
        Tape t;
        Node x = t.leaf(p, true);
        Node l = add(sum(square(x)), sum(exp(x)));
        t.backward(l);
        joint = x.grad();
    }
    Matrix separate(3, 3);
    {
        Tape t;
        Node x = t.leaf(p, true);
        t.backward(sum(square(x)));
        separate = x.grad();
    }
    {
        Tape t;
        Node x = t.leaf(p, true);
        t.backward(sum(exp(x)));
        separate = add(separate, x.grad());
    }
    CHECK(max_abs_diff(joint, separate) < 1e-12);
}

TEST_CASE("determinism: identical seeds give bit-identical values and gradients") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Matrix p = oracles::random_matrix(4, 4, rng);
        Tape t;
        Node x = t.leaf(p, true);
        Node l = sum(square(matmul(x, transpose(x))));
        t.backward(l);
        return std::pair<double, Matrix>(l.value()(0, 0), x.grad());
    };
    auto [v1, g1] = run(99);
    auto [v2, g2] = run(99);
    CHECK(v1 == v2);
    CHECK(max_abs_diff(g1, g2) == 0.0);
}

TEST_CASE("shape mismatches raise") {
    Tape t;
    Node a = t.leaf(Matrix(2, 3));
    Node b = t.leaf(Matrix(3, 2));
    CHECK_THROWS_AS(add(a, b), ShapeMismatch);
    CHECK_THROWS_AS(matmul(a, a), ShapeMismatch);
}
