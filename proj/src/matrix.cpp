#include "dppvae/matrix.hpp"

#include <cmath>
#include <string>

#include "dppvae/errors.hpp"

namespace dppvae {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rws) {
    Matrix m(rws.size(), rws.size() ? rws.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& r : rws) {
        if (r.size() != m.cols) throw ShapeMismatch("ragged initializer rows");
        std::size_t j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::row_vector(const std::vector<double>& v) {
    Matrix m(1, v.size());
    m.data = v;
    return m;
}

Matrix Matrix::column_vector(const std::vector<double>& v) {
    Matrix m(v.size(), 1);
    m.data = v;
    return m;
}

Matrix Matrix::row(std::size_t i) const {
    Matrix m(1, cols);
    for (std::size_t j = 0; j < cols; ++j) m(0, j) = (*this)(i, j);
    return m;
}

std::vector<double> Matrix::row_values(std::size_t i) const {
    return std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(i * cols),
                               data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeMismatch(std::string(op) + ": " + std::to_string(a.rows) + "x" +
                            std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                            std::to_string(b.cols));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ShapeMismatch("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                            " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    Matrix c(a.rows, b.cols);
    // ikj order keeps the inner loop contiguous; accumulation stays sequential
    // per output entry so results are reproducible.
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = &c.data[i * c.cols];
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* bk = &b.data[k * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "add");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "sub");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "hadamard");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

Matrix scale(const Matrix& a, double c) {
    Matrix m = a;
    for (double& v : m.data) v *= c;
    return m;
}

double trace(const Matrix& a) {
    double t = 0.0;
    const std::size_t n = a.rows < a.cols ? a.rows : a.cols;
    for (std::size_t i = 0; i < n; ++i) t += a(i, i);
    return t;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::fabs(v));
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

bool all_finite(const Matrix& a) {
    for (double v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

double asymmetry(const Matrix& a) {
    if (!a.is_square()) throw ShapeMismatch("asymmetry: matrix not square");
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = i + 1; j < a.cols; ++j)
            m = std::max(m, std::fabs(a(i, j) - a(j, i)));
    return m;
}

Matrix symmetrize(const Matrix& a) {
    if (!a.is_square()) throw ShapeMismatch("symmetrize: matrix not square");
    Matrix s = a;
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
    return s;
}

}  // namespace dppvae
