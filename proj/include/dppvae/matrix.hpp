#ifndef DPPVAE_MATRIX_HPP
#define DPPVAE_MATRIX_HPP

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace dppvae {

/// Dense real matrix, row-major. The one value type all linear algebra
/// flows through; immutable by convention once handed to an operation.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // rows*cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rws);
    static Matrix row_vector(const std::vector<double>& v);
    static Matrix column_vector(const std::vector<double>& v);

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool is_square() const { return rows == cols; }

    Matrix row(std::size_t i) const;
    std::vector<double> row_values(std::size_t i) const;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);

double trace(const Matrix& a);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& a);

/// Largest |a_ij - a_ji|, 0 for non-square input sizes is an error.
double asymmetry(const Matrix& a);
/// (A + A^T)/2
Matrix symmetrize(const Matrix& a);

void check_same_shape(const Matrix& a, const Matrix& b, const char* op);

}  // namespace dppvae

#endif
