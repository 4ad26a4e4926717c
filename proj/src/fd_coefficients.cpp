#include <boost/multiprecision/cpp_int.hpp>
#include <boost/rational.hpp>

#include <stdexcept>
#include <vector>

#include "stencilc/symbolic.hpp"

// Central FD weights from the Taylor-table linear system: with offsets
// o_j = -p/2..p/2 the weights satisfy
//
//     sum_j c_j * o_j^k = k! * delta(k, d)   for k = 0..p,
//
// which makes the stencil exact on monomials up to degree p and, by
// symmetry, up to degree d+p-1.  Solved by Gaussian elimination over
// arbitrary-precision rationals; intermediate Vandermonde entries at high
// orders overflow any fixed-width integer, the final weights do not.

namespace stencilc::sym {

namespace {

using BigInt = boost::multiprecision::cpp_int;
using BigRat = boost::rational<BigInt>;

BigRat ipow(int base, int exp) {
    BigInt acc = 1;
    for (int i = 0; i < exp; ++i) acc *= base;
    return BigRat(acc);
}

BigInt factorial(int n) {
    BigInt acc = 1;
    for (int i = 2; i <= n; ++i) acc *= i;
    return acc;
}

}  // namespace

std::vector<std::pair<int, Rational>> fd_coefficients(int derivative_order,
                                                      int accuracy_order) {
    if (derivative_order < 1 || derivative_order > 2)
        throw std::invalid_argument("fd_coefficients: derivative order must be 1 or 2");
    if (accuracy_order < 2 || accuracy_order % 2 != 0)
        throw std::invalid_argument("fd_coefficients: accuracy order must be even and >= 2");

    const int half = accuracy_order / 2;
    const int n = accuracy_order + 1;  // unknowns and equations

    // Augmented matrix rows: sum_j c_j * o_j^k = k! * delta(k, d).
    std::vector<std::vector<BigRat>> m(n, std::vector<BigRat>(n + 1));
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j < n; ++j) m[k][j] = ipow(j - half, k);
        m[k][n] = k == derivative_order ? BigRat(factorial(k)) : BigRat(0);
    }

    for (int col = 0; col < n; ++col) {
        int pivot = col;
        while (pivot < n && m[pivot][col] == BigRat(0)) ++pivot;
        if (pivot == n) throw std::logic_error("fd_coefficients: singular Taylor system");
        std::swap(m[col], m[pivot]);
        BigRat inv = BigRat(m[col][col].denominator(), m[col][col].numerator());
        for (int j = col; j <= n; ++j) m[col][j] *= inv;
        for (int row = 0; row < n; ++row) {
            if (row == col || m[row][col] == BigRat(0)) continue;
            BigRat f = m[row][col];
            for (int j = col; j <= n; ++j) m[row][j] -= f * m[col][j];
        }
    }

    std::vector<std::pair<int, Rational>> weights;
    weights.reserve(n);
    for (int j = 0; j < n; ++j) {
        const BigRat& w = m[j][n];
        if (w.numerator() < INT64_MIN || w.numerator() > INT64_MAX ||
            w.denominator() > INT64_MAX)
            throw std::overflow_error("fd_coefficients: weight exceeds 64-bit rational range");
        weights.emplace_back(j - half,
                             Rational(static_cast<std::int64_t>(w.numerator()),
                                      static_cast<std::int64_t>(w.denominator())));
    }
    return weights;
}

}  // namespace stencilc::sym
