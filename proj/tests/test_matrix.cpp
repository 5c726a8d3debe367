#include <catch2/catch_amalgamated.hpp>

#include "sonalign/matrix.hpp"
#include "sonalign/rng.hpp"

using namespace sonalign;

namespace {

Matrix random_matrix(size_t r, size_t c, Rng& rng) {
    Matrix m(r, c);
    for (size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-1.0, 1.0);
    return m;
}

// independent triple-loop product, deliberately different loop order from the
// library kernel
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (size_t i = 0; i < a.rows(); ++i)
        for (size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

}  // namespace

TEST_CASE("matmul identity") {
    Rng rng(7);
    Matrix a = random_matrix(3, 3, rng);
    Matrix p = matmul_values(Matrix::identity(3), a);
    for (size_t i = 0; i < a.size(); ++i) CHECK(p[i] == a[i]);
}

TEST_CASE("matmul hand expansion") {
    Matrix a(2, 2, {1, 2, 3, 4});
    Matrix b(2, 1, {0, 1});
    Matrix c = matmul_values(a, b);
    CHECK(c(0, 0) == 2.0);
    CHECK(c(1, 0) == 4.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(42);
    Matrix a = random_matrix(7, 5, rng);
    Matrix b = random_matrix(5, 3, rng);
    Matrix got = matmul_values(a, b);
    Matrix want = matmul_oracle(a, b);
    for (size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes") {
    Matrix a(2, 3);
    Matrix b(2, 2);
    CHECK_THROWS_MATCHES(matmul_values(a, b), ShapeError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("2x3")));
}

TEST_CASE("matrix data length invariant") {
    CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("frobenius inner is symmetric and squares the norm") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        Matrix a = random_matrix(4, 6, rng);
        Matrix b = random_matrix(4, 6, rng);
        CHECK(frobenius_inner_values(a, b) == frobenius_inner_values(b, a));
        double n = frobenius_norm_values(a);
        CHECK_THAT(frobenius_inner_values(a, a), Catch::Matchers::WithinRel(n * n, 1e-12));
    }
}
