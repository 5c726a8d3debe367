#include <catch2/catch_amalgamated.hpp>

#include "sonalign/tape.hpp"

using namespace sonalign;

namespace {

Matrix random_matrix(size_t r, size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
    return m;
}

}  // namespace

TEST_CASE("relu forward") {
    Tape t;
    NodeId x = t.constant(Matrix(1, 3, {-1, 0, 2}));
    NodeId y = t.relu(x);
    CHECK(t.value(y)[0] == 0.0);
    CHECK(t.value(y)[1] == 0.0);
    CHECK(t.value(y)[2] == 2.0);
}

TEST_CASE("row_mean_center hand expansion") {
    Tape t;
    NodeId x = t.constant(Matrix(2, 2, {1, 3, 5, 7}));
    NodeId y = t.row_mean_center(x);
    CHECK(t.value(y)(0, 0) == -2.0);
    CHECK(t.value(y)(0, 1) == -2.0);
    CHECK(t.value(y)(1, 0) == 2.0);
    CHECK(t.value(y)(1, 1) == 2.0);
}

TEST_CASE("frobenius_inner(A,A) equals frobenius_norm(A) squared") {
    Rng rng(11);
    Tape t;
    NodeId a = t.constant(random_matrix(3, 5, rng));
    double inner = t.value(t.frobenius_inner(a, a)).scalar();
    double norm = t.value(t.frobenius_norm(a)).scalar();
    CHECK_THAT(inner, Catch::Matchers::WithinRel(norm * norm, 1e-12));
}

TEST_CASE("backward of x squared at 3") {
    Tape t;
    NodeId x = t.param(Matrix(1, 1, {3.0}), "x");
    NodeId y = t.elementwise_mul(x, x);
    auto rep = t.backward(y);
    CHECK(rep.grad_of("x").scalar() == 6.0);
}

TEST_CASE("backward of squared frobenius norm is 2A") {
    Rng rng(5);
    Matrix a0 = random_matrix(3, 4, rng);
    Tape t;
    NodeId a = t.param(a0, "a");
    NodeId n = t.frobenius_norm(a);
    NodeId loss = t.elementwise_mul(n, n);
    auto rep = t.backward(loss);
    const Matrix& g = rep.grad_of("a");
    for (size_t i = 0; i < g.size(); ++i) CHECK_THAT(g[i], Catch::Matchers::WithinAbs(2.0 * a0[i], 1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape t;
    NodeId x = t.param(Matrix(2, 2), "x");
    NodeId y = t.relu(x);
    CHECK_THROWS_AS(t.backward(y), ShapeError);
}

TEST_CASE("disconnected parameter reports zero gradient with flag") {
    Tape t;
    NodeId x = t.param(Matrix(1, 1, {2.0}), "x");
    NodeId unused = t.param(Matrix(2, 2, {1, 1, 1, 1}), "unused");
    (void)unused;
    NodeId loss = t.elementwise_mul(x, x);
    auto rep = t.backward(loss);
    REQUIRE(rep.entries.size() == 2);
    CHECK(rep.entries[0].connected);
    CHECK_FALSE(rep.entries[1].connected);
    for (size_t i = 0; i < rep.entries[1].grad.size(); ++i) CHECK(rep.entries[1].grad[i] == 0.0);
}

TEST_CASE("frozen leaves never reach the gradient report") {
    Tape t;
    NodeId x = t.param(Matrix(1, 2, {1.0, 2.0}), "x");
    NodeId f = t.frozen_param(Matrix(1, 2, {0.5, 0.25}), "teacher");
    NodeId loss = t.mean_all(t.elementwise_mul(x, f));
    auto rep = t.backward(loss);
    REQUIRE(rep.entries.size() == 1);
    CHECK(rep.entries[0].name == "x");
    CHECK_THROWS_AS(rep.grad_of("teacher"), Error);
}

TEST_CASE("replay with identical inputs reproduces values bitwise") {
    Rng rng(99);
    Tape t;
    NodeId a = t.param(random_matrix(4, 3, rng), "a");
    NodeId b = t.param(random_matrix(3, 5, rng), "b");
    NodeId mask = t.constant(random_matrix(4, 5, rng, 0.0, 1.25));
    NodeId h = t.dropout_with_mask(t.relu(t.matmul(a, b)), mask);
    NodeId loss = t.mean_all(t.softmax_rows(t.layer_norm_rows(h)));
    std::vector<double> before = t.value(loss).vec();
    std::vector<double> h_before = t.value(h).vec();
    t.replay();
    CHECK(t.value(loss).vec() == before);
    CHECK(t.value(h).vec() == h_before);
}

TEST_CASE("gradient check is near-exact on a linear map") {
    Rng rng(21);
    Matrix w = random_matrix(4, 3, rng);
    Matrix c = random_matrix(3, 1, rng);
    auto fn = [&](Tape& t, const std::vector<NodeId>& ids) {
        NodeId cn = t.constant(c);
        return t.mean_all(t.matmul(ids[0], cn));
    };
    auto res = grad_check(fn, {w}, 1e-5, 1);
    CHECK(res.max_rel_error < 1e-10);
    CHECK(res.coords_checked == 12);
}

TEST_CASE("gradient check across the full op set") {
    // one composite expression touching every differentiable op
    Rng rng(31);
    Matrix a = random_matrix(4, 3, rng);
    Matrix b = random_matrix(3, 4, rng);
    Matrix c = random_matrix(4, 4, rng);
    Matrix mask = random_matrix(4, 4, rng, 0.25, 1.0);
    Matrix target = random_matrix(4, 4, rng);
    Matrix cellmask(4, 4);
    for (size_t i = 0; i < cellmask.size(); ++i) cellmask[i] = (i % 3 == 0) ? 1.0 : 0.0;

    auto fn = [&](Tape& t, const std::vector<NodeId>& ids) {
        NodeId m = t.matmul(ids[0], ids[1]);                    // 4x4
        NodeId s = t.sub(t.add(m, ids[2]), t.scalar_mul(ids[2], 0.3));
        NodeId r = t.relu(t.scalar_mul(s, 1.7));
        NodeId dm = t.dropout_with_mask(r, t.constant(mask));
        NodeId ln = t.layer_norm_rows(dm);
        NodeId sm = t.softmax_rows(ln);
        NodeId rn = t.row_l2_normalize(t.add(sm, t.constant(Matrix::filled(4, 4, 0.1))));
        NodeId ctr = t.row_mean_center(rn);
        NodeId tr = t.transpose(ctr);
        NodeId inner = t.frobenius_inner(tr, tr);               // scalar
        NodeId norm = t.frobenius_norm(ctr);
        NodeId ratio = t.elementwise_mul(inner, t.recip(norm));
        NodeId se = t.square_error_masked(rn, t.constant(target), t.constant(cellmask));
        NodeId me = t.mean_all(t.elementwise_mul(rn, rn));
        return t.add(t.add(ratio, se), me);
    };
    for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        auto res = grad_check(fn, {a, b, c}, 1e-5, seed);
        INFO("seed " << seed);
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("square_error_masked examples") {
    Rng rng(8);
    Matrix target = random_matrix(3, 4, rng);
    Matrix mask(3, 4);
    for (size_t j = 0; j < 4; ++j) mask(1, j) = 1.0;  // middle row masked

    Tape t;
    NodeId tgt = t.constant(target);
    NodeId msk = t.constant(mask);

    SECTION("identical prediction gives zero") {
        NodeId pred = t.constant(target);
        CHECK(t.value(t.square_error_masked(pred, tgt, msk)).scalar() == 0.0);
    }
    SECTION("constant offset of one gives one") {
        Matrix off = target;
        for (size_t i = 0; i < off.size(); ++i) off[i] += 1.0;
        NodeId pred = t.constant(off);
        CHECK_THAT(t.value(t.square_error_masked(pred, tgt, msk)).scalar(),
                   Catch::Matchers::WithinAbs(1.0, 1e-15));
    }
    SECTION("random case equals double-loop oracle") {
        Matrix pred = random_matrix(3, 4, rng);
        double want = 0.0;
        size_t count = 0;
        for (size_t r = 0; r < 3; ++r)
            for (size_t c = 0; c < 4; ++c)
                if (mask(r, c) != 0.0) {
                    double d = pred(r, c) - target(r, c);
                    want += d * d;
                    ++count;
                }
        want /= static_cast<double>(count);
        NodeId p = t.constant(pred);
        CHECK_THAT(t.value(t.square_error_masked(p, tgt, msk)).scalar(),
                   Catch::Matchers::WithinAbs(want, 1e-12));
    }
    SECTION("empty mask is rejected") {
        NodeId p = t.constant(target);
        NodeId zero_mask = t.constant(Matrix(3, 4));
        CHECK_THROWS_AS(t.square_error_masked(p, tgt, zero_mask), ShapeError);
    }
}

TEST_CASE("dropout mask is an explicit input and never differentiated") {
    Tape t;
    NodeId x = t.param(Matrix(2, 2, {1, 2, 3, 4}), "x");
    NodeId mask = t.param(Matrix(2, 2, {1, 0, 1, 0}), "mask");
    NodeId loss = t.mean_all(t.dropout_with_mask(x, mask));
    auto rep = t.backward(loss);
    CHECK(rep.grad_of("x")(0, 0) == 0.25);
    CHECK(rep.grad_of("x")(0, 1) == 0.0);
    // the mask input exists as a parameter but receives no flow
    CHECK_FALSE(rep.entries[1].connected);
}

TEST_CASE("seeded backward accumulates multiple roots") {
    // d/dx of (mean(y) with seed 2) where y = 3x equals the chain through a
    // single combined loss 2*mean(3x)
    Tape t;
    NodeId x = t.param(Matrix(1, 1, {5.0}), "x");
    NodeId y = t.scalar_mul(x, 3.0);
    auto rep = t.backward_seeded({{y, Matrix(1, 1, {2.0})}});
    CHECK(rep.grad_of("x").scalar() == 6.0);

    // two seeds on distinct nodes add up
    Tape t2;
    NodeId x2 = t2.param(Matrix(1, 1, {5.0}), "x");
    NodeId u = t2.scalar_mul(x2, 3.0);
    NodeId v = t2.scalar_mul(x2, 7.0);
    auto rep2 = t2.backward_seeded({{u, Matrix(1, 1, {1.0})}, {v, Matrix(1, 1, {1.0})}});
    CHECK(rep2.grad_of("x").scalar() == 10.0);
}
