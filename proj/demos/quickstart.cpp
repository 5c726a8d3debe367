// Minimal tour: differentiate a tiny expression and print the gradient.
#include <cstdio>

#include "sonalign/tape.hpp"

int main() {
    using namespace sonalign;
    Tape t;
    NodeId x = t.param(Matrix(2, 2, {1, 2, 3, 4}), "x");
    NodeId loss = t.elementwise_mul(t.frobenius_norm(x), t.frobenius_norm(x));  // ||x||^2
    auto report = t.backward(loss);
    const Matrix& g = report.grad_of("x");  // = 2x
    std::printf("d||x||^2/dx = [[%g, %g], [%g, %g]]\n", g(0, 0), g(0, 1), g(1, 0), g(1, 1));
    return 0;
}
