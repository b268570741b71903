#include <doctest.h>

#include <cmath>
#include <vector>

#include "kelab/ops.hpp"
#include "kelab/rng.hpp"
#include "kelab/tensor.hpp"

using namespace kelab;

namespace {

// Naive triple-loop reference for matmul.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int64_t r, int64_t k, int64_t c) {
    std::vector<double> out(static_cast<size_t>(r * c), 0.0);
    for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * c + j)];
            }
            out[static_cast<size_t>(i * c + j)] = acc;
        }
    }
    return out;
}

Tensor random_tensor(Shape shape, uint64_t seed, bool requires_grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal();
    return t;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("matmul identity and projector") {
    Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, m);
    CHECK(out.values() == std::vector<double>{1, 2, 3, 4});

    Tensor proj = Tensor::from_values({2, 2}, {1, 0, 0, 0});
    Tensor n = Tensor::from_values({2, 2}, {5, 6, 7, 8});
    CHECK(matmul(proj, n).values() == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul matches triple-loop oracle") {
    Tensor a = random_tensor({3, 4}, 11);
    Tensor b = random_tensor({4, 2}, 12);
    Tensor out = matmul(a, b);
    auto expect = matmul_oracle(a.values(), b.values(), 3, 4, 2);
    for (size_t i = 0; i < expect.size(); ++i) {
        CHECK(std::abs(out.values()[i] - expect[i]) < 1e-12);
    }

    // random sizes up to 64x64
    for (uint64_t trial = 0; trial < 4; ++trial) {
        Rng rng(100 + trial);
        const int64_t r = 1 + static_cast<int64_t>(rng.below(64));
        const int64_t k = 1 + static_cast<int64_t>(rng.below(64));
        const int64_t c = 1 + static_cast<int64_t>(rng.below(64));
        Tensor x = random_tensor({r, k}, 200 + trial);
        Tensor y = random_tensor({k, c}, 300 + trial);
        Tensor got = matmul(x, y);
        auto want = matmul_oracle(x.values(), y.values(), r, k, c);
        double worst = 0.0;
        for (size_t i = 0; i < want.size(); ++i) {
            worst = std::max(worst, std::abs(got.values()[i] - want[i]));
        }
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4x2]"), ShapeError);
}

TEST_CASE("matmul_nt equals matmul against transposed operand") {
    Tensor a = random_tensor({5, 7}, 21);
    Tensor bt = random_tensor({3, 7}, 22);
    Tensor b = Tensor::zeros({7, 3});
    for (int64_t i = 0; i < 3; ++i) {
        for (int64_t j = 0; j < 7; ++j) b.data()[j * 3 + i] = bt.data()[i * 7 + j];
    }
    Tensor lhs = matmul_nt(a, bt);
    Tensor rhs = matmul(a, b);
    for (int64_t i = 0; i < lhs.numel(); ++i) {
        CHECK(std::abs(lhs.data()[i] - rhs.data()[i]) < 1e-12);
    }
}

TEST_CASE("softmax rows: uniform, closed form, limits") {
    Tensor z = Tensor::from_values({1, 4}, {3.5, 3.5, 3.5, 3.5});
    for (double temp : {0.5, 1.0, 10.0}) {
        Tensor y = softmax_rows(z, temp);
        for (int64_t i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(0.25).epsilon(1e-12));
    }

    Tensor z2 = Tensor::from_values({1, 2}, {0.0, std::log(3.0)});
    Tensor y2 = softmax_rows(z2, 1.0);
    CHECK(std::abs(y2.data()[0] - 0.25) < 1e-12);
    CHECK(std::abs(y2.data()[1] - 0.75) < 1e-12);

    Tensor z3 = Tensor::from_values({1, 3}, {5.0, -2.0, 9.0});
    Tensor y3 = softmax_rows(z3, 1e6);
    for (int64_t i = 0; i < 3; ++i) CHECK(std::abs(y3.data()[i] - 1.0 / 3.0) < 1e-3);

    CHECK_THROWS_AS(softmax_rows(z3, 0.0), ConfigError);
    CHECK_THROWS_AS(softmax_rows(z3, -1.0), ConfigError);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Tensor z = random_tensor({6, 9}, 31);
    Tensor y = softmax_rows(z, 1.3);
    for (int64_t i = 0; i < 6; ++i) {
        double total = 0.0;
        for (int64_t j = 0; j < 9; ++j) total += y.data()[i * 9 + j];
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
    Tensor shifted = z.clone();
    for (int64_t j = 0; j < 9; ++j) shifted.data()[2 * 9 + j] += 17.25;
    Tensor y2 = softmax_rows(shifted, 1.3);
    for (int64_t j = 0; j < 9; ++j) {
        CHECK(std::abs(y2.data()[2 * 9 + j] - y.data()[2 * 9 + j]) < 1e-12);
    }
}

TEST_CASE("gated ffn: zero input, hand-evaluated coefficients") {
    Tensor x0 = Tensor::zeros({2, 3});
    Tensor gate = random_tensor({4, 3}, 41);
    Tensor up = random_tensor({4, 3}, 42);
    Tensor down = random_tensor({4, 3}, 43);
    GatedFfnResult r0 = gated_ffn_forward(x0, gate, up, down);
    for (int64_t i = 0; i < r0.out.numel(); ++i) CHECK(r0.out.data()[i] == 0.0);
    for (int64_t i = 0; i < r0.coeff.numel(); ++i) CHECK(r0.coeff.data()[i] == 0.0);

    // single token, m=2, d=1: pre-activations (gate=1, up=2) and (gate=-1, up=1)
    Tensor x = Tensor::from_values({1, 1}, {1.0});
    Tensor g = Tensor::from_values({2, 1}, {1.0, -1.0});
    Tensor u = Tensor::from_values({2, 1}, {2.0, 1.0});
    Tensor d = Tensor::from_values({2, 1}, {1.0, 1.0});
    GatedFfnResult r = gated_ffn_forward(x, g, u, d);
    const double c0 = std::abs(1.0 * logistic(1.0) * 2.0);
    const double c1 = std::abs(-1.0 * logistic(-1.0) * 1.0);
    CHECK(r.coeff.data()[0] == doctest::Approx(c0).epsilon(1e-14));
    CHECK(r.coeff.data()[1] == doctest::Approx(c1).epsilon(1e-14));
}

TEST_CASE("gated ffn: scaling an up row scales its coefficient column exactly") {
    Tensor x = random_tensor({5, 8}, 51);
    Tensor gate = random_tensor({6, 8}, 52);
    Tensor up = random_tensor({6, 8}, 53);
    Tensor down = random_tensor({6, 8}, 54);
    GatedFfnResult base = gated_ffn_forward(x, gate, up, down);

    const double u_scale = -4.0;  // power of two keeps the float products exact
    Tensor up2 = up.clone();
    for (int64_t j = 0; j < 8; ++j) up2.data()[2 * 8 + j] *= u_scale;
    GatedFfnResult scaled = gated_ffn_forward(x, gate, up2, down);
    for (int64_t t = 0; t < 5; ++t) {
        for (int64_t i = 0; i < 6; ++i) {
            const double expect = (i == 2 ? std::abs(u_scale) : 1.0) * base.coeff.data()[t * 6 + i];
            CHECK(scaled.coeff.data()[t * 6 + i] == expect);
        }
    }
    // out changes only through the scaled memory slot
    for (int64_t t = 0; t < 5; ++t) {
        for (int64_t j = 0; j < 8; ++j) {
            const double h_old = base.out.data()[t * 8 + j];
            const double h_new = scaled.out.data()[t * 8 + j];
            double g2 = 0.0, u2v = 0.0;
            for (int64_t p = 0; p < 8; ++p) {
                g2 += x.data()[t * 8 + p] * gate.data()[2 * 8 + p];
                u2v += x.data()[t * 8 + p] * up.data()[2 * 8 + p];
            }
            const double h2 = g2 * logistic(g2) * u2v;
            const double delta = (u_scale - 1.0) * h2 * down.data()[2 * 8 + j];
            CHECK(h_new - h_old == doctest::Approx(delta).epsilon(1e-10));
        }
    }
}

TEST_CASE("backward: linear case, accumulation, non-scalar loss") {
    Tensor w = random_tensor({2, 3}, 61, true);
    Tensor x = Tensor::from_values({3, 1}, {0.5, -1.25, 2.0});

    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(matmul(w, x));
    tape.backward(loss);
    for (int64_t i = 0; i < 2; ++i) {
        for (int64_t j = 0; j < 3; ++j) {
            CHECK(w.grad()[i * 3 + j] == x.data()[j]);
        }
    }

    // second backward without clearing doubles leaf grads exactly
    std::vector<double> once(w.grad(), w.grad() + w.numel());
    tape.backward(loss);
    for (int64_t i = 0; i < w.numel(); ++i) {
        CHECK(w.grad()[i] == 2.0 * once[static_cast<size_t>(i)]);
    }

    Tensor not_scalar = matmul(w, x);
    CHECK_THROWS_AS(tape.backward(not_scalar), ValidationError);
}

TEST_CASE("backward matches central finite differences on a toy model") {
    Tensor w1 = random_tensor({4, 3}, 71, true);
    Tensor w2 = random_tensor({2, 4}, 72, true);
    Tensor x = Tensor::from_values({3, 1}, {0.3, -0.8, 1.1});

    auto loss_fn = [&]() {
        Tensor a = matmul(w1, x);
        Tensor h = swiglu(a, a);
        Tensor y = matmul(w2, h);
        return sum(y).value();
    };

    Tape tape;
    {
        TapeScope scope(tape);
        Tensor a = matmul(w1, x);
        Tensor h = swiglu(a, a);
        Tensor loss = sum(matmul(w2, h));
        tape.backward(loss);
    }
    for (Tensor* w : {&w1, &w2}) {
        Tensor fd = finite_diff_grad(loss_fn, *w, 1e-5);
        for (int64_t i = 0; i < w->numel(); ++i) {
            const double ad = w->grad()[i];
            const double rel = std::abs(ad - fd.data()[i]) / std::max(1e-8, std::abs(fd.data()[i]));
            CHECK(rel <= 1e-4);
        }
    }
}

TEST_CASE("coefficients act as gradient scaling factors for memory vectors") {
    const int64_t d = 6, m = 5;
    Tensor x = random_tensor({1, d}, 81);
    Tensor gate = random_tensor({m, d}, 82, true);
    Tensor up = random_tensor({m, d}, 83, true);
    Tensor down = random_tensor({m, d}, 84, true);
    Tensor w = random_tensor({1, d}, 85);  // upstream gradient dL/dout

    Tape tape;
    TapeScope scope(tape);
    Tensor g = matmul_nt(x, gate);
    Tensor u = matmul_nt(x, up);
    Tensor h = swiglu(g, u);  // signed coefficients
    Tensor out = matmul(h, down);
    Tensor loss = sum(mul(out, w));
    tape.backward(loss);

    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < d; ++j) {
            const double expect = h.data()[i] * w.data()[j];
            CHECK(std::abs(down.grad()[i * d + j] - expect) <= 1e-10);
        }
    }
}

TEST_CASE("finite_diff_grad basics") {
    Tensor w = Tensor::from_values({1}, {3.0});
    auto square = [&]() { return w.data()[0] * w.data()[0]; };
    Tensor g = finite_diff_grad(square, w, 1e-5);
    CHECK(std::abs(g.data()[0] - 6.0) < 1e-6);
    CHECK(w.data()[0] == 3.0);  // restored

    auto constant = [&]() { return 42.0; };
    Tensor g0 = finite_diff_grad(constant, w, 1e-5);
    CHECK(g0.data()[0] == 0.0);

    CHECK_THROWS_AS(finite_diff_grad(square, w, 0.0), ConfigError);
}

TEST_CASE("elementwise op backward sanity") {
    Tensor a = random_tensor({2, 2}, 91, true);
    Tensor b = random_tensor({2, 2}, 92, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(add(a, b), b));
    tape.backward(loss);
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(a.grad()[i] == doctest::Approx(b.data()[i]).epsilon(1e-14));
        CHECK(b.grad()[i] == doctest::Approx(a.data()[i] + 2.0 * b.data()[i]).epsilon(1e-14));
    }
}
