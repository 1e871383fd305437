#include <doctest.h>

#include <cmath>
#include <vector>

#include "clora/tensor.hpp"

using namespace clora;

// Brute-force direct convolution, written independently of the library path:
// walks the kernel window per output pixel with no layout tricks.
static std::vector<double> conv_oracle(const std::vector<double>& x, int H, int W, int Cin,
                                       const std::vector<double>& k, int Cout,
                                       const std::vector<double>& bias) {
    std::vector<double> out(static_cast<size_t>(H) * W * Cout, 0.0);
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
            for (int co = 0; co < Cout; ++co) {
                double acc = bias[static_cast<size_t>(co)];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int iy = y + dy, ix = xx + dx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            double xv = x[(static_cast<size_t>(iy) * W + ix) * Cin + ci];
                            double kv = k[(((static_cast<size_t>(co) * Cin) + ci) * 3 + (dy + 1)) * 3 + (dx + 1)];
                            acc += xv * kv;
                        }
                out[(static_cast<size_t>(y) * W + xx) * Cout + co] = acc;
            }
    return out;
}

TEST_CASE("elementwise primitives") {
    Tensor a({2}, {1, 2}), b({2}, {3, 4});
    CHECK(add(a, b).values() == std::vector<double>{4, 6});
    CHECK(sub(b, a).values() == std::vector<double>{2, 2});
    CHECK(mul(a, b).values() == std::vector<double>{3, 8});
    CHECK(scale(a, 2.5).values() == std::vector<double>{2.5, 5.0});

    Tensor c({3}, {1, 2, 3});
    CHECK_THROWS_WITH_AS(add(a, c), doctest::Contains("add"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(mul(a, c), doctest::Contains("[2]"), std::invalid_argument);
}

TEST_CASE("matmul identity and shapes") {
    Rng rng(1);
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor x = randn({3, 5}, rng);
    CHECK(matmul(eye, x).values() == x.values());

    // matrix-vector
    Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor v({3}, {1, 1, 1});
    CHECK(matmul(m, v).values() == std::vector<double>{6, 15});

    // trailing-axis form: [H,W,k] x [k,n]
    Tensor hw = randn({2, 2, 3}, rng);
    Tensor w({3, 4}, std::vector<double>(12, 0.5));
    Tensor y = matmul(hw, w);
    CHECK(y.shape() == Shape{2, 2, 4});

    CHECK_THROWS_AS(matmul(m, Tensor({2}, {1, 1})), std::invalid_argument);
    CHECK_THROWS_AS(matmul(v, v), std::invalid_argument);
}

TEST_CASE("conv2d all-ones oracle") {
    // 1-channel 4x4 of ones, all-ones kernel: corners 4, edges 6, interior 9
    Tensor x = Tensor::full({4, 4, 1}, 1.0);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d_3x3_same(x, k, Tensor::zeros({1}));
    auto at  = [&](int r, int c) { return y.values()[static_cast<size_t>(r) * 4 + c]; };
    CHECK(at(0, 0) == 4);
    CHECK(at(0, 3) == 4);
    CHECK(at(3, 0) == 4);
    CHECK(at(3, 3) == 4);
    CHECK(at(0, 1) == 6);
    CHECK(at(1, 0) == 6);
    CHECK(at(2, 3) == 6);
    CHECK(at(1, 1) == 9);
    CHECK(at(2, 2) == 9);
}

TEST_CASE("conv2d matches brute-force oracle on random input") {
    Rng rng(7);
    const int H = 5, W = 6, Cin = 3, Cout = 4;
    Tensor x    = rand_uniform({H, W, Cin}, rng, -1, 1);
    Tensor k    = rand_uniform({Cout, Cin, 3, 3}, rng, -1, 1);
    Tensor bias = rand_uniform({Cout}, rng, -1, 1);
    Tensor y    = conv2d_3x3_same(x, k, bias);
    auto oracle = conv_oracle(x.values(), H, W, Cin, k.values(), Cout, bias.values());
    REQUIRE(y.values().size() == oracle.size());
    for (size_t i = 0; i < oracle.size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));

    // flat kernel form is the same map
    Tensor kf({Cout, Cin * 9}, k.values());
    CHECK(conv2d_3x3_same(x, kf, bias).values() == y.values());

    CHECK_THROWS_WITH_AS(conv2d_3x3_same(x, Tensor::zeros({2, 2, 3, 3}), Tensor::zeros({2})),
                         doctest::Contains("conv2d"), std::invalid_argument);
}

TEST_CASE("reduce_mean and mse") {
    Tensor x({4}, {1, 2, 3, 4});
    CHECK(reduce_mean(x).item() == doctest::Approx(2.5));
    Tensor z({2}, {0, 0}), o({2}, {1, 1});
    CHECK(mse(z, o).item() == doctest::Approx(1.0));
    CHECK(mse(o, o).item() == 0.0);
}

TEST_CASE("primitive_forward dispatcher") {
    Tensor a({2}, {1, 2}), b({2}, {3, 4});
    CHECK(primitive_forward(PrimOp::add, {a, b}).values() == add(a, b).values());
    CHECK(primitive_forward(PrimOp::scale, {a, Tensor::scalar(3.0)}).values() == scale(a, 3.0).values());
    CHECK(primitive_forward(PrimOp::mse, {a, b}).item() == mse(a, b).item());
    Tensor x = Tensor::full({4, 4, 1}, 1.0);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    CHECK(primitive_forward(PrimOp::conv2d_3x3_same, {x, k}).values() ==
          conv2d_3x3_same(x, k, Tensor::zeros({1})).values());
    CHECK_THROWS_AS(primitive_forward(PrimOp::add, {a}), std::invalid_argument);
}

TEST_CASE("backward: quadratic and mean gradients") {
    Tensor x({1}, {3.0}, true);
    Tape tape;
    {
        TapeScope sc(tape);
        Tensor loss = mse(x, Tensor::zeros({1}));
        backward(loss);
    }
    CHECK(x.grad()[0] == doctest::Approx(6.0));  // d/dx x^2

    Tensor y({4}, {1, 2, 3, 4}, true);
    Tape tape2;
    {
        TapeScope sc(tape2);
        backward(reduce_mean(y));
    }
    for (double g : y.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("backward accumulates across multiple uses") {
    // y = x + x, loss = mse(y, 0) with scalar x=3: dloss/dx = 2*y*2 = 24,
    // i.e. the sum of both branch gradients.
    Tensor x({1}, {3.0}, true);
    Tape tape;
    {
        TapeScope sc(tape);
        Tensor y    = add(x, x);
        Tensor loss = mse(y, Tensor::zeros({1}));
        backward(loss);
    }
    CHECK(x.grad()[0] == doctest::Approx(24.0));
}

TEST_CASE("backward preconditions") {
    Tensor x({2}, {1, 2}, true);
    Tape tape;
    TapeScope sc(tape);
    Tensor y = add(x, x);
    CHECK_THROWS_WITH_AS(backward(y), doctest::Contains("scalar"), std::invalid_argument);
    Tensor c = Tensor::scalar(1.0);
    CHECK_THROWS_AS(backward(c), std::invalid_argument);  // not on the tape
}

TEST_CASE("two-layer net gradients match central differences") {
    Rng rng(11);
    Tensor w1 = rand_uniform({6, 8}, rng, -1, 1);
    Tensor w2 = rand_uniform({8, 1}, rng, -1, 1);
    Tensor target = rand_uniform({1}, rng, -1, 1);
    auto net = [&](const Tensor& x) {
        return mse(matmul(silu(matmul(x, w1)), w2), target);
    };
    Tensor x = rand_uniform({6}, rng, -1, 1);
    CHECK(grad_check(net, x, 1e-5) < 1e-5);

    // and with respect to the weights
    Tensor xin = rand_uniform({6}, rng, -1, 1);
    auto by_w1 = [&](const Tensor& w) { return mse(matmul(silu(matmul(xin, w)), w2), target); };
    CHECK(grad_check(by_w1, w1, 1e-5) < 1e-5);
}

TEST_CASE("grad_check: exact on quadratics, tight on silu chains") {
    Rng rng(3);
    auto sum_sq = [](const Tensor& x) { return mse(x, Tensor::zeros(x.shape())); };
    Tensor x1   = rand_uniform({10}, rng, -1, 1);
    CHECK(grad_check(sum_sq, x1, 1e-5) < 1e-7);

    auto silu_chain = [](const Tensor& x) { return reduce_mean(silu(silu(x))); };
    Tensor x2       = rand_uniform({10}, rng, -1, 1);
    CHECK(grad_check(silu_chain, x2, 1e-5) < 1e-5);

    CHECK_THROWS_AS(grad_check(sum_sq, x1, 0.0), std::invalid_argument);
}

TEST_CASE("every primitive passes a finite-difference check") {
    Rng rng(19);
    const double tol = 1e-4, h = 1e-5;

    Tensor c2 = rand_uniform({6}, rng, -1, 1);
    auto f_add = [&](const Tensor& x) { return mse(add(x, c2), Tensor::zeros({6})); };
    auto f_sub = [&](const Tensor& x) { return mse(sub(x, c2), Tensor::zeros({6})); };
    auto f_mul = [&](const Tensor& x) { return mse(mul(x, c2), Tensor::zeros({6})); };
    auto f_scale = [&](const Tensor& x) { return reduce_mean(scale(x, -1.7)); };
    auto f_silu  = [&](const Tensor& x) { return reduce_mean(silu(x)); };
    CHECK(grad_check(f_add, rand_uniform({6}, rng, -1, 1), h) < tol);
    CHECK(grad_check(f_sub, rand_uniform({6}, rng, -1, 1), h) < tol);
    CHECK(grad_check(f_mul, rand_uniform({6}, rng, -1, 1), h) < tol);
    CHECK(grad_check(f_scale, rand_uniform({6}, rng, -1, 1), h) < tol);
    CHECK(grad_check(f_silu, rand_uniform({6}, rng, -1, 1), h) < tol);

    Tensor w = rand_uniform({6, 3}, rng, -1, 1);
    auto f_matmul_l = [&](const Tensor& x) { return reduce_mean(matmul(x, w)); };
    CHECK(grad_check(f_matmul_l, rand_uniform({2, 6}, rng, -1, 1), h) < tol);
    Tensor lhs = rand_uniform({2, 6}, rng, -1, 1);
    auto f_matmul_r = [&](const Tensor& ww) { return reduce_mean(matmul(lhs, ww)); };
    CHECK(grad_check(f_matmul_r, w, h) < tol);

    Tensor kk = rand_uniform({2, 2, 3, 3}, rng, -1, 1);
    Tensor bb = rand_uniform({2}, rng, -1, 1);
    auto f_conv_x = [&](const Tensor& x) { return reduce_mean(conv2d_3x3_same(x, kk, bb)); };
    CHECK(grad_check(f_conv_x, rand_uniform({4, 4, 2}, rng, -1, 1), h) < tol);
    Tensor xc = rand_uniform({4, 4, 2}, rng, -1, 1);
    auto f_conv_k = [&](const Tensor& k) { return reduce_mean(conv2d_3x3_same(xc, k, bb)); };
    CHECK(grad_check(f_conv_k, kk, h) < tol);
    auto f_conv_b = [&](const Tensor& b) { return reduce_mean(conv2d_3x3_same(xc, kk, b)); };
    CHECK(grad_check(f_conv_b, bb, h) < tol);

    auto f_mse = [&](const Tensor& x) { return mse(x, c2); };
    CHECK(grad_check(f_mse, rand_uniform({6}, rng, -1, 1), h) < tol);
}

TEST_CASE("forward passes are deterministic and finite") {
    Rng rng_a(23), rng_b(23);
    Tensor xa = randn({4, 4, 2}, rng_a), xb = randn({4, 4, 2}, rng_b);
    Tensor k = randn({3, 2, 3, 3}, rng_a), k2({3, 2, 3, 3}, k.values());
    Tensor b = Tensor::zeros({3});
    Tensor ya = silu(conv2d_3x3_same(xa, k, b));
    Tensor yb = silu(conv2d_3x3_same(xb, k2, b));
    CHECK(ya.values() == yb.values());
    CHECK(all_finite(ya));

    // gradients stay finite too
    xa.set_requires_grad(true);
    Tape tape;
    {
        TapeScope sc(tape);
        backward(reduce_mean(silu(conv2d_3x3_same(xa, k, b))));
    }
    for (double g : xa.grad()) CHECK(std::isfinite(g));
}
