#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"

#include "colearn/autograd/gradcheck.hpp"
#include "colearn/autograd/kernels.hpp"
#include "colearn/autograd/ops.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace colearn::ag;

using gen::random_tensor;

TEST_CASE("conv3d identity and summation") {
    auto ones = tensor::full({1, 1, 3, 3, 3}, 1.0);
    auto id = conv3d(ones, tensor::full({1, 1, 1, 1, 1}, 1.0), tensor::zeros({1}), 1, 0);
    CHECK(id.shape() == shape_t{1, 1, 3, 3, 3});
    for (real v : id.data()) CHECK(v == 1.0);

    auto full = conv3d(ones, tensor::full({1, 1, 3, 3, 3}, 1.0), tensor::zeros({1}), 1, 0);
    CHECK(full.shape() == shape_t{1, 1, 1, 1, 1});
    CHECK(full.item() == doctest::Approx(27.0));
}

TEST_CASE("conv3d rejects channel mismatch and even kernels") {
    auto x = tensor::zeros({1, 2, 4, 4, 4});
    CHECK_THROWS_AS(conv3d(x, tensor::zeros({1, 3, 3, 3, 3}), tensor{}, 1, 1), shape_error);
    CHECK_THROWS_AS(conv3d(x, tensor::zeros({1, 2, 2, 2, 2}), tensor{}, 1, 0), shape_error);
}

TEST_CASE("conv3d matches nested loops on random 2x2x5x5x5") {
    std::mt19937_64 rng(7);
    auto x = random_tensor({2, 2, 5, 5, 5}, rng, false);
    auto k = random_tensor({3, 2, 3, 3, 3}, rng, false);
    auto b = random_tensor({3}, rng, false);
    for (std::size_t stride : {1u, 2u}) {
        for (std::size_t pad : {0u, 1u}) {
            auto y = conv3d(x, k, b, stride, pad);
            auto ref = oracle::conv3d_loops(x.data(), x.shape(), k.data(), k.shape(), b.data(), stride, pad);
            REQUIRE(ref.size() == y.size());
            for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(ref[i] - y[i]) <= 1e-10);
        }
    }
}

TEST_CASE("library reference conv agrees with the parallel path") {
    std::mt19937_64 rng(3);
    auto x = random_tensor({2, 3, 6, 5, 4}, rng, false);
    auto k = random_tensor({4, 3, 3, 3, 3}, rng, false);
    auto b = random_tensor({4}, rng, false);
    auto g = kernels::make_conv3d_geometry(x.shape(), k.shape(), 1, 1);
    std::vector<real> fast(g.batch * g.out_channels * g.out_plane()), slow(fast.size());
    kernels::conv3d_forward(g, x.data(), k.data(), b.data(), fast);
    kernels::reference::conv3d_forward(g, x.data(), k.data(), b.data(), slow);
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(std::abs(fast[i] - slow[i]) <= 1e-12);
}

TEST_CASE("maxpool3d") {
    SUBCASE("enumeration of 1..8") {
        std::vector<real> v(8);
        std::iota(v.begin(), v.end(), 1.0);
        auto r = maxpool3d(tensor::from({1, 1, 2, 2, 2}, v), 2, 2);
        CHECK(r.output.item() == 8.0);
        CHECK(r.argmax[0] == 7);
    }
    SUBCASE("constant volume routes gradient to first index") {
        auto x = tensor::full({1, 1, 4, 4, 4}, 3.0, true);
        auto r = maxpool3d(x, 2, 2);
        for (real v : r.output.data()) CHECK(v == 3.0);
        backward(sum(r.output));
        // First index of each 2x2x2 window: even z, y, x.
        for (std::size_t z = 0; z < 4; ++z)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t xx = 0; xx < 4; ++xx) {
                    const bool first = z % 2 == 0 && y % 2 == 0 && xx % 2 == 0;
                    CHECK(x.grad()[(z * 4 + y) * 4 + xx] == (first ? 1.0 : 0.0));
                }
    }
    SUBCASE("window 1 is identity") {
        std::mt19937_64 rng(1);
        auto x = random_tensor({2, 2, 3, 3, 3}, rng, false);
        auto r = maxpool3d(x, 1, 1);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(r.output[i] == x[i]);
    }
    SUBCASE("window larger than volume") {
        CHECK_THROWS_AS(maxpool3d(tensor::zeros({1, 1, 2, 2, 2}), 3, 1), shape_error);
    }
}

TEST_CASE("batchnorm") {
    std::mt19937_64 rng(11);
    SUBCASE("standardized input is a fixed point") {
        // Per channel: values {-1, 1} repeated => mean 0, biased variance 1.
        std::vector<real> v;
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c)
                for (int s = 0; s < 4; ++s) v.push_back((s + b) % 2 ? 1.0 : -1.0);
        auto x = tensor::from({2, 2, 4}, v);
        auto st = running_stats::init(2);
        auto y = batchnorm(x, tensor::full({2}, 1.0), tensor::zeros({2}), st, mode::train);
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(y[i] - v[i]) <= 1e-4);
    }
    SUBCASE("gamma zero gives beta") {
        auto x = random_tensor({3, 2, 2, 2, 2}, rng);
        auto st = running_stats::init(2);
        auto y = batchnorm(x, tensor::zeros({2}), tensor::from({2}, {0.5, -2.0}), st, mode::train);
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t c = 0; c < 2; ++c)
                for (std::size_t s = 0; s < 8; ++s) CHECK(y[(b * 2 + c) * 8 + s] == (c == 0 ? 0.5 : -2.0));
    }
    SUBCASE("random batch normalizes per channel") {
        auto x = random_tensor({4, 3, 5}, rng, false, -3.0, 7.0);
        auto st = running_stats::init(3);
        auto y = batchnorm(x, tensor::full({3}, 1.0), tensor::zeros({3}), st, mode::train);
        for (std::size_t c = 0; c < 3; ++c) {
            real m = 0, m2 = 0;
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t s = 0; s < 5; ++s) m += y[(b * 3 + c) * 5 + s];
            m /= 20;
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t s = 0; s < 5; ++s) m2 += std::pow(y[(b * 3 + c) * 5 + s] - m, 2);
            m2 /= 20;
            CHECK(std::abs(m) <= 1e-6);
            // eps = 1e-5 shrinks the variance by var/(var+eps); recompute with it.
            real raw_m = 0, raw_v = 0;
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t s = 0; s < 5; ++s) raw_m += x[(b * 3 + c) * 5 + s];
            raw_m /= 20;
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t s = 0; s < 5; ++s) raw_v += std::pow(x[(b * 3 + c) * 5 + s] - raw_m, 2);
            raw_v /= 20;
            CHECK(std::abs(m2 - raw_v / (raw_v + 1e-5)) <= 1e-6);
            CHECK(std::abs(m2 - 1.0) <= 1e-5);
        }
    }
    SUBCASE("running stats update with momentum 0.1 and eval uses them") {
        auto x = tensor::from({2, 1}, {1.0, 3.0});
        auto st = running_stats::init(1);
        batchnorm(x, tensor::full({1}, 1.0), tensor::zeros({1}), st, mode::train);
        CHECK(st.mean[0] == doctest::Approx(0.2));             // 0.9*0 + 0.1*2
        CHECK(st.var[0] == doctest::Approx(0.9 + 0.1 * 2.0));  // unbiased var of {1,3} is 2
        auto y = batchnorm(tensor::from({1, 1}, {0.2}), tensor::full({1}, 1.0), tensor::zeros({1}), st, mode::eval);
        CHECK(y.item() == doctest::Approx(0.0));
    }
    SUBCASE("single-item batch rejected in train mode") {
        auto st = running_stats::init(1);
        CHECK_THROWS_AS(batchnorm(tensor::zeros({1, 1, 4}), tensor::full({1}, 1.0), tensor::zeros({1}), st, mode::train),
                        shape_error);
    }
}

TEST_CASE("scatter_sum") {
    auto empty = scatter_sum(tensor::zeros({0, 2}), {}, 3);
    CHECK(empty.shape() == shape_t{3, 2});
    for (real v : empty.data()) CHECK(v == 0.0);

    std::vector<std::size_t> t{0, 0, 1};
    auto s = scatter_sum(tensor::from({3, 1}, {1, 2, 3}), t, 2);
    CHECK(s[0] == 3.0);
    CHECK(s[1] == 3.0);

    std::vector<std::size_t> perm{2, 0, 1};
    auto v = tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    auto p = scatter_sum(v, perm, 3);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 2; ++c) CHECK(p[perm[r] * 2 + c] == v[r * 2 + c]);

    std::vector<std::size_t> bad{0, 5};
    CHECK_THROWS_AS(scatter_sum(tensor::zeros({2, 1}), bad, 3), shape_error);
}

TEST_CASE("scatter_sum backward is the gather adjoint") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> pick(0, 6);
    std::vector<std::size_t> targets(20);
    for (auto& t : targets) t = pick(rng);
    auto v = random_tensor({20, 3}, rng);
    auto upstream = random_tensor({7, 3}, rng, false);
    backward(sum(mul(scatter_sum(v, targets, 7), upstream)));
    for (std::size_t r = 0; r < 20; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(v.grad()[r * 3 + c] == upstream[targets[r] * 3 + c]);
}

TEST_CASE("activations") {
    auto r = relu(tensor::from({2}, {-1.0, 2.0}));
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 2.0);
    CHECK(sigmoid(tensor::scalar(0.0)).item() == 0.5);
    auto ls = log_softmax(tensor::from({1, 2}, {3.7, 3.7}), 1);
    CHECK(ls[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
    CHECK(ls[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
    auto big = log_softmax(tensor::from({1, 2}, {1000.0, 0.0}), 1);
    CHECK(std::isfinite(big[1]));
}

TEST_CASE("linear") {
    auto x = tensor::from({1, 2}, {1.0, 2.0});
    auto id = linear(x, tensor::from({2, 2}, {1, 0, 0, 1}), tensor::zeros({2}));
    CHECK(id[0] == 1.0);
    CHECK(id[1] == 2.0);
    CHECK(linear(x, tensor::from({1, 2}, {1, 1}), tensor::from({1}, {1})).item() == 4.0);
    auto z = linear(tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}), tensor::zeros({2, 2}), tensor::from({2}, {7, -7}));
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(z[r * 2] == 7.0);
        CHECK(z[r * 2 + 1] == -7.0);
    }
    CHECK_THROWS_AS(linear(x, tensor::zeros({2, 3}), tensor{}), shape_error);
}

TEST_CASE("dropout") {
    rng_t rng(9);
    auto x = tensor::from({4}, {1, 2, 3, 4});
    auto same = dropout(x, 0.0, mode::train, rng);
    for (std::size_t i = 0; i < 4; ++i) CHECK(same[i] == x[i]);
    auto ev = dropout(x, 0.7, mode::eval, rng);
    for (std::size_t i = 0; i < 4; ++i) CHECK(ev[i] == x[i]);
    CHECK_THROWS(dropout(x, 1.0, mode::train, rng));

    // Monte Carlo: E[dropout(x)] = x.
    std::vector<real> acc(4, 0.0);
    for (int t = 0; t < 10000; ++t) {
        auto y = dropout(x, 0.3, mode::train, rng);
        for (std::size_t i = 0; i < 4; ++i) acc[i] += y[i];
    }
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(acc[i] / 10000.0 - x[i]) <= 0.02 * x[i]);
}

TEST_CASE("backward basics") {
    auto x = tensor::from({2}, {1.0, 2.0}, true);
    backward(sum(x));
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 1.0);

    auto y = tensor::from({2}, {1.0, 2.0}, true);
    backward(sum(mul(y, y)));
    CHECK(y.grad()[0] == 2.0);
    CHECK(y.grad()[1] == 4.0);
    // Repeated calls accumulate into leaves.
    backward(sum(mul(y, y)));
    CHECK(y.grad()[1] == 8.0);

    auto frozen = tensor::from({2}, {1.0, 2.0}, false);
    auto w = tensor::from({2}, {3.0, 4.0}, true);
    backward(sum(mul(frozen, w)));
    CHECK_FALSE(frozen.has_grad());

    CHECK_THROWS_AS(backward(w), shape_error);
}

TEST_CASE("tensor consumed twice sums both contributions") {
    // f(x) = sum(x) * sum(x) => df/dx_i = 2 sum(x)
    auto x = tensor::from({3}, {0.5, -1.0, 2.0}, true);
    auto s = sum(x);
    backward(mul(s, s));
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * 1.5));
}

TEST_CASE("finite differences on every primitive") {
    std::mt19937_64 rng(2024);
    auto check = [](real err, real tol) { CHECK(err <= tol); };

    check(finite_difference_check([](const tensor& x) { return sum(x); }, random_tensor({5}, rng)), 1e-10);

    auto k = random_tensor({2, 2, 3, 3, 3}, rng);
    auto b = random_tensor({2}, rng);
    auto xin = random_tensor({2, 2, 4, 4, 4}, rng);
    auto upstream = random_tensor({2, 2, 4, 4, 4}, rng, false);
    auto conv_rep = finite_difference_check([&] { return sum(mul(conv3d(xin, k, b, 1, 1), upstream)); }, {xin, k, b});
    check(conv_rep.max_relative_error, 1e-6);
    auto strided = finite_difference_check(
        [&] { return sum(conv3d(xin, k, b, 2, 0)); }, {xin, k, b});
    check(strided.max_relative_error, 1e-6);

    // Distinct values keep max away from ties.
    std::vector<real> vals(2 * 4 * 4 * 4);
    std::iota(vals.begin(), vals.end(), 0.0);
    std::shuffle(vals.begin(), vals.end(), rng);
    for (auto& v : vals) v *= 0.01;
    auto pin = tensor::from({1, 2, 4, 4, 4}, vals, true);
    auto pw = random_tensor({1, 2, 2, 2, 2}, rng, false);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(maxpool3d(x, 2, 2).output, pw)); }, pin, 1e-4), 1e-4);

    auto bnx = random_tensor({3, 2, 2, 2, 2}, rng);
    auto gamma = random_tensor({2}, rng);
    auto beta = random_tensor({2}, rng);
    auto bnw = random_tensor({3, 2, 2, 2, 2}, rng, false);
    auto st = running_stats::init(2);
    check(finite_difference_check([&] { return sum(mul(batchnorm(bnx, gamma, beta, st, mode::train), bnw)); },
                                  {bnx, gamma, beta}).max_relative_error, 1e-6);
    check(finite_difference_check([&] { return sum(mul(batchnorm(bnx, gamma, beta, st, mode::eval), bnw)); },
                                  {bnx, gamma, beta}).max_relative_error, 1e-6);

    auto li = random_tensor({3, 4}, rng), lw = random_tensor({2, 4}, rng), lb = random_tensor({2}, rng);
    auto lu = random_tensor({3, 2}, rng, false);
    check(finite_difference_check([&] { return sum(mul(linear(li, lw, lb), lu)); }, {li, lw, lb}).max_relative_error, 1e-6);

    auto ri = random_tensor({10}, rng);
    nudge_off_kinks(ri);
    auto ru = random_tensor({10}, rng, false);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(relu(x), ru)); }, ri), 1e-4);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(sigmoid(x), ru)); }, random_tensor({10}, rng)), 1e-6);
    auto su = random_tensor({2, 5}, rng, false);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(log_softmax(x, 1), su)); }, random_tensor({2, 5}, rng)), 1e-6);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(log_softmax(x, 0), su)); }, random_tensor({2, 5}, rng)), 1e-6);

    std::vector<std::size_t> tg{0, 2, 2, 1, 0};
    auto sv = random_tensor({5, 3}, rng);
    auto sw = random_tensor({3, 3}, rng, false);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(scatter_sum(x, tg, 3), sw)); }, sv), 1e-6);

    auto dx = random_tensor({12}, rng);
    auto du = random_tensor({12}, rng, false);
    check(finite_difference_check([&](const tensor& x) {
              rng_t local(42); // same mask on every evaluation
              return sum(mul(dropout(x, 0.4, mode::train, local), du));
          }, dx), 1e-6);

    auto a = random_tensor({6}, rng), c = random_tensor({6}, rng);
    check(finite_difference_check([&] { return sum(mul(add(a, c), sub(a, c))); }, {a, c}).max_relative_error, 1e-6);
    check(finite_difference_check([&] { return mul(mean(a), sum(scale(c, 3.0))); }, {a, c}).max_relative_error, 1e-6);
    auto cu = random_tensor({2, 5}, rng, false);
    auto c1 = random_tensor({2, 2}, rng), c2 = random_tensor({2, 3}, rng);
    check(finite_difference_check([&] { return sum(mul(concat({c1, c2}, 1), cu)); }, {c1, c2}).max_relative_error, 1e-6);
    std::vector<std::size_t> rows{3, 0, 3};
    auto isx = random_tensor({4, 2}, rng);
    auto isw = random_tensor({3, 2}, rng, false);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(index_select(x, rows), isw)); }, isx), 1e-6);

    auto pos = random_tensor({6}, rng, true, 0.5, 2.0);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(log(x), exp(x))); }, pos), 1e-6);
    auto cl = random_tensor({8}, rng, true, -2.0, 2.0);
    for (auto& v : cl.data()) if (std::abs(std::abs(v) - 1.0) < 1e-3) v += 0.01;
    auto clu = random_tensor({8}, rng, false);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(clamp(x, -1.0, 1.0), clu)); }, cl), 1e-4);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(reshape(x, {3, 2}), isw)); }, random_tensor({6}, rng)), 1e-6);

    std::vector<std::size_t> offs{0, 3, 7};
    auto smx = random_tensor({7, 2}, rng);
    auto smw = random_tensor({2, 2}, rng, false);
    check(finite_difference_check([&](const tensor& x) { return sum(mul(segment_max(x, offs), smw)); }, smx), 1e-4);

    auto ex = random_tensor({4, 3}, rng), em = random_tensor({4, 6}, rng);
    auto eu = random_tensor({4, 2}, rng, false);
    check(finite_difference_check([&] { return sum(mul(edge_matvec(ex, em, 2), eu)); }, {ex, em}).max_relative_error, 1e-6);
    auto rw = random_tensor({4}, rng);
    auto rsu = random_tensor({4, 3}, rng, false);
    check(finite_difference_check([&] { return sum(mul(row_scale(ex, rw), rsu)); }, {ex, rw}).max_relative_error, 1e-6);
}
