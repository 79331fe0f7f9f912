#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "pavenet/tensor.hpp"

using namespace pavenet;
using gradcheck::max_rel_error;
using gradcheck::project_to_scalar;
using gradcheck::random_input;

TEST_CASE("conv1d with an identity kernel reproduces the input") {
    Tensor x = random_input({3, 9}, 1);
    Tensor w = Tensor::zeros({3, 3, 1});
    for (int c = 0; c < 3; ++c) w.values()[static_cast<size_t>(c) * 3 + c] = 1.0;
    Tensor b = Tensor::zeros({3});
    Tensor y = conv1d(x, w, b);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv1d hand example: all-ones 3-tap kernel") {
    Tensor x = Tensor::from({1, 3}, {1, 2, 3});
    Tensor w = Tensor::constant({1, 1, 3}, 1.0);
    Tensor b = Tensor::zeros({1});
    Tensor y = conv1d(x, w, b);
    CHECK(y.values() == std::vector<double>{3, 6, 5});
}

TEST_CASE("conv1d gradients match finite differences") {
    int case_id = 0;
    for (auto [c_in, c_out, L, k, dil] :
         {std::tuple{4, 3, 7, 3, 1}, std::tuple{2, 5, 9, 5, 1}, std::tuple{3, 2, 11, 3, 2}}) {
        Tensor x = random_input({c_in, L}, 100 + static_cast<uint64_t>(case_id));
        Tensor w = random_input({c_out, c_in, k}, 200 + static_cast<uint64_t>(case_id));
        Tensor b = random_input({c_out}, 300 + static_cast<uint64_t>(case_id));
        auto forward = [&] { return project_to_scalar(conv1d(x, w, b, dil)); };
        CHECK(max_rel_error({&x, &w, &b}, forward) < 1e-4);
        ++case_id;
    }
}

TEST_CASE("maxpool1d values, tie handling and gradient routing") {
    Tensor x = Tensor::from({1, 3}, {1, 3, 2});
    MaxPoolResult mp = maxpool1d(x, 2);
    CHECK(mp.values.values() == std::vector<double>{3, 3});
    CHECK(mp.indices == std::vector<int>{1, 1});

    Tensor flat = Tensor::constant({2, 5}, 4.0);
    MaxPoolResult tied = maxpool1d(flat, 3);
    for (int c = 0; c < 2; ++c)
        for (int j = 0; j < 3; ++j)
            CHECK(tied.indices[static_cast<size_t>(c) * 3 + j] == j);  // ties pick the window start

    for (uint64_t seed : {42u, 43u, 44u}) {
        Tensor r = random_input({3, 8}, seed);
        auto forward = [&] { return project_to_scalar(maxpool1d(r, 3).values); };
        CHECK(max_rel_error({&r}, forward) < 1e-4);
    }
}

TEST_CASE("lstm collapses to zero with zero parameters") {
    Tensor x = random_input({3, 6}, 7);
    Tensor wx = Tensor::zeros({8, 3});
    Tensor wh = Tensor::zeros({8, 2});
    Tensor b = Tensor::zeros({8});
    Tensor h = lstm(x, wx, wh, b);
    for (double v : h.values()) CHECK(v == 0.0);
}

TEST_CASE("lstm single step matches hand-evaluated gate algebra") {
    // C = 2 inputs, H = 2 units, L = 1: h = sigmoid(o) * tanh(sigmoid(i) * tanh(g))
    Tensor x = Tensor::from({2, 1}, {0.5, -0.3});
    Tensor wx = random_input({8, 2}, 11);
    Tensor wh = random_input({8, 2}, 12);
    Tensor b = random_input({8}, 13);
    Tensor h = lstm(x, wx, wh, b);

    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (int unit = 0; unit < 2; ++unit) {
        auto pre = [&](int gate) {
            const int row = gate * 2 + unit;
            return wx.at(row, 0) * 0.5 + wx.at(row, 1) * -0.3 + b.data()[row];
        };
        const double i_g = sig(pre(0));
        const double f_g = sig(pre(1));
        (void)f_g;  // no previous cell state at t = 0
        const double g_g = std::tanh(pre(2));
        const double o_g = sig(pre(3));
        const double expect = o_g * std::tanh(i_g * g_g);
        CHECK(h.at(unit, 0) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("lstm gradients match finite differences") {
    for (uint64_t seed : {21u, 22u, 23u}) {
        Tensor x = random_input({3, 5}, seed);
        Tensor wx = random_input({8, 3}, seed + 50);
        Tensor wh = random_input({8, 2}, seed + 60);
        Tensor b = random_input({8}, seed + 70);
        auto forward = [&] { return project_to_scalar(lstm(x, wx, wh, b)); };
        CHECK(max_rel_error({&x, &wx, &wh, &b}, forward) < 1e-4);
    }
}

TEST_CASE("softmax of a constant vector is uniform and rows sum to one") {
    Tensor flat = Tensor::constant({6}, 3.2);
    Tensor y = softmax(flat);
    for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

    Tensor m = random_input({3, 7}, 5);
    Tensor rows = softmax(m, 1);
    for (int r = 0; r < 3; ++r) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c) s += rows.at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor cols = softmax(m, 0);
    for (int c = 0; c < 7; ++c) {
        double s = 0.0;
        for (int r = 0; r < 3; ++r) s += cols.at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax gradients match finite differences on both axes") {
    for (uint64_t seed : {31u, 32u, 33u}) {
        Tensor m = random_input({4, 5}, seed);
        auto fwd_rows = [&] { return project_to_scalar(softmax(m, 1)); };
        CHECK(max_rel_error({&m}, fwd_rows) < 1e-4);
        auto fwd_cols = [&] { return project_to_scalar(softmax(m, 0)); };
        CHECK(max_rel_error({&m}, fwd_cols) < 1e-4);
    }
}

TEST_CASE("mean and population std match hand values") {
    Tensor x = Tensor::from({4}, {1, 2, 3, 4});
    CHECK(mean_all(x).value() == doctest::Approx(2.5));
    CHECK(std_all(x).value() == doctest::Approx(std::sqrt(1.25)));
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
    for (uint64_t seed : {61u, 62u, 63u}) {
        Tensor a = random_input({3, 4}, seed, -1.0, 1.0, 0.05);
        Tensor b = random_input({3, 4}, seed + 10, -1.0, 1.0, 0.05);
        CHECK(max_rel_error({&a, &b}, [&] { return project_to_scalar(add(a, b)); }) < 1e-4);
        CHECK(max_rel_error({&a, &b}, [&] { return project_to_scalar(sub(a, b)); }) < 1e-4);
        CHECK(max_rel_error({&a, &b}, [&] { return project_to_scalar(mul(a, b)); }) < 1e-4);
        CHECK(max_rel_error({&a}, [&] { return project_to_scalar(relu(a)); }) < 1e-4);
        CHECK(max_rel_error({&a}, [&] { return project_to_scalar(sigmoid(a)); }) < 1e-4);
        CHECK(max_rel_error({&a}, [&] { return project_to_scalar(tanh_op(a)); }) < 1e-4);
        CHECK(max_rel_error({&a}, [&] { return project_to_scalar(scalar_affine(a, 1.7, -0.4)); }) <
              1e-4);
        CHECK(max_rel_error({&a}, [&] { return mean_all(a); }) < 1e-4);
        CHECK(max_rel_error({&a}, [&] { return std_all(a); }) < 1e-4);
        CHECK(max_rel_error({&a}, [&] { return sum_all(a); }) < 1e-4);
        CHECK(max_rel_error({&a, &b}, [&] { return dot(flatten(a), flatten(b)); }) < 1e-4);

        Tensor pos = random_input({6}, seed + 20, 0.2, 2.0);
        CHECK(max_rel_error({&pos}, [&] { return project_to_scalar(log_op(pos)); }) < 1e-4);
        CHECK(max_rel_error({&pos}, [&] { return project_to_scalar(sqrt_eps(pos)); }) < 1e-4);
    }
}

TEST_CASE("matrix ops match finite differences") {
    for (uint64_t seed : {71u, 72u, 73u}) {
        Tensor a = random_input({3, 4}, seed);
        Tensor b = random_input({4, 5}, seed + 1);
        CHECK(max_rel_error({&a, &b}, [&] { return project_to_scalar(matmul(a, b)); }) < 1e-4);

        Tensor c = random_input({6, 4}, seed + 2);
        CHECK(max_rel_error({&a, &c}, [&] { return project_to_scalar(matmul_bt(a, c)); }) < 1e-4);

        Tensor w = random_input({3, 5}, seed + 3);
        Tensor x = random_input({5}, seed + 4);
        Tensor bias = random_input({3}, seed + 5);
        CHECK(max_rel_error({&w, &x, &bias}, [&] {
                  return project_to_scalar(linear(w, x, bias));
              }) < 1e-4);

        Tensor rb = random_input({3}, seed + 6);
        CHECK(max_rel_error({&a, &rb}, [&] { return project_to_scalar(add_row_bias(a, rb)); }) <
              1e-4);
    }
}

TEST_CASE("shape ops route gradients correctly") {
    for (uint64_t seed : {81u, 82u, 83u}) {
        Tensor a = random_input({2, 3}, seed);
        Tensor b = random_input({4, 3}, seed + 1);
        Tensor c = random_input({2, 5}, seed + 2);
        CHECK(max_rel_error({&a, &b}, [&] { return project_to_scalar(concat({a, b}, 0)); }) <
              1e-4);
        CHECK(max_rel_error({&a, &c}, [&] { return project_to_scalar(concat({a, c}, 1)); }) <
              1e-4);
        Tensor big = random_input({6, 7}, seed + 3);
        CHECK(max_rel_error({&big}, [&] { return project_to_scalar(slice_rows(big, 1, 4)); }) <
              1e-4);
        CHECK(max_rel_error({&big}, [&] { return project_to_scalar(slice_cols(big, 2, 6)); }) <
              1e-4);
        CHECK(max_rel_error({&big}, [&] { return project_to_scalar(reshape(big, {7, 6})); }) <
              1e-4);
    }

    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor y = Tensor::from({2, 2}, {5, 6, 7, 8});
    Tensor cat = concat({x, y}, 1);
    CHECK(cat.values() == std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8});
}

TEST_CASE("sequence helpers match finite differences") {
    for (uint64_t seed : {91u, 92u, 93u}) {
        Tensor x = random_input({4, 6}, seed);
        Tensor ch = random_input({4}, seed + 1);
        Tensor s = random_input({1}, seed + 2, 0.5, 2.0);
        CHECK(max_rel_error({&x}, [&] { return project_to_scalar(time_mean(x)); }) < 1e-4);
        CHECK(max_rel_error({&x, &ch}, [&] { return project_to_scalar(mul_channels(x, ch)); }) <
              1e-4);
        CHECK(max_rel_error({&x, &s}, [&] { return project_to_scalar(sub_bcast(x, s)); }) < 1e-4);
        CHECK(max_rel_error({&x, &s}, [&] { return project_to_scalar(div_bcast(x, s)); }) < 1e-4);

        std::vector<double> mask(6);
        SplitMix64 g(seed + 3);
        for (double& m : mask) m = g.uniform(0.1, 1.0);
        CHECK(max_rel_error({&x}, [&] { return project_to_scalar(mul_time_mask(x, mask)); }) <
              1e-4);

        Tensor s1 = random_input({1}, seed + 4);
        Tensor s2 = random_input({1}, seed + 5);
        Tensor s3 = random_input({1}, seed + 6);
        CHECK(max_rel_error({&s1, &s2, &s3}, [&] {
                  return logsumexp({s1, s2, s3});
              }) < 1e-4);
    }
}

TEST_CASE("batchnorm1d train and eval modes") {
    Tensor x = random_input({3, 10}, 111);
    Tensor gamma = random_input({3}, 112, 0.5, 1.5);
    Tensor beta = random_input({3}, 113);

    SUBCASE("training normalizes with batch statistics") {
        BnState state(3);
        Tensor y = batchnorm1d(x, gamma, beta, state, /*training=*/true);
        for (int c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (int t = 0; t < 10; ++t) mean += y.at(c, t);
            mean /= 10.0;
            CHECK(mean == doctest::Approx(beta.data()[c]).epsilon(1e-9));
        }
        // running stats moved toward the batch stats
        CHECK(state.running_mean[0] != 0.0);
        CHECK(state.running_var[0] != 1.0);
    }

    SUBCASE("eval uses the running statistics unchanged") {
        BnState state(3);
        state.running_mean = {0.2, -0.1, 0.4};
        state.running_var = {1.5, 0.8, 2.0};
        const auto saved_mean = state.running_mean;
        Tensor y = batchnorm1d(x, gamma, beta, state, /*training=*/false);
        CHECK(state.running_mean == saved_mean);
        const double expect =
            (x.at(1, 3) - -0.1) / std::sqrt(0.8 + 1e-5) * gamma.data()[1] + beta.data()[1];
        CHECK(y.at(1, 3) == doctest::Approx(expect).epsilon(1e-12));
    }

    SUBCASE("gradients match finite differences in both modes") {
        for (uint64_t seed : {121u, 122u, 123u}) {
            Tensor xx = random_input({3, 8}, seed);
            Tensor gg = random_input({3}, seed + 1, 0.5, 1.5);
            Tensor bb = random_input({3}, seed + 2);
            BnState st(3);
            auto fwd_train = [&] {
                return project_to_scalar(batchnorm1d(xx, gg, bb, st, true));
            };
            CHECK(max_rel_error({&xx, &gg, &bb}, fwd_train) < 1e-4);
            auto fwd_eval = [&] {
                return project_to_scalar(batchnorm1d(xx, gg, bb, st, false));
            };
            CHECK(max_rel_error({&xx, &gg, &bb}, fwd_eval) < 1e-4);
        }
    }
}

TEST_CASE("backward seeds, accumulates and enforces the single-use contract") {
    SUBCASE("sum gives unit gradients") {
        Tensor p = random_input({5}, 400);
        Tensor loss = sum_all(p);
        backward(loss);
        for (double g : p.grad()) CHECK(g == 1.0);
    }
    SUBCASE("sum of squares") {
        Tensor p = Tensor::from({2}, {1, 2});
        p.impl->requires_grad = true;
        Tensor loss = sum_all(mul(p, p));
        backward(loss);
        CHECK(p.grad()[0] == doctest::Approx(2.0));
        CHECK(p.grad()[1] == doctest::Approx(4.0));
    }
    SUBCASE("double backward throws") {
        Tensor p = random_input({3}, 401);
        Tensor loss = sum_all(p);
        backward(loss);
        CHECK_THROWS_AS(backward(loss), GraphConsumedError);
    }
    SUBCASE("non-scalar loss throws") {
        Tensor p = random_input({3}, 402);
        CHECK_THROWS_AS(backward(p), NotScalarError);
    }
    SUBCASE("no_grad suppresses graph construction") {
        Tensor p = random_input({3}, 403);
        NoGradGuard ng;
        Tensor y = sum_all(p);
        CHECK_FALSE(y.requires_grad());
    }
}

TEST_CASE("shape errors are reported") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(maxpool1d(a, 4), ShapeError);
    Tensor w = Tensor::zeros({2, 2, 2});
    CHECK_THROWS_AS(conv1d(a, w, Tensor::zeros({2})), ShapeError);
}
