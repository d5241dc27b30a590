#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "../support/gradcheck.hpp"
#include "cf3d/checkpoint.hpp"
#include "cf3d/errors.hpp"
#include "cf3d/nn.hpp"
#include "cf3d/ops.hpp"
#include "cf3d/optim.hpp"

using namespace cf3d;
using namespace cf3d::ad;
using cf3d::testing::grad_check;
using cf3d::testing::project;
using cf3d::testing::random_tensor;

TEST_CASE("conv2d forward") {
    SUBCASE("1x1 identity kernel leaves input unchanged") {
        Rng rng(3);
        auto x = random_tensor(rng, {2, 5, 4, 3}, -1, 1, 0, false);
        std::vector<double> k(9, 0.0);
        for (int c = 0; c < 3; ++c) k[c * 3 + c] = 1.0;
        auto y = conv2d(x, Tensor::from({1, 1, 3, 3}, k), 1, Padding::Same);
        CHECK(y.shape() == x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
    }
    SUBCASE("all-ones 3x3 valid on all-ones input sums to 9") {
        auto y = conv2d(Tensor::full({1, 3, 3, 1}, 1.0), Tensor::full({3, 3, 1, 1}, 1.0), 1, Padding::Valid);
        CHECK(y.shape() == Shape{1, 1, 1, 1});
        CHECK(y.item() == 9.0);
    }
    SUBCASE("same padding output is ceil(h/stride)") {
        auto y = conv2d(Tensor::zeros({1, 7, 9, 2}), Tensor::zeros({3, 3, 2, 4}), 2, Padding::Same);
        CHECK(y.shape() == Shape{1, 4, 5, 4});
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 4, 4, 2}), Tensor::zeros({3, 3, 3, 1}), 1, Padding::Same), ShapeError);
        CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 2, 1}), Tensor::zeros({3, 3, 1, 1}), 1, Padding::Valid), ShapeError);
        CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 4, 4, 1}), Tensor::zeros({3, 3, 1, 1}), 0, Padding::Same), ConfigError);
    }
}

TEST_CASE("conv_transpose2d is the adjoint of a same-padded strided conv2d") {
    Rng rng(11);
    auto x = random_tensor(rng, {2, 8, 8, 3}, -1, 1, 0, false);   // big
    auto y = random_tensor(rng, {2, 4, 4, 5}, -1, 1, 0, false);   // small
    auto k = random_tensor(rng, {3, 3, 3, 5}, -1, 1, 0, false);
    // <conv(x), y> == <x, convT(y)>
    const double lhs = sum(hadamard(conv2d(x, k, 2, Padding::Same), y)).item();
    const double rhs = sum(hadamard(x, conv_transpose2d(y, k, Tensor{}, 2))).item();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("dense") {
    auto y = dense(Tensor::from({2}, {1, 2}), Tensor::from({2, 1}, {1, 1}), Tensor::from({1}, {0.5}));
    CHECK(y.shape() == Shape{1});
    CHECK(y.item() == 3.5);
    auto eye = dense(Tensor::from({3}, {4, 5, 6}), Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor::zeros({3}));
    CHECK(eye[0] == 4.0);
    CHECK(eye[2] == 6.0);
    CHECK_THROWS_AS(dense(Tensor::zeros({3}), Tensor::zeros({2, 1}), Tensor::zeros({1})), ShapeError);
}

TEST_CASE("activations") {
    auto r = relu(Tensor::from({3}, {-1, 0, 2}));
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
    CHECK(r[2] == 2.0);
    auto x = Tensor::scalar(0.0, true);
    auto s = sigmoid(x);
    CHECK(s.item() == 0.5);
    backward(s);
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
    auto big = sigmoid(Tensor::from({2}, {-800.0, 800.0}));
    CHECK(std::isfinite(big[0]));
    CHECK(big[1] == 1.0);
}

TEST_CASE("batchnorm2d") {
    Rng rng(5);
    SUBCASE("train mode normalises each channel to shift/scale") {
        auto x = random_tensor(rng, {4, 3, 3, 2}, -3, 5, 0, false);
        auto gamma = Tensor::from({2}, {2.0, 0.5});
        auto beta = Tensor::from({2}, {-1.0, 3.0});
        auto rm = Tensor::zeros({2});
        auto rv = Tensor::full({2}, 1.0);
        auto y = batchnorm2d(x, gamma, beta, rm, rv, Mode::Train);
        for (std::size_t c = 0; c < 2; ++c) {
            double m = 0, v = 0;
            const std::size_t n = 36;
            for (std::size_t r = 0; r < n; ++r) m += y[r * 2 + c];
            m /= n;
            for (std::size_t r = 0; r < n; ++r) v += (y[r * 2 + c] - m) * (y[r * 2 + c] - m);
            v /= n;
            CHECK(m == doctest::Approx(beta[c]).epsilon(1e-9));
            CHECK(v == doctest::Approx(gamma[c] * gamma[c]).epsilon(1e-4));  // eps-corrected
        }
        CHECK(rm[0] != 0.0);  // running stats moved
    }
    SUBCASE("constant channel maps to the shift") {
        auto rm = Tensor::zeros({1});
        auto rv = Tensor::full({1}, 1.0);
        auto y = batchnorm2d(Tensor::full({2, 2, 2, 1}, 7.0), Tensor::full({1}, 3.0), Tensor::full({1}, 0.25), rm, rv,
                             Mode::Train);
        for (double v : y.data()) CHECK(v == 0.25);
    }
    SUBCASE("eval mode leaves running stats alone") {
        auto rm = Tensor::from({1}, {0.3});
        auto rv = Tensor::from({1}, {2.0});
        auto y = batchnorm2d(Tensor::full({1, 1, 1, 1}, 1.3), Tensor::full({1}, 1.0), Tensor::zeros({1}), rm, rv, Mode::Eval);
        CHECK(y.item() == doctest::Approx(1.0 / std::sqrt(2.0 + 1e-5)));
        CHECK(rm[0] == 0.3);
        CHECK(rv[0] == 2.0);
    }
    SUBCASE("batch of one in train mode is a configuration error") {
        auto rm = Tensor::zeros({1});
        auto rv = Tensor::full({1}, 1.0);
        CHECK_THROWS_AS(batchnorm2d(Tensor::zeros({1, 2, 2, 1}), Tensor::full({1}, 1.0), Tensor::zeros({1}), rm, rv,
                                    Mode::Train),
                        ConfigError);
    }
}

TEST_CASE("pooling") {
    auto x = Tensor::from({1, 2, 2, 1}, {1, 2, 3, 4});
    CHECK(global_pool_channel(x, PoolKind::Max).item() == 4.0);
    CHECK(global_pool_channel(Tensor::full({2, 3, 3, 2}, 1.5), PoolKind::Avg)[3] == 1.5);
    auto px = global_pool_pixel(Tensor::from({1, 1, 2, 3}, {1, 5, 3, -1, -2, -3}), PoolKind::Max);
    CHECK(px.shape() == Shape{1, 1, 2, 1});
    CHECK(px[0] == 5.0);
    CHECK(px[1] == -1.0);
    CHECK_THROWS_AS(pool2d(x, PoolKind::Max, 3, 1), ShapeError);

    auto leaf = Tensor::zeros({1, 4, 4, 1}, true);
    backward(sum(pool2d(leaf, PoolKind::Avg, 2, 2)));
    for (double g : leaf.grad()) CHECK(g == 0.25);
}

TEST_CASE("elementwise and structural ops") {
    auto x = Tensor::from({2}, {1, 2});
    auto a = add(x, Tensor::zeros({2}));
    CHECK(a[0] == 1.0);
    auto h = hadamard(x, Tensor::from({2}, {3, 4}));
    CHECK(h[0] == 3.0);
    CHECK(h[1] == 8.0);
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
    auto c = concat({Tensor::from({1, 2}, {1, 2}), Tensor::from({1, 1}, {3})}, 1);
    CHECK(c.shape() == Shape{1, 3});
    CHECK(c[2] == 3.0);
    auto f = flatten(Tensor::zeros({2, 3, 4, 5}));
    CHECK(f.shape() == Shape{2, 60});
    auto b = broadcast_to(Tensor::from({1, 1, 2}, {1, 2}), {3, 2, 2});
    CHECK(b[5] == 2.0);
    CHECK_THROWS_AS(broadcast_to(Tensor::zeros({2}), {3}), ShapeError);
    auto s = slice(Tensor::from({1, 4}, {1, 2, 3, 4}), 1, 1, 2);
    CHECK(s[0] == 2.0);
    CHECK(s[1] == 3.0);
}

TEST_CASE("dropout") {
    Rng rng(9);
    auto x = Tensor::full({100000}, 1.0);
    CHECK(dropout(x, 0.0, rng, Mode::Train).node() == x.node());
    CHECK(dropout(x, 0.9, rng, Mode::Eval).node() == x.node());
    auto y = dropout(x, 0.5, rng, Mode::Train);
    std::size_t kept = 0;
    for (double v : y.data()) {
        if (v != 0.0) {
            ++kept;
            CHECK(v == 2.0);
        }
    }
    CHECK(std::abs(static_cast<double>(kept) / 1e5 - 0.5) < 0.01);
    CHECK_THROWS_AS(dropout(x, 1.0, rng, Mode::Train), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, rng, Mode::Eval), ConfigError);
}

TEST_CASE("losses") {
    CHECK(frobenius_norm(Tensor::zeros({3, 3})).item() == 0.0);
    CHECK(mse(Tensor::from({2}, {1, 1}), Tensor::from({2}, {0, 2})).item() == 1.0);
    CHECK_THROWS_AS(mse(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
    auto z = Tensor::zeros({4}, true);
    backward(frobenius_norm(z));
    for (double g : z.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward semantics") {
    auto p = Tensor::from({2}, {1.0, -2.0}, true);
    auto loss = sum(hadamard(p, p));
    backward(loss);
    CHECK(p.grad()[0] == 2.0);
    backward(loss);
    CHECK(p.grad()[0] == 4.0);  // accumulates
    auto d = p.detach();
    d.set_requires_grad(false);
    backward(sum(hadamard(p, d)));
    CHECK(d.grad()[0] == 0.0);
    CHECK_THROWS_AS(backward(p), UsageError);
}

TEST_CASE("finite-difference gradients") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CAPTURE(seed);
        Rng rng(seed, 77);
        const std::size_t stride = 1 + seed % 2;
        const Padding pad = seed % 3 == 0 ? Padding::Valid : Padding::Same;
        auto x = random_tensor(rng, {2, 5, 6, 2});
        auto k = random_tensor(rng, {3, 3, 2, 3});
        auto b = random_tensor(rng, {3});
        CHECK(grad_check({x, k, b}, [&] { return project(conv2d(x, k, b, stride, pad), seed); }) < 1e-5);

        auto xt = random_tensor(rng, {2, 3, 3, 2});
        auto kt = random_tensor(rng, {3, 3, 4, 2});
        auto bt = random_tensor(rng, {4});
        CHECK(grad_check({xt, kt, bt}, [&] { return project(conv_transpose2d(xt, kt, bt, 2), seed); }) < 1e-5);

        auto xd = random_tensor(rng, {3, 4});
        auto W = random_tensor(rng, {4, 2});
        auto bd = random_tensor(rng, {2});
        CHECK(grad_check({xd, W, bd}, [&] { return project(dense(xd, W, bd), seed); }) < 1e-5);

        auto xa = random_tensor(rng, {2, 3, 3, 2}, -2, 2, 1e-2);
        CHECK(grad_check({xa}, [&] { return project(relu(xa), seed); }) < 1e-5);
        CHECK(grad_check({xa}, [&] { return project(sigmoid(xa), seed); }) < 1e-5);

        auto xb = random_tensor(rng, {3, 2, 2, 2}, -2, 2);
        auto g = random_tensor(rng, {2});
        auto be = random_tensor(rng, {2});
        auto rm = Tensor::zeros({2});
        auto rv = Tensor::full({2}, 1.0);
        CHECK(grad_check({xb, g, be}, [&] { return project(batchnorm2d(xb, g, be, rm, rv, Mode::Train), seed); }) < 1e-4);
        CHECK(grad_check({xb, g, be}, [&] { return project(batchnorm2d(xb, g, be, rm, rv, Mode::Eval), seed); }) < 1e-4);

        // Well-separated values so max pooling never switches winner under the FD step.
        std::vector<double> perm(2 * 4 * 4 * 3);
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = 0.01 * static_cast<double>((i * 37 + seed * 11) % perm.size());
        auto xp = Tensor::from({2, 4, 4, 3}, perm, true);
        CHECK(grad_check({xp}, [&] { return project(pool2d(xp, PoolKind::Max, 2, 2), seed); }) < 1e-5);
        CHECK(grad_check({xp}, [&] { return project(pool2d(xp, PoolKind::Avg, 2, 1), seed); }) < 1e-5);
        CHECK(grad_check({xp}, [&] { return project(global_pool_channel(xp, PoolKind::Max), seed); }) < 1e-5);
        CHECK(grad_check({xp}, [&] { return project(global_pool_channel(xp, PoolKind::Avg), seed); }) < 1e-5);
        CHECK(grad_check({xp}, [&] { return project(global_pool_pixel(xp, PoolKind::Max), seed); }) < 1e-5);
        CHECK(grad_check({xp}, [&] { return project(global_pool_pixel(xp, PoolKind::Avg), seed); }) < 1e-5);

        auto big = random_tensor(rng, {2, 3, 3, 4});
        auto gate = random_tensor(rng, {2, 1, 1, 4});
        auto pix = random_tensor(rng, {2, 3, 3, 1});
        CHECK(grad_check({big, gate}, [&] { return project(hadamard(broadcast_to(gate, big.shape()), big), seed); }) < 1e-5);
        CHECK(grad_check({big, pix}, [&] { return project(hadamard(big, pix), seed); }) < 1e-5);
        CHECK(grad_check({big, gate}, [&] { return project(sub(add(big, gate), scale(gate, 3.0)), seed); }) < 1e-5);
        CHECK(grad_check({big, pix}, [&] { return project(concat({big, pix}, 3), seed); }) < 1e-5);
        CHECK(grad_check({big}, [&] { return project(slice(flatten(big), 1, 5, 20), seed); }) < 1e-5);

        auto p = random_tensor(rng, {2, 6});
        auto t = random_tensor(rng, {2, 6});
        CHECK(grad_check({p}, [&] { return frobenius_norm(p); }) < 1e-5);
        CHECK(grad_check({p}, [&] { return project(frobenius_norm_rows(p), seed); }) < 1e-5);
        CHECK(grad_check({p, t}, [&] { return mse(p, t); }) < 1e-5);
        CHECK(grad_check({p, t}, [&] { return mean(adjusted_cosine_rows(p, t)); }) < 1e-5);

        Rng drop_rng(seed);
        auto xq = random_tensor(rng, {50});
        CHECK(grad_check({xq}, [&] {
                  Rng r = drop_rng;  // same mask on every evaluation
                  return project(dropout(xq, 0.3, r, Mode::Train), seed);
              }) < 1e-5);
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<Tensor> ps{Tensor::from({2}, {1.0, 2.0}, true)};
        auto st = AdamState::for_params(ps, 0.1);
        adam_step(ps, {{0.0, 0.0}}, st);
        CHECK(ps[0][0] == 1.0);
        CHECK(ps[0][1] == 2.0);
    }
    SUBCASE("first step moves by about lr against the gradient") {
        std::vector<Tensor> ps{Tensor::scalar(0.0, true)};
        auto st = AdamState::for_params(ps, 0.1);
        adam_step(ps, {{1.0}}, st);
        CHECK(ps[0].item() == doctest::Approx(-0.1).epsilon(1e-6));
    }
    SUBCASE("minimises a quadratic") {
        std::vector<Tensor> ps{Tensor::scalar(0.0, true)};
        auto st = AdamState::for_params(ps, 0.05);
        for (int i = 0; i < 500; ++i) {
            zero_grads(ps);
            auto d = add_scalar(ps[0], -3.0);
            backward(hadamard(d, d));
            adam_step(ps, st);
        }
        CHECK(std::abs(ps[0].item() - 3.0) < 1e-2);
        CHECK(st.step == 500);
    }
    SUBCASE("shape mismatch") {
        std::vector<Tensor> ps{Tensor::zeros({2}, true)};
        auto st = AdamState::for_params(ps, 0.1);
        CHECK_THROWS_AS(adam_step(ps, {{1.0}}, st), ShapeError);
    }
}

TEST_CASE("lr schedule") {
    LrSchedule s{0.005, 60, 35};
    double prev = s.lr(0);
    for (std::size_t e = 0; e <= 60; ++e) {
        const double lr = s.lr(e);
        CHECK(lr >= 0.0);
        CHECK(lr <= prev);
        if (e < 35) CHECK(lr == 0.005);
        prev = lr;
    }
    CHECK(s.lr(60) == 0.0);
    CHECK(s.lr(47) == doctest::Approx(0.005 * 13.0 / 25.0));
}

TEST_CASE("checkpoint round trip") {
    Rng rng(4);
    Conv2d conv(rng, 3, 2, 4);
    BatchNorm2d bn(4);
    ParamList params;
    conv.collect("conv", params);
    bn.collect("bn", params);
    bn.running_mean.mutable_data()[1] = 0.75;
    const auto bytes = encode_checkpoint(params);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CF3D");

    Rng other(5);
    Conv2d conv2(other, 3, 2, 4);
    BatchNorm2d bn2(4);
    ParamList params2;
    conv2.collect("conv", params2);
    bn2.collect("bn", params2);
    decode_checkpoint(bytes, params2);
    CHECK(encode_checkpoint(params2) == bytes);
    CHECK(bn2.running_mean[1] == 0.75);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad, params2), FormatError);
    bad = bytes;
    bad.resize(bad.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(bad, params2), FormatError);

    const auto path = std::filesystem::temp_directory_path() / "cf3d_ckpt_test.bin";
    save_checkpoint(path, params);
    load_checkpoint(path, params2);
    CHECK(encode_checkpoint(params2) == bytes);
    std::filesystem::remove(path);
}
