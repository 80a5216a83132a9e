#include <doctest.h>

#include "duohdr/ops.hpp"
#include "duohdr/params.hpp"
#include "oracles.hpp"

using namespace duohdr;
using T = Tensor<double>;

namespace {

Tensor<double> rand_t(Rng& rng, const Shape& sh, double scale = 1.0) {
    return random_tensor<double>(sh, rng, scale);
}

}  // namespace

TEST_CASE("conv2d 1x1 identity weights reproduce the input") {
    Tape<double> tape;
    Rng rng(1);
    T x = rand_t(rng, Shape{3, 4, 4});
    T w(Shape{3, 3, 1, 1});
    for (int o = 0; o < 3; ++o) w(o, o, 0, 0) = 1.0;
    T b(Shape{3});
    Var<double> y = conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b));
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.value().data[size_t(i)] == x.data[size_t(i)]);
}

TEST_CASE("depthwise 3x3 centered delta reproduces the input") {
    Tape<double> tape;
    Rng rng(2);
    T x = rand_t(rng, Shape{2, 5, 5});
    T w(Shape{2, 3, 3});
    w(0, 1, 1) = 1.0;
    w(1, 1, 1) = 1.0;
    T b(Shape{2});
    Var<double> y = depthwise_conv(tape.leaf(x), tape.leaf(w), tape.leaf(b));
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.value().data[size_t(i)] == x.data[size_t(i)]);
}

TEST_CASE("conv2d matches the direct-summation oracle") {
    Tape<double> tape;
    Rng rng(3);
    T x = rand_t(rng, Shape{2, 4, 4});
    T w = rand_t(rng, Shape{3, 2, 3, 3});
    T b = rand_t(rng, Shape{3});
    Var<double> y = conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b));
    auto ref = oracle::conv2d_direct(x.data, 2, 4, 4, w.data, 3, 3, 1, b.data);
    REQUIRE(y.value().numel() == static_cast<std::int64_t>(ref.size()));
    for (size_t i = 0; i < ref.size(); ++i) CHECK(y.value().data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d shape errors name the offending axis") {
    Tape<double> tape;
    Rng rng(4);
    T x = rand_t(rng, Shape{5, 4, 4});
    T w = rand_t(rng, Shape{3, 4, 3, 3});
    T b(Shape{3});
    CHECK_THROWS_WITH_AS(conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b)),
                         doctest::Contains("axis 1"), ShapeError);
}

TEST_CASE("scaled_attention single token output equals V") {
    Tape<double> tape;
    Rng rng(5);
    T q = rand_t(rng, Shape{1, 2, 3});
    T k = rand_t(rng, Shape{1, 2, 3});
    T v = rand_t(rng, Shape{1, 2, 3});
    auto at = scaled_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), tape.leaf(T::scalar(0.3)));
    CHECK(at.weights.value().data[0] == 1.0);
    for (std::int64_t i = 0; i < v.numel(); ++i)
        CHECK(at.out.value().data[size_t(i)] == doctest::Approx(v.data[size_t(i)]).epsilon(1e-15));
}

TEST_CASE("scaled_attention with equal logits averages V rows") {
    Tape<double> tape;
    Rng rng(6);
    T q = rand_t(rng, Shape{4, 2, 3});
    T k(Shape{4, 2, 3}, 0.7);  // constant K makes all logits in a row equal
    T v = rand_t(rng, Shape{4, 2, 3});
    auto at = scaled_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), tape.leaf(T::scalar(0.0)));
    const int D = 6;
    for (int d = 0; d < D; ++d) {
        double mean = 0;
        for (int t = 0; t < 4; ++t) mean += v.data[size_t(t * D + d)];
        mean /= 4.0;
        for (int t = 0; t < 4; ++t) CHECK(at.out.value().data[size_t(t * D + d)] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("scaled_attention matches the exp/normalize/matmul oracle") {
    Tape<double> tape;
    Rng rng(7);
    T q = rand_t(rng, Shape{4, 2, 3});
    T k = rand_t(rng, Shape{4, 2, 3});
    T v = rand_t(rng, Shape{4, 2, 3});
    const double log_s = 0.37;
    auto at = scaled_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), tape.leaf(T::scalar(log_s)));
    auto ref = oracle::attention_direct(q.data, k.data, v.data, 4, 6, std::exp(log_s));
    for (size_t i = 0; i < ref.size(); ++i)
        CHECK(at.out.value().data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("scaled_attention rejects token-dimension mismatch") {
    Tape<double> tape;
    Rng rng(8);
    T q = rand_t(rng, Shape{4, 2, 3});
    T k = rand_t(rng, Shape{4, 2, 4});
    T v = rand_t(rng, Shape{4, 2, 4});
    CHECK_THROWS_WITH_AS(scaled_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), tape.leaf(T::scalar(0.0))),
                         doctest::Contains("token dimension"), ShapeError);
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
    Tape<double> tape;
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        T x = rand_t(rng, Shape{6, 5}, 3.0);
        Var<double> y = softmax_last(tape.leaf(x));
        for (int r = 0; r < 6; ++r) {
            double sum = 0;
            for (int c = 0; c < 5; ++c) {
                const double v = y.value()(r, c);
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("activations: paper cases") {
    Tape<double> tape;
    T x(Shape{4}, std::vector<double>{-2.0, 3.0, -1.0, 1.0});
    Var<double> r = activate(tape.leaf(x), Act::RReluPaper);
    CHECK(r.value()(0) == 2.0);   // rrelu(-2) = 2
    CHECK(r.value()(1) == 0.0);   // rrelu(3) = 0
    Var<double> re = activate(tape.leaf(x), Act::Relu);
    CHECK(re.value()(2) == 0.0);  // relu(-1) = 0
    CHECK(re.value()(3) == 1.0);  // relu(1) = 1
    Var<double> sg = activate(tape.leaf(T::scalar(0.0)), Act::Sigmoid);
    CHECK(sg.value()(0) == 0.5);
    Var<double> lr = activate(tape.leaf(T::scalar(-1.0)), Act::LRelu);
    CHECK(lr.value()(0) == doctest::Approx(-0.2));
}

TEST_CASE("layer_norm constant input collapses to beta") {
    Tape<double> tape;
    T x(Shape{4, 3, 3}, 2.5);
    T g(Shape{4}, 1.0);
    T b(Shape{4}, 0.0);
    Var<double> y = layer_norm(tape.leaf(x), tape.leaf(g), tape.leaf(b));
    for (double v : y.value().data) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    T b2(Shape{4}, 0.75);
    T g0(Shape{4}, 0.0);
    Var<double> y2 = layer_norm(tape.leaf(x), tape.leaf(g0), tape.leaf(b2));
    for (double v : y2.value().data) CHECK(v == 0.75);
}

TEST_CASE("batch_norm train mode normalizes per channel (vs two-pass oracle)") {
    Tape<double> tape;
    Rng rng(10);
    T x = rand_t(rng, Shape{2, 4, 5, 5}, 2.0);
    T g(Shape{4}, 1.0);
    T b(Shape{4}, 0.0);
    T rm(Shape{4}, 0.0), rv(Shape{4}, 1.0);
    Var<double> y = batch_norm(tape.leaf(x), tape.leaf(g), tape.leaf(b), rm, rv, BnMode::TrainNoUpdate);

    auto mom = oracle::channel_moments(y.value().data, 2, 4, 25);
    for (int c = 0; c < 4; ++c) {
        CHECK(mom.mean[size_t(c)] == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(mom.var[size_t(c)] == doctest::Approx(1.0).epsilon(1e-4));
    }

    // the normalization itself matches the oracle moments of the input
    auto im = oracle::channel_moments(x.data, 2, 4, 25);
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 25; ++i) {
            const double xv = x.data[size_t((0 * 4 + c) * 25 + i)];
            const double expect = (xv - im.mean[size_t(c)]) / std::sqrt(im.var[size_t(c)] + 1e-5);
            CHECK(y.value().data[size_t((0 * 4 + c) * 25 + i)] == doctest::Approx(expect).epsilon(1e-10));
        }
}

TEST_CASE("batch_norm eval mode uses running statistics") {
    Tape<double> tape;
    Rng rng(11);
    T x = rand_t(rng, Shape{3, 4, 4});
    T g(Shape{3}, 1.0), b(Shape{3}, 0.0);
    T rm(Shape{3}, std::vector<double>{0.1, -0.2, 0.3});
    T rv(Shape{3}, std::vector<double>{1.5, 0.5, 2.0});
    Var<double> y = batch_norm(tape.leaf(x), tape.leaf(g), tape.leaf(b), rm, rv, BnMode::Eval);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i) {
            const double expect = (x.data[size_t(c * 16 + i)] - rm(c)) / std::sqrt(rv(c) + 1e-5);
            CHECK(y.value().data[size_t(c * 16 + i)] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("batch_norm TrainUpdate updates running stats with momentum 0.9") {
    Tape<double> tape;
    Rng rng(12);
    T x = rand_t(rng, Shape{2, 6, 6});
    T g(Shape{2}, 1.0), b(Shape{2}, 0.0);
    T rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
    batch_norm(tape.leaf(x), tape.leaf(g), tape.leaf(b), rm, rv, BnMode::TrainUpdate);
    auto im = oracle::channel_moments(x.data, 1, 2, 36);
    for (int c = 0; c < 2; ++c) {
        CHECK(rm(c) == doctest::Approx(0.1 * im.mean[size_t(c)]).epsilon(1e-12));
        CHECK(rv(c) == doctest::Approx(0.9 + 0.1 * im.var[size_t(c)]).epsilon(1e-12));
    }
}

TEST_CASE("gap: constant, 1x1, and random oracle") {
    Tape<double> tape;
    T c(Shape{3, 4, 4}, 0.37);
    Var<double> yc = gap(tape.leaf(c));
    for (int i = 0; i < 3; ++i) CHECK(yc.value().data[size_t(i)] == doctest::Approx(0.37).epsilon(1e-15));

    Rng rng(13);
    T one = rand_t(rng, Shape{5, 1, 1});
    Var<double> y1 = gap(tape.leaf(one));
    for (int i = 0; i < 5; ++i) CHECK(y1.value().data[size_t(i)] == one.data[size_t(i)]);

    T x = rand_t(rng, Shape{3, 4, 4});
    Var<double> y = gap(tape.leaf(x));
    for (int ch = 0; ch < 3; ++ch) {
        double s = 0;
        for (int i = 0; i < 16; ++i) s += x.data[size_t(ch * 16 + i)];
        CHECK(y.value().data[size_t(ch)] == doctest::Approx(s / 16.0).epsilon(1e-12));
    }
}

TEST_CASE("forward ops keep finite inputs finite") {
    Rng rng(14);
    for (int trial = 0; trial < 5; ++trial) {
        Tape<double> tape;
        T x = rand_t(rng, Shape{4, 8, 8}, 10.0);
        Var<double> v = tape.leaf(x);
        T w = rand_t(rng, Shape{4, 4, 3, 3});
        T b = rand_t(rng, Shape{4});
        v = conv2d(v, tape.leaf(w), tape.leaf(b));
        v = activate(v, Act::Sigmoid);
        T g(Shape{4}, 1.0), be(Shape{4}, 0.0);
        v = layer_norm(v, tape.leaf(g), tape.leaf(be));
        auto at = scaled_attention(v, v, v, tape.leaf(T::scalar(2.0)));
        v = mu_law_op(clamp01(at.out), 5000.0);
        CHECK(v.value().all_finite());
    }
}

TEST_CASE("conv2d and scaled_attention are bit-identical across repeated runs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tape<double> tape;
        T x = random_tensor<double>(Shape{4, 8, 8}, rng);
        T w = random_tensor<double>(Shape{4, 4, 3, 3}, rng);
        T b = random_tensor<double>(Shape{4}, rng);
        Var<double> y = conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b));
        auto at = scaled_attention(y, y, y, tape.leaf(T::scalar(1.0)));
        return at.out.value().data;
    };
    auto a = run(99), b = run(99);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("concat/slice round trip and window partition inverse") {
    Tape<double> tape;
    Rng rng(15);
    T x = rand_t(rng, Shape{3, 4, 4});
    T y = rand_t(rng, Shape{2, 4, 4});
    Var<double> cat = concat_ch(tape.leaf(x), tape.leaf(y));
    Var<double> sx = slice_ch(cat, 0, 3);
    Var<double> sy = slice_ch(cat, 3, 2);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(sx.value().data[size_t(i)] == x.data[size_t(i)]);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(sy.value().data[size_t(i)] == y.data[size_t(i)]);

    T z = rand_t(rng, Shape{3, 8, 8});
    Var<double> wp = window_partition(tape.leaf(z), 4);
    Var<double> wm = window_merge(wp, 3, 8, 8, 4);
    for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(wm.value().data[size_t(i)] == z.data[size_t(i)]);

    CHECK_THROWS_WITH_AS(window_partition(tape.leaf(rand_t(rng, Shape{2, 6, 6})), 4),
                         doctest::Contains("pad input"), ShapeError);
}
