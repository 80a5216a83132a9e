#include <doctest.h>

#include "duohdr/verify.hpp"

using namespace duohdr;
using T = Tensor<double>;

TEST_CASE("gradcheck rejects non-scalar outputs") {
    ParamStore<double> store(0);
    Rng rng(0);
    T x = random_tensor<double>(Shape{2, 3}, rng);
    CHECK_THROWS_AS(gradcheck<double>(store, [&](Graph<double>& g) { return g.named_input("x", x); }),
                    ShapeError);
}

TEST_CASE("pure linear graph has near-exact gradients") {
    ParamStore<double> store(0);
    Rng rng(1);
    T x = random_tensor<double>(Shape{3, 4, 4}, rng);
    T w = random_tensor<double>(Shape{2, 3, 1, 1}, rng);
    T r = random_tensor<double>(Shape{2, 4, 4}, rng);
    // no truncation term for a linear map, so a big step minimizes cancellation
    auto res = gradcheck<double>(store, [&](Graph<double>& g) {
        Var<double> none{};
        Var<double> y = conv2d(g.named_input("x", x), g.named_input("w", w), none);
        return mean_all(mul(y, g.input(r)));
    }, 1e-3);
    CHECK(res.max_rel_err < 1e-9);
}

TEST_CASE("constant-output graph has zero analytic gradients") {
    ParamStore<double> store(0);
    Rng rng(2);
    T x = random_tensor<double>(Shape{4, 4}, rng);
    Graph<double> g(&store, BnMode::TrainNoUpdate);
    Var<double> in = g.named_input("x", x);
    Var<double> y = mean_all(mul_const(in, 0.0));
    g.tape.backward(y);
    for (double v : g.grad_of("x").data) CHECK(v == 0.0);
}

TEST_CASE("primitive ops pass gradcheck over several seeds") {
    for (std::uint64_t s = 0; s < 3; ++s) {
        CAPTURE(s);
        CHECK(check_conv2d<double>(1, s, 1e-5) < 1e-4);
        CHECK(check_conv2d<double>(3, s, 1e-5) < 1e-4);
        CHECK(check_conv2d<double>(5, s, 1e-5) < 1e-4);
        CHECK(check_conv2d<double>(7, s, 1e-5) < 1e-4);
        CHECK(check_depthwise<double>(s, 1e-5) < 1e-4);
        CHECK(check_scaled_attention<double>(s, 1e-5) < 1e-4);
        CHECK(check_activation<double>(Act::Relu, s, 1e-5) < 1e-4);
        CHECK(check_activation<double>(Act::LRelu, s, 1e-5) < 1e-4);
        CHECK(check_activation<double>(Act::RReluPaper, s, 1e-5) < 1e-4);
        CHECK(check_activation<double>(Act::Sigmoid, s, 1e-5) < 1e-4);
        CHECK(check_layer_norm<double>(s, 1e-5) < 1e-4);
        CHECK(check_batch_norm<double>(3, BnMode::TrainNoUpdate, s, 1e-5) < 1e-4);
        CHECK(check_batch_norm<double>(4, BnMode::TrainNoUpdate, s, 1e-5) < 1e-4);
        CHECK(check_batch_norm<double>(3, BnMode::Eval, s, 1e-5) < 1e-4);
        CHECK(check_gap_broadcast<double>(s, 1e-5) < 1e-4);
        CHECK(check_softmax_matmul<double>(s, 1e-5) < 1e-4);
        CHECK(check_sobel_mulaw<double>(s, 1e-5) < 1e-4);
        CHECK(check_window_roundtrip<double>(s, 1e-5) < 1e-4);
    }
}

TEST_CASE("ssim graph passes gradcheck") {
    for (std::uint64_t s = 0; s < 2; ++s) {
        CAPTURE(s);
        CHECK(check_ssim_graph<double>(s, 1e-5) < 1e-4);
    }
}
