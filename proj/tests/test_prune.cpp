#include <doctest.h>

#include "oracle.hpp"
#include "rpk/forward.hpp"
#include "rpk/prune.hpp"

using namespace rpk;

TEST_SUITE("pruning") {

TEST_CASE("filters are ranked by L1 norm and the smallest removed") {
    // conv0 filters have L1 norms 2, 0.1, 4, 0.3 -> ratio 0.5 removes 1 and 3.
    Network net{"p2",
                {2, 1, 1},
                {LayerSpec::conv2d(2, 4, 1), LayerSpec::conv2d(4, 3, 1)}};
    WeightStore<double> ws;
    ws.set(weight_name(0),
           Tensor<double>({4, 2, 1, 1}, {1, -1, 0.1, 0, 3, 1, 0.2, -0.1}));
    ws.set(bias_name(0), Tensor<double>({4}, {10, 20, 30, 40}));
    Tensor<double> w1({3, 4, 1, 1});
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 4; ++i) w1(o, i, 0, 0) = double(10 * o + i);
    ws.set(weight_name(1), w1);
    ws.set(bias_name(1), Tensor<double>({3}, {1, 2, 3}));

    auto r = prune_channels(net, ws, {0.5, {}});

    REQUIRE(r.record.layers.size() == 2);
    CHECK(r.record.layers[0].kept == std::vector<std::size_t>{0, 2});
    CHECK(r.record.layers[0].out_before == 4);
    CHECK(r.record.layers[0].out_after == 2);
    // last parameterized layer is protected
    CHECK(r.record.layers[1].kept == std::vector<std::size_t>{0, 1, 2});

    CHECK(r.net.layers[0].out == 2);
    CHECK(r.net.layers[1].in == 2);
    CHECK(r.net.layers[1].out == 3);

    const auto& nw0 = r.weights.at(weight_name(0));
    CHECK(nw0.shape() == Shape{2, 2, 1, 1});
    CHECK(nw0(0, 0, 0, 0) == 1.0);
    CHECK(nw0(1, 0, 0, 0) == 3.0);
    const auto& nb0 = r.weights.at(bias_name(0));
    CHECK(nb0.data()[0] == 10.0);
    CHECK(nb0.data()[1] == 30.0);
    // consumer keeps only the surviving input slices
    const auto& nw1 = r.weights.at(weight_name(1));
    CHECK(nw1.shape() == Shape{3, 2, 1, 1});
    CHECK(nw1(0, 0, 0, 0) == 0.0);
    CHECK(nw1(0, 1, 0, 0) == 2.0);
    CHECK(nw1(2, 1, 0, 0) == 22.0);

    // parameter arithmetic: 12+15 -> 6+9
    CHECK(r.record.params_before == 27);
    CHECK(r.record.params_after == 15);
    CHECK(r.record.removed_fraction() == doctest::Approx(12.0 / 27.0));
}

TEST_CASE("equal norms break ties toward removing the lower index") {
    Network net{"tie", {1, 1, 1}, {LayerSpec::conv2d(1, 4, 1, 1, 0, 1, false),
                                   LayerSpec::conv2d(4, 1, 1, 1, 0, 1, false)}};
    WeightStore<double> ws;
    ws.set(weight_name(0), Tensor<double>({4, 1, 1, 1}, {2, -2, 2, 2}));
    ws.set(weight_name(1), Tensor<double>({1, 4, 1, 1}, {1, 1, 1, 1}));

    auto r = prune_channels(net, ws, {0.25, {}}); // ceil(0.25*4)=1 removed
    CHECK(r.record.layers[0].kept == std::vector<std::size_t>{1, 2, 3});

    auto r2 = prune_channels(net, ws, {0.5, {}});
    CHECK(r2.record.layers[0].kept == std::vector<std::size_t>{2, 3});
}

TEST_CASE("ranking reads original weights, not input-sliced ones") {
    // Layer 1's filters: restricted to surviving input 0 the order would flip,
    // but ranking must use the full original rows.
    Network net{"orig",
                {1, 1, 1},
                {LayerSpec::conv2d(1, 2, 1, 1, 0, 1, false),
                 LayerSpec::conv2d(2, 2, 1, 1, 0, 1, false),
                 LayerSpec::conv2d(2, 1, 1, 1, 0, 1, false)}};
    WeightStore<double> ws;
    ws.set(weight_name(0), Tensor<double>({2, 1, 1, 1}, {5, 1})); // keeps filter 0
    // filter 0: |0.1| + |9| = 9.1 ; filter 1: |1| + |0| = 1  -> filter 1 removed.
    // Restricted to input 0 alone the order would be 0.1 vs 1 -- the reverse.
    ws.set(weight_name(1), Tensor<double>({2, 2, 1, 1}, {0.1, 9, 1, 0}));
    ws.set(weight_name(2), Tensor<double>({1, 2, 1, 1}, {1, 1}));

    auto r = prune_channels(net, ws, {0.5, {}});
    CHECK(r.record.layers[0].kept == std::vector<std::size_t>{0});
    CHECK(r.record.layers[1].kept == std::vector<std::size_t>{0});
    CHECK(r.weights.at(weight_name(1)).shape() == Shape{1, 1, 1, 1});
    CHECK(r.weights.at(weight_name(1))(0, 0, 0, 0) == 0.1);
}

TEST_CASE("flatten maps surviving channels to contiguous feature blocks") {
    Network net{"fl",
                {1, 2, 2},
                {LayerSpec::conv2d(1, 4, 1, 1, 0, 1, false), LayerSpec::flatten(),
                 LayerSpec::linear(16, 3, false)}};
    WeightStore<double> ws;
    ws.set(weight_name(0), Tensor<double>({4, 1, 1, 1}, {0.1, 5, 0.01, 3}));
    Tensor<double> wl({3, 16});
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 16; ++i) wl(o, i) = double(100 * o + i);
    ws.set(weight_name(2), wl);

    auto r = prune_channels(net, ws, {0.5, {}});
    CHECK(r.record.layers[0].kept == std::vector<std::size_t>{1, 3});
    CHECK(r.net.layers[2].in == 8);
    const auto& nwl = r.weights.at(weight_name(2));
    REQUIRE(nwl.shape() == Shape{3, 8});
    // channel 1 -> features 4..7, channel 3 -> features 12..15
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t p = 0; p < 4; ++p) {
            CHECK(nwl(o, p) == double(100 * o + 4 + p));
            CHECK(nwl(o, 4 + p) == double(100 * o + 12 + p));
        }
    }
    // pruned net is well formed end to end
    auto y = predict(r.net, r.weights, oracle::random_tensor<double>({2, 1, 2, 2}, 8));
    CHECK(y.shape() == Shape{2, 3});
}

TEST_CASE("depthwise layers follow their producer's surviving channels") {
    Network net{"dw",
                {2, 5, 5},
                {LayerSpec::conv2d(2, 4, 1, 1, 0, 1, false),
                 LayerSpec::conv2d(4, 4, 3, 1, 1, 4, false),
                 LayerSpec::conv2d(4, 2, 1, 1, 0, 1, false)}};
    WeightStore<double> ws = init_weights<double>(net, 4);
    ws.set(weight_name(0), Tensor<double>({4, 2, 1, 1}, {5, 5, 1, 1, 4, 4, 2, 2}));

    auto r = prune_channels(net, ws, {0.5, {}});
    CHECK(r.record.layers[0].kept == std::vector<std::size_t>{0, 2});
    CHECK(r.record.layers[1].kept == std::vector<std::size_t>{0, 2});
    CHECK(r.net.layers[1].in == 2);
    CHECK(r.net.layers[1].out == 2);
    CHECK(r.net.layers[1].groups == 2);
    CHECK(r.weights.at(weight_name(1)).shape() == Shape{2, 1, 3, 3});
    // surviving depthwise kernels are the producer's channels 0 and 2
    const auto& orig = ws.at(weight_name(1));
    const auto& got = r.weights.at(weight_name(1));
    for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx) {
            CHECK(got(0, 0, ky, kx) == orig(0, 0, ky, kx));
            CHECK(got(1, 0, ky, kx) == orig(2, 0, ky, kx));
        }
}

TEST_CASE("zeroing removed filters in the original net reproduces the pruned net") {
    Network net{"equiv",
                {2, 8, 8},
                {LayerSpec::conv2d(2, 6, 3, 1, 1), LayerSpec::relu(),
                 LayerSpec::conv2d(6, 6, 3, 1, 1, 6), LayerSpec::maxpool(2, 2),
                 LayerSpec::conv2d(6, 5, 3, 1, 0), LayerSpec::relu(),
                 LayerSpec::flatten(), LayerSpec::linear(20, 4)}};
    auto ws = init_weights<double>(net, 31);
    auto r = prune_channels(net, ws, {0.4, {}});

    // Zero every removed filter (and its bias) in a copy of the original.
    WeightStore<double> zeroed = ws;
    for (const auto& lr : r.record.layers) {
        if (lr.out_after == lr.out_before) continue;
        auto& w = zeroed.at(weight_name(lr.layer));
        auto& b = zeroed.at(bias_name(lr.layer));
        const std::size_t per = w.size() / w.dim(0);
        std::vector<bool> keep(w.dim(0), false);
        for (auto k : lr.kept) keep[k] = true;
        for (std::size_t o = 0; o < w.dim(0); ++o)
            if (!keep[o]) {
                for (std::size_t t = 0; t < per; ++t) w.data()[o * per + t] = 0.0;
                b.data()[o] = 0.0;
            }
    }

    auto x = oracle::random_tensor<double>({3, 2, 8, 8}, 77);
    auto y_full = predict(net, zeroed, x);
    auto y_pruned = predict(r.net, r.weights, x);
    CHECK(max_abs_diff(y_full, y_pruned) < 1e-12);
}

TEST_CASE("ratio zero is the identity") {
    Network net{"id", {2, 4, 4}, {LayerSpec::conv2d(2, 3, 3), LayerSpec::flatten(),
                                  LayerSpec::linear(12, 2)}};
    auto ws = init_weights<double>(net, 9);
    auto r = prune_channels(net, ws, {0.0, {}});
    CHECK(r.net == net);
    CHECK(r.record.params_after == r.record.params_before);
    CHECK(r.record.removed_fraction() == 0.0);
    CHECK(max_abs_diff(r.weights.at(weight_name(0)), ws.at(weight_name(0))) == 0.0);
}

TEST_CASE("a ratio that would empty a layer is refused") {
    Network net{"empty", {1, 3, 3}, {LayerSpec::conv2d(1, 3, 1, 1, 0, 1, false),
                                     LayerSpec::conv2d(3, 2, 1, 1, 0, 1, false)}};
    auto ws = init_weights<double>(net, 6);
    CHECK_THROWS_WITH_AS(prune_channels(net, ws, {1.0, {}}), doctest::Contains("empties"),
                         Error);
    CHECK_THROWS_AS(prune_channels(net, ws, {1.5, {}}), Error);
    CHECK_THROWS_AS(prune_channels(net, ws, {-0.1, {}}), Error);
}

TEST_CASE("explicitly protected layers keep every filter") {
    Network net{"prot", {1, 3, 3}, {LayerSpec::conv2d(1, 4, 1, 1, 0, 1, false),
                                    LayerSpec::conv2d(4, 4, 1, 1, 0, 1, false),
                                    LayerSpec::conv2d(4, 2, 1, 1, 0, 1, false)}};
    auto ws = init_weights<double>(net, 10);
    auto r = prune_channels(net, ws, {0.5, {0}});
    CHECK(r.record.layers[0].out_after == 4); // protected by request
    CHECK(r.record.layers[1].out_after == 2); // pruned
    CHECK(r.record.layers[2].out_after == 2); // protected as the last layer
}

TEST_CASE("grouped convolutions block pruning through them") {
    // Upstream pruning feeds a grouped conv -> refused.
    Network net{"grp", {2, 4, 4}, {LayerSpec::conv2d(2, 4, 1, 1, 0, 1, false),
                                   LayerSpec::conv2d(4, 4, 3, 1, 1, 2, false),
                                   LayerSpec::conv2d(4, 2, 1, 1, 0, 1, false)}};
    auto ws = init_weights<double>(net, 12);
    CHECK_THROWS_WITH_AS(prune_channels(net, ws, {0.5, {}}),
                         doctest::Contains("grouped"), Error);

    // With the producer protected, the grouped layer passes through untouched.
    auto r = prune_channels(net, ws, {0.5, {0}});
    CHECK(r.net.layers[1] == net.layers[1]);
    CHECK(max_abs_diff(r.weights.at(weight_name(1)), ws.at(weight_name(1))) == 0.0);
}

TEST_CASE("pruning a linear stack ranks rows by L1 norm") {
    Network net{"lin", {3}, {LayerSpec::linear(3, 4, false), LayerSpec::relu(),
                             LayerSpec::linear(4, 2, false)}};
    WeightStore<double> ws;
    ws.set(weight_name(0), Tensor<double>({4, 3}, {1, 1, 1,      // norm 3
                                                   0.1, 0, 0,    // norm 0.1 (removed)
                                                   2, -2, 0,     // norm 4
                                                   0, 0.2, 0})); // norm 0.2 (removed)
    ws.set(weight_name(2), Tensor<double>({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));

    auto r = prune_channels(net, ws, {0.5, {}});
    CHECK(r.record.layers[0].kept == std::vector<std::size_t>{0, 2});
    const auto& w2 = r.weights.at(weight_name(2));
    REQUIRE(w2.shape() == Shape{2, 2});
    CHECK(w2(0, 0) == 1.0);
    CHECK(w2(0, 1) == 3.0);
    CHECK(w2(1, 0) == 5.0);
    CHECK(w2(1, 1) == 7.0);
}

} // TEST_SUITE
