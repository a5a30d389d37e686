#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "tgl/layers.hpp"

using namespace tgl;
using tgl::test::Rng;
using tgl::test::rel_diff;

namespace {

GatedModel tiny_dense_model() {
    GatedModel m;
    m.layers.push_back(Layer::dense("hidden", 2, 3, true, Activation::none));
    m.layers.push_back(Layer::dense("head", 3, 1, true, Activation::none));
    return m;
}

}  // namespace

TEST_CASE("dense layer computes an affine map", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("only", 2, 2, true));
    *m.at("only").weight = Tensor(Shape{2, 2}, {1, 2, 3, 4});
    *m.at("only").bias = Tensor::from_vector({10, 20});
    Tensor x(Shape{1, 2}, {1, 1});
    Tensor y = m.forward(x);
    REQUIRE(y.shape() == Shape{1, 2});
    CHECK(y[0] == 14.0);  // 1+3+10
    CHECK(y[1] == 26.0);  // 2+4+20
}

TEST_CASE("activations apply after the linear map", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("only", 1, 2, false, Activation::relu));
    m.layers.push_back(Layer::dense("head", 2, 1, false));
    *m.at("only").weight = Tensor(Shape{1, 2}, {1, -1});
    *m.at("head").weight = Tensor(Shape{2, 1}, {1, 1});
    Tensor y = m.forward(Tensor(Shape{1, 1}, {3}));
    CHECK(y[0] == 3.0);  // relu keeps 3, kills -3

    m.at("only").act = Activation::sine;
    Tensor ys = m.forward(Tensor(Shape{1, 1}, {2}));
    CHECK(ys[0] == Catch::Approx(std::sin(2.0) + std::sin(-2.0)).margin(1e-15));
}

TEST_CASE("channel gate scales the pre-activation output", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("hidden", 1, 1, false, Activation::sine));
    m.layers.push_back(Layer::dense("head", 1, 1, false));
    *m.at("hidden").weight = Tensor(Shape{1, 1}, {1});
    *m.at("head").weight = Tensor(Shape{1, 1}, {1});
    m.attach_gate("hidden", GateMode::channel, GateSpec{10, GateShape::constant_one});
    (*m.at("hidden").gate->weights)[0] = 0.37;  // gate value 1.07 at this granularity

    const double g = 1.07;
    const double x = 1.3;
    Tensor y = m.forward(Tensor(Shape{1, 1}, {x}));
    // gate multiplies before the sine: sin(g*x), not g*sin(x)
    CHECK(y[0] == Catch::Approx(std::sin(g * x)).margin(1e-12));
    CHECK(std::abs(y[0] - g * std::sin(x)) > 1e-3);
}

TEST_CASE("closed channel output is within one granule of zero", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("hidden", 1, 2, false));
    m.layers.push_back(Layer::dense("head", 2, 1, false));
    *m.at("hidden").weight = Tensor(Shape{1, 2}, {5, 5});
    *m.at("head").weight = Tensor(Shape{2, 1}, {1, 0});
    m.attach_gate("hidden", GateMode::channel);  // M = 1e5
    *m.at("hidden").gate->weights = Tensor::from_vector({-0.3, 0.4});

    Tensor y = m.forward(Tensor(Shape{1, 1}, {1}));
    // head reads only the closed channel; its signal of 5 is damped below 5/M
    CHECK(std::abs(y[0]) <= 5.0 / 100000 + 1e-15);
}

TEST_CASE("gating a conv output equals masking its kernel", "[layers]") {
    Rng rng(301);
    GatedModel m;
    m.layers.push_back(Layer::conv("c", 2, 3, 3, 1, Padding::same, false));
    m.layers.push_back(Layer::flatten("f"));
    m.layers.push_back(Layer::dense("head", 3 * 4 * 4, 1, false));
    *m.at("c").weight = rng.tensor({3, 2, 3, 3});
    *m.at("head").weight = rng.tensor({48, 1});
    m.attach_gate("c", GateMode::channel, GateSpec{10, GateShape::constant_one});
    *m.at("c").gate->weights = Tensor::from_vector({0.37, -0.25, 0.81});

    Tensor x = rng.tensor({2, 2, 4, 4});
    Tensor gated = m.forward(x);

    // same network with the gate folded into the kernel instead
    Tensor folded = *m.at("c").weight;
    Tensor gv = gate_tensor(*m.at("c").gate->weights, m.at("c").gate->spec);
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t r = 0; r < 2 * 3 * 3; ++r) folded[o * 18 + r] *= gv[o];
    GatedModel plain;
    plain.layers.push_back(Layer::conv("c", 2, 3, 3, 1, Padding::same, false));
    plain.layers.push_back(Layer::flatten("f"));
    plain.layers.push_back(Layer::dense("head", 48, 1, false));
    *plain.at("c").weight = folded;
    *plain.at("head").weight = *m.at("head").weight;
    Tensor masked = plain.forward(x);

    REQUIRE(gated.same_shape(masked));
    for (std::size_t i = 0; i < gated.size(); ++i)
        CHECK(rel_diff(gated[i], masked[i], 1e-9) < 1e-12);
}

TEST_CASE("weight-mode gates multiply individual weights", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("hidden", 2, 2, false));
    m.layers.push_back(Layer::dense("head", 2, 1, false));
    *m.at("hidden").weight = Tensor(Shape{2, 2}, {1, 2, 3, 4});
    *m.at("head").weight = Tensor(Shape{2, 1}, {1, 1});
    m.attach_gate("hidden", GateMode::weight, GateSpec{10, GateShape::constant_one});
    // gate values: 1.07, 0.05, 1.07, 0.05 at M=10
    *m.at("hidden").gate->weights = Tensor::from_vector({0.37, -0.25, 0.37, -0.25});

    Tensor y = m.forward(Tensor(Shape{1, 2}, {1, 1}));
    // (1*1.07 + 3*1.07) + (2*0.05 + 4*0.05)
    CHECK(y[0] == Catch::Approx(4 * 1.07 + 6 * 0.05).margin(1e-12));
}

TEST_CASE("block-mode gate scales the whole layer", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("hidden", 1, 3, false));
    m.layers.push_back(Layer::dense("head", 3, 1, false));
    *m.at("hidden").weight = Tensor(Shape{1, 3}, {1, 2, 3});
    *m.at("head").weight = Tensor(Shape{3, 1}, {1, 1, 1});
    m.attach_gate("hidden", GateMode::block, GateSpec{10, GateShape::constant_one});
    REQUIRE(m.at("hidden").gate->weights->size() == 1);
    (*m.at("hidden").gate->weights)[0] = 0.37;

    Tensor y = m.forward(Tensor(Shape{1, 1}, {1}));
    CHECK(y[0] == Catch::Approx(6 * 1.07).margin(1e-12));
}

TEST_CASE("gradients flow to parameters and gates", "[layers]") {
    Rng rng(302);
    GatedModel m;
    m.layers.push_back(Layer::dense("hidden", 2, 3, true, Activation::sine));
    m.layers.push_back(Layer::dense("head", 3, 1, true));
    RandomStream rs(7);
    init_model(m, rs);
    m.attach_gate("hidden", GateMode::channel, GateSpec{10, GateShape::constant_one});
    // mid-piece gate weights so finite differences stay on one sawtooth piece
    *m.at("hidden").gate->weights = Tensor::from_vector({0.55, 1.25, -0.35});

    Tensor x = rng.tensor({4, 2});
    Tensor target = rng.tensor({4, 1});

    auto loss_value = [&]() {
        GatedModel probe = m;  // layers share parameter objects; fine for reading
        return mse_loss(probe.forward(x), target).item();
    };

    Tape tape;
    for (auto& p : m.params()) tape.watch(*p);
    for (auto& g : m.gate_params()) tape.watch(*g);
    Tensor loss = mse_loss(m.forward(x, &tape), target, &tape);
    GradientMap grads = tape.backward(loss);

    const double h = 1e-5;
    auto check_param = [&](Tensor& p, const char* what) {
        const Tensor& g = grads.at(p);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const Real keep = p[i];
            p[i] = keep + h;
            const double up = loss_value();
            p[i] = keep - h;
            const double down = loss_value();
            p[i] = keep;
            const double fd = (up - down) / (2 * h);
            INFO(what << " element " << i);
            CHECK(rel_diff(g[i], fd) < 1e-4);
        }
    };
    check_param(*m.at("hidden").weight, "hidden weight");
    check_param(*m.at("hidden").bias, "hidden bias");
    check_param(*m.at("head").weight, "head weight");
    check_param(*m.at("hidden").gate->weights, "gate weights");
}

TEST_CASE("shared gate banks accumulate gradients from both layers", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("a", 1, 2, false));
    m.layers.push_back(Layer::dense("b", 2, 2, false));
    m.layers.push_back(Layer::dense("head", 2, 1, false));
    *m.at("a").weight = Tensor(Shape{1, 2}, {1, 1});
    *m.at("b").weight = Tensor(Shape{2, 2}, {1, 0, 0, 1});
    *m.at("head").weight = Tensor(Shape{2, 1}, {1, 1});
    m.attach_gate("a", GateMode::channel, GateSpec{10, GateShape::constant_one});
    *m.at("a").gate->weights = Tensor::from_vector({0.55, 0.55});
    m.share_gates("a", "b");

    REQUIRE(m.gate_params().size() == 1);  // one distinct bank
    REQUIRE(m.at("b").gate == m.at("a").gate);

    Tape tape;
    Tensor& gw = *m.at("a").gate->weights;
    tape.watch(gw);
    Tensor out = m.forward(Tensor(Shape{1, 1}, {1}), &tape);
    GradientMap grads = tape.backward(sum(out, &tape));

    // output = sum_i TG(w_i)^2 (each unit passes two gates), so d/dw = 2*TG
    const double tg = trainable_gate(0.55, GateSpec{10, GateShape::constant_one});
    CHECK(rel_diff(grads.at(gw)[0], 2 * tg, 1e-12) < 1e-12);
    CHECK(rel_diff(grads.at(gw)[1], 2 * tg, 1e-12) < 1e-12);
}

TEST_CASE("share_gates validates compatibility", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("a", 1, 2, false));
    m.layers.push_back(Layer::dense("b", 2, 3, false));
    m.layers.push_back(Layer::dense("head", 3, 1, false));
    m.attach_gate("a", GateMode::channel);
    CHECK_THROWS_AS(m.share_gates("a", "b"), shape_error);   // 2 gates, 3 channels
    CHECK_THROWS_AS(m.share_gates("b", "a"), value_error);   // b has no bank
    CHECK_THROWS_AS(m.share_gates("a", "nope"), value_error);
}

TEST_CASE("the final parameterized layer cannot gate its outputs", "[layers]") {
    GatedModel m = tiny_dense_model();
    m.attach_gate("head", GateMode::channel);
    CHECK_THROWS_AS(m.validate(), value_error);
    CHECK_THROWS_AS(m.forward(Tensor::ones({1, 2})), value_error);
    m.attach_gate("head", GateMode::block);
    CHECK_THROWS_AS(m.validate(), value_error);
    // weight gates only thin the last weight matrix, they never mask outputs
    m.attach_gate("head", GateMode::weight);
    CHECK_NOTHROW(m.validate());
}

TEST_CASE("model structure validation", "[layers]") {
    GatedModel empty;
    CHECK_THROWS_AS(empty.validate(), value_error);

    GatedModel only_flat;
    only_flat.layers.push_back(Layer::flatten("f"));
    CHECK_THROWS_AS(only_flat.validate(), value_error);

    GatedModel m = tiny_dense_model();
    m.attach_gate("hidden", GateMode::channel);
    *m.at("hidden").gate->weights = Tensor::from_vector({1, 2});  // 2 gates for 3 channels
    CHECK_THROWS_AS(m.validate(), shape_error);

    CHECK_THROWS_AS(m.at("missing"), value_error);
}

TEST_CASE("attach_gate rejects unparameterized layers", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::flatten("f"));
    m.layers.push_back(Layer::dense("head", 4, 1, false));
    CHECK_THROWS_AS(m.attach_gate("f", GateMode::channel), value_error);
}

TEST_CASE("parameter enumeration", "[layers]") {
    GatedModel m = tiny_dense_model();
    CHECK(m.params().size() == 4);  // 2 weights + 2 biases
    CHECK(m.gate_params().empty());
    m.attach_gate("hidden", GateMode::channel);
    CHECK(m.gate_params().size() == 1);
    CHECK(m.gated_layer_count() == 1);
}

TEST_CASE("initialization ranges", "[layers]") {
    GatedModel m = tiny_dense_model();
    m.attach_gate("hidden", GateMode::channel);
    RandomStream rs(11);
    init_model(m, rs);

    const double limit = std::sqrt(6.0 / (2 + 3));
    for (std::size_t i = 0; i < m.at("hidden").weight->size(); ++i) {
        CHECK(std::abs((*m.at("hidden").weight)[i]) <= limit);
    }
    for (std::size_t i = 0; i < m.at("hidden").bias->size(); ++i)
        CHECK((*m.at("hidden").bias)[i] == 0.0);
    const Tensor& gw = *m.at("hidden").gate->weights;
    for (std::size_t i = 0; i < gw.size(); ++i) {
        CHECK(gw[i] >= 0.01);
        CHECK(gw[i] <= 0.1);
        CHECK(gate_open(gw[i]));  // all gates start open
    }
}

TEST_CASE("active mask listing", "[layers]") {
    GatedModel m = tiny_dense_model();
    m.attach_gate("hidden", GateMode::channel);
    *m.at("hidden").gate->weights = Tensor::from_vector({0.5, -0.5, 0.1});
    std::vector<LayerMask> masks = active_masks(m);
    REQUIRE(masks.size() == 1);
    CHECK(masks[0].layer == "hidden");
    CHECK(masks[0].mode == GateMode::channel);
    REQUIRE(masks[0].mask.size() == 3);
    CHECK(masks[0].mask[0]);
    CHECK_FALSE(masks[0].mask[1]);
    CHECK(masks[0].mask[2]);
    CHECK(m.at("hidden").gate->open() == 2);
}

TEST_CASE("conv model forward shape", "[layers]") {
    GatedModel m;
    m.layers.push_back(Layer::conv("c1", 1, 4, 3, 2, Padding::same, true, Activation::relu));
    m.layers.push_back(Layer::flatten("f"));
    m.layers.push_back(Layer::dense("head", 4 * 14 * 14, 10, true));
    RandomStream rs(3);
    init_model(m, rs);
    Tensor y = m.forward(Tensor::zeros({2, 1, 28, 28}));
    CHECK(y.shape() == Shape{2, 10});
}

TEST_CASE("name helpers round-trip", "[layers]") {
    CHECK(activation_from_string(to_string(Activation::sine)) == Activation::sine);
    CHECK(gate_mode_from_string(to_string(GateMode::weight)) == GateMode::weight);
    CHECK_THROWS_AS(activation_from_string("swish"), value_error);
    CHECK_THROWS_AS(gate_mode_from_string("row"), value_error);
}
