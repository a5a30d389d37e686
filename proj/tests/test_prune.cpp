#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "tgl/budget.hpp"
#include "tgl/prune.hpp"

using namespace tgl;
using tgl::test::Rng;

TEST_CASE("channel pruning removes closed units end to end", "[prune]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("bank", 1, 4, false, Activation::sine));
    m.layers.push_back(Layer::dense("head", 4, 1, false));
    *m.at("bank").weight = Tensor(Shape{1, 4}, {1, 2, 3, 4});
    *m.at("head").weight = Tensor(Shape{4, 1}, {10, 20, 30, 40});
    m.attach_gate("bank", GateMode::channel);
    *m.at("bank").gate->weights = Tensor::from_vector({-1, 0.5, -1, 0.5});

    GatedModel p = hard_prune(m, {1});
    REQUIRE(p.at("bank").weight->shape() == Shape{1, 2});
    REQUIRE(p.at("head").weight->shape() == Shape{2, 1});
    CHECK((*p.at("bank").weight)[0] == 2.0);
    CHECK((*p.at("bank").weight)[1] == 4.0);
    CHECK((*p.at("head").weight)[0] == 20.0);
    CHECK((*p.at("head").weight)[1] == 40.0);
    CHECK(p.gate_params().empty());

    // function preserved within the gate granularity
    Tensor x(Shape{3, 1}, {0.3, -1.1, 2.0});
    Tensor yg = m.forward(x);
    Tensor yp = p.forward(x);
    for (std::size_t i = 0; i < yg.size(); ++i) CHECK(std::abs(yg[i] - yp[i]) < 1e-3);

    // the pruned network's static cost is the masked cost of the gated one
    CHECK(static_cost(p, CostKind::flops, {1}) == masked_cost(m, CostKind::flops, {1}));
    CHECK(static_cost(p, CostKind::params, {1}) == masked_cost(m, CostKind::params, {1}));
}

TEST_CASE("channel pruning follows a conv through flatten", "[prune]") {
    Rng rng(401);
    GatedModel m;
    m.layers.push_back(Layer::conv("c", 2, 4, 3, 1, Padding::same, true, Activation::relu));
    m.layers.push_back(Layer::flatten("f"));
    m.layers.push_back(Layer::dense("head", 4 * 4 * 4, 2, true));
    *m.at("c").weight = rng.tensor({4, 2, 3, 3});
    *m.at("c").bias = rng.tensor({4});
    *m.at("head").weight = rng.tensor({64, 2});
    *m.at("head").bias = rng.tensor({2});
    m.attach_gate("c", GateMode::channel);
    *m.at("c").gate->weights = Tensor::from_vector({0.5, -0.5, -0.5, 0.5});

    GatedModel p = hard_prune(m, {2, 4, 4});
    REQUIRE(p.at("c").weight->shape() == Shape{2, 2, 3, 3});
    REQUIRE(p.at("c").bias->shape() == Shape{2});
    REQUIRE(p.at("head").weight->shape() == Shape{32, 2});
    // kept channel 0 block and channel 3 block of the dense rows
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK((*p.at("head").weight)[r * 2 + c] == (*m.at("head").weight)[r * 2 + c]);
            CHECK((*p.at("head").weight)[(16 + r) * 2 + c] ==
                  (*m.at("head").weight)[(48 + r) * 2 + c]);
        }

    Tensor x = rng.tensor({2, 2, 4, 4});
    Tensor yg = m.forward(x);
    Tensor yp = p.forward(x);
    for (std::size_t i = 0; i < yg.size(); ++i) CHECK(std::abs(yg[i] - yp[i]) < 1e-3);

    CHECK(static_cost(p, CostKind::flops, {2, 4, 4}) == masked_cost(m, CostKind::flops, {2, 4, 4}));
}

TEST_CASE("consecutive channel-gated convs prune jointly", "[prune]") {
    Rng rng(402);
    GatedModel m;
    m.layers.push_back(Layer::conv("c1", 1, 3, 3, 1, Padding::same, false, Activation::relu));
    m.layers.push_back(Layer::conv("c2", 3, 4, 3, 1, Padding::same, false, Activation::relu));
    m.layers.push_back(Layer::flatten("f"));
    m.layers.push_back(Layer::dense("head", 4 * 3 * 3, 1, false));
    *m.at("c1").weight = rng.tensor({3, 1, 3, 3});
    *m.at("c2").weight = rng.tensor({4, 3, 3, 3});
    *m.at("head").weight = rng.tensor({36, 1});
    m.attach_gate("c1", GateMode::channel);
    m.attach_gate("c2", GateMode::channel);
    *m.at("c1").gate->weights = Tensor::from_vector({0.5, -0.5, 0.5});
    *m.at("c2").gate->weights = Tensor::from_vector({-0.5, 0.5, 0.5, -0.5});

    GatedModel p = hard_prune(m, {1, 3, 3});
    REQUIRE(p.at("c1").weight->shape() == Shape{2, 1, 3, 3});
    REQUIRE(p.at("c2").weight->shape() == Shape{2, 2, 3, 3});
    REQUIRE(p.at("head").weight->shape() == Shape{18, 1});

    Tensor x = rng.tensor({1, 1, 3, 3});
    Tensor yg = m.forward(x);
    Tensor yp = p.forward(x);
    CHECK(std::abs(yg[0] - yp[0]) < 1e-3);
    CHECK(static_cost(p, CostKind::flops, {1, 3, 3}) ==
          masked_cost(m, CostKind::flops, {1, 3, 3}));
}

TEST_CASE("weight pruning zeroes closed weights in place", "[prune]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("hidden", 2, 2, false));
    m.layers.push_back(Layer::dense("head", 2, 1, false));
    *m.at("hidden").weight = Tensor(Shape{2, 2}, {1, 2, 3, 4});
    *m.at("head").weight = Tensor(Shape{2, 1}, {1, 1});
    m.attach_gate("hidden", GateMode::weight);
    *m.at("hidden").gate->weights = Tensor::from_vector({0.5, -0.5, -0.5, 0.5});

    GatedModel p = hard_prune(m, {2});
    REQUIRE(p.at("hidden").weight->shape() == Shape{2, 2});
    CHECK((*p.at("hidden").weight)[0] == 1.0);
    CHECK((*p.at("hidden").weight)[1] == 0.0);
    CHECK((*p.at("hidden").weight)[2] == 0.0);
    CHECK((*p.at("hidden").weight)[3] == 4.0);
    CHECK(p.gate_params().empty());

    Tensor x(Shape{1, 2}, {1, 1});
    CHECK(std::abs(m.forward(x)[0] - p.forward(x)[0]) < 1e-3);
}

TEST_CASE("a closed block gate silences its layer", "[prune]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("hidden", 1, 2, true));
    m.layers.push_back(Layer::dense("head", 2, 1, true));
    *m.at("hidden").weight = Tensor(Shape{1, 2}, {3, 4});
    *m.at("hidden").bias = Tensor::from_vector({1, 1});
    *m.at("head").weight = Tensor(Shape{2, 1}, {1, 1});
    *m.at("head").bias = Tensor::from_vector({0.5});
    m.attach_gate("hidden", GateMode::block);
    (*m.at("hidden").gate->weights)[0] = -1;

    GatedModel p = hard_prune(m, {1});
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK((*p.at("hidden").weight)[i] == 0.0);
        CHECK((*p.at("hidden").bias)[i] == 0.0);
    }
    Tensor y = p.forward(Tensor(Shape{1, 1}, {5}));
    CHECK(y[0] == 0.5);  // only the head bias survives
}

TEST_CASE("pruning away every channel is an error", "[prune]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("bank", 1, 3, false));
    m.layers.push_back(Layer::dense("head", 3, 1, false));
    m.attach_gate("bank", GateMode::channel);
    *m.at("bank").gate->weights = Tensor::from_vector({-1, -1, 0});  // 0 counts as closed
    CHECK_THROWS_AS(hard_prune(m, {1}), degenerate_model_error);
}

TEST_CASE("pruning an ungated model copies it", "[prune]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("head", 2, 2, true));
    *m.at("head").weight = Tensor(Shape{2, 2}, {1, 2, 3, 4});
    *m.at("head").bias = Tensor::from_vector({5, 6});

    GatedModel p = hard_prune(m, {2});
    CHECK(p.at("head").weight->vec() == m.at("head").weight->vec());
    (*p.at("head").weight)[0] = 99;
    CHECK((*m.at("head").weight)[0] == 1.0);  // deep copy, not shared storage
}

TEST_CASE("prune validates the sample shape", "[prune]") {
    GatedModel m;
    m.layers.push_back(Layer::dense("head", 2, 1, false));
    CHECK_THROWS_AS(hard_prune(m, {5}), shape_error);
}
