#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "tgl/ops.hpp"
#include "tgl/tape.hpp"
#include "tgl/tensor.hpp"

using namespace tgl;

TEST_CASE("watch is idempotent per tape", "[autodiff]") {
    Tape tape;
    Tensor w = Tensor::from_vector({1, 2});
    std::int64_t n1 = tape.watch(w);
    std::int64_t n2 = tape.watch(w);
    CHECK(n1 == n2);
    CHECK(tape.size() == 1);
}

TEST_CASE("product-sum gradient matches the other factor", "[autodiff]") {
    // d/da sum(a*b) = b
    Tape tape;
    Tensor a = Tensor::from_vector({1, 2});
    Tensor b = Tensor::from_vector({3, 4});
    tape.watch(a);
    Tensor loss = sum(mul(a, b, &tape), &tape);
    GradientMap grads = tape.backward(loss);
    const Tensor& ga = grads.at(a);
    REQUIRE(ga.shape() == Shape{2});
    CHECK(ga[0] == 3.0);
    CHECK(ga[1] == 4.0);
    CHECK_FALSE(grads.contains(b));  // b was never watched
}

TEST_CASE("square-sum gradient is twice the input", "[autodiff]") {
    // d/dx sum(x^2) = 2x
    Tape tape;
    Tensor x = Tensor::from_vector({1, 2});
    tape.watch(x);
    Tensor loss = sum(square(x, &tape), &tape);
    GradientMap grads = tape.backward(loss);
    CHECK(grads.at(x)[0] == 2.0);
    CHECK(grads.at(x)[1] == 4.0);
}

TEST_CASE("adjoints from separate consumers accumulate", "[autodiff]") {
    // loss = sum(x) + sum(x*x): dloss/dx = 1 + 2x
    Tape tape;
    Tensor x = Tensor::from_vector({3, -1});
    tape.watch(x);
    Tensor loss = add(sum(x, &tape), sum(square(x, &tape), &tape), &tape);
    GradientMap grads = tape.backward(loss);
    CHECK(grads.at(x)[0] == 1.0 + 6.0);
    CHECK(grads.at(x)[1] == 1.0 - 2.0);
}

TEST_CASE("watched leaf unreachable from the loss gets zero gradient", "[autodiff]") {
    Tape tape;
    Tensor used = Tensor::from_vector({2});
    Tensor unused = Tensor::from_vector({5, 5});
    tape.watch(used);
    tape.watch(unused);
    Tensor loss = sum(square(used, &tape), &tape);
    GradientMap grads = tape.backward(loss);
    REQUIRE(grads.contains(unused));
    CHECK(grads.at(unused)[0] == 0.0);
    CHECK(grads.at(unused)[1] == 0.0);
    CHECK(grads.at(used)[0] == 4.0);
}

TEST_CASE("same tensor watched twice accumulates into one slot", "[autodiff]") {
    // Shared-leaf contract: both uses of w contribute to a single gradient.
    Tape tape;
    Tensor w = Tensor::from_vector({2});
    tape.watch(w);
    Tensor t1 = square(w, &tape);   // dt1/dw = 4
    tape.watch(w);                  // second watch is a no-op
    Tensor t2 = scale(w, 3, &tape); // dt2/dw = 3
    Tensor loss = sum(add(t1, t2, &tape), &tape);
    GradientMap grads = tape.backward(loss);
    CHECK(grads.at(w)[0] == 7.0);
}

TEST_CASE("custom gradient overrides the true derivative", "[autodiff]") {
    // forward value 0*x, backward claims d/dx = 7
    Tape tape;
    Tensor x = Tensor::from_vector({1.5});
    tape.watch(x);
    Tensor fwd = Tensor::zeros({1});
    Tensor y = custom_grad(
        std::move(fwd),
        [](const Tensor& up) {
            std::vector<Tensor> g(1);
            Tensor gx(up.shape());
            for (std::size_t i = 0; i < up.size(); ++i) gx[i] = up[i] * 7;
            g[0] = std::move(gx);
            return g;
        },
        {&x}, &tape);
    Tensor loss = sum(y, &tape);
    GradientMap grads = tape.backward(loss);
    CHECK(grads.at(x)[0] == 7.0);
    CHECK(y[0] == 0.0);
}

TEST_CASE("backward validates the loss", "[autodiff]") {
    Tape tape;
    Tensor x = Tensor::from_vector({1, 2});
    tape.watch(x);
    Tensor y = square(x, &tape);
    CHECK_THROWS_AS(tape.backward(y), value_error);  // not scalar

    Tensor detached = Tensor::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(detached), value_error);  // not on tape

    Tape other;
    Tensor z = Tensor::from_vector({1});
    other.watch(z);
    Tensor w = sum(square(z, &other), &other);
    CHECK_THROWS_AS(tape.backward(w), value_error);  // wrong tape
}

TEST_CASE("malformed backward rules are rejected", "[autodiff]") {
    Tape tape;
    Tensor x = Tensor::from_vector({1});
    tape.watch(x);

    SECTION("wrong gradient count") {
        Tensor y = tape.attach(Tensor::scalar(0.0), {&x},
                               [](const Tensor&, const std::vector<bool>&) {
                                   return std::vector<Tensor>{};
                               });
        CHECK_THROWS_AS(tape.backward(y), gradient_error);
    }
    SECTION("wrong gradient shape") {
        Tensor y = tape.attach(Tensor::scalar(0.0), {&x},
                               [](const Tensor&, const std::vector<bool>&) {
                                   std::vector<Tensor> g(1);
                                   g[0] = Tensor::zeros({3});
                                   return g;
                               });
        CHECK_THROWS_AS(tape.backward(y), gradient_error);
    }
}

TEST_CASE("tensors from one tape are constants on another", "[autodiff]") {
    Tape first;
    Tensor x = Tensor::from_vector({2});
    first.watch(x);
    Tensor y = square(x, &first);  // carries first's tape metadata

    Tape second;
    Tensor w = Tensor::from_vector({3});
    second.watch(w);
    Tensor loss = sum(mul(w, y, &second), &second);
    GradientMap grads = second.backward(loss);
    CHECK(grads.at(w)[0] == 4.0);   // y's value, as a constant
    CHECK_FALSE(grads.contains(y)); // stale node id must not leak through
}

TEST_CASE("gradient map lookups", "[autodiff]") {
    Tape tape;
    Tensor x = Tensor::from_vector({1});
    tape.watch(x);
    Tensor loss = sum(x, &tape);
    GradientMap grads = tape.backward(loss);
    CHECK(grads.find(x) != nullptr);
    Tensor stranger = Tensor::from_vector({1});
    CHECK(grads.find(stranger) == nullptr);
    CHECK_THROWS_AS(grads.at(stranger), value_error);
}

TEST_CASE("relu derivative at the kink is zero", "[autodiff]") {
    Tape tape;
    Tensor x = Tensor::from_vector({-1, 0, 2});
    tape.watch(x);
    Tensor loss = sum(relu(x, &tape), &tape);
    GradientMap grads = tape.backward(loss);
    CHECK(grads.at(x)[0] == 0.0);
    CHECK(grads.at(x)[1] == 0.0);
    CHECK(grads.at(x)[2] == 1.0);
}
