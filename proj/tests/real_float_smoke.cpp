// Compiles the library with the 32-bit scalar switch and runs a forward and
// backward pass, to keep the alternate configuration building.
#include <cstdio>
#include <type_traits>

#include "tgl/ops.hpp"
#include "tgl/tape.hpp"

int main() {
    static_assert(std::is_same_v<tgl::Real, float>, "TGL_REAL_FLOAT must select float");
    tgl::Tape tape;
    tgl::Tensor x = tgl::Tensor::from_vector({1.0f, 2.0f});
    tape.watch(x);
    tgl::Tensor loss = tgl::sum(tgl::square(x, &tape), &tape);
    tgl::GradientMap grads = tape.backward(loss);
    if (loss.item() != 5.0f || grads.at(x)[1] != 4.0f) {
        std::puts("float configuration produced wrong values");
        return 1;
    }
    std::puts("ok");
    return 0;
}
