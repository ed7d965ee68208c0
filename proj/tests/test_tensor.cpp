#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "fusioncast/reference.hpp"
#include "fusioncast/tensor.hpp"

using namespace fusioncast;
using Catch::Approx;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(real)) == 0;
}

}  // namespace

TEST_CASE("ew_add computes elementwise sums") {
    const Tensor a({2}, {1, 2});
    const Tensor b({2}, {3, 4});
    const Tensor out = ew_add(a, b);
    CHECK(out[0] == 4.0);
    CHECK(out[1] == 6.0);

    Rng rng(7);
    const Tensor x = reference::random_tensor({3, 4, 4}, rng);
    CHECK(bit_equal(ew_add(x, Tensor::zeros(x.shape())), x));
}

TEST_CASE("ew_add broadcast over trailing dimensions") {
    Rng rng(3);
    const Tensor a = reference::random_tensor({2, 3, 2, 2}, rng);
    const Tensor b = reference::random_tensor({3, 2, 2}, rng);
    const Tensor out = ew_add(a, b);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t i = 0; i < b.size(); ++i)
            CHECK(out[t * b.size() + i] == a[t * b.size() + i] + b[i]);
}

TEST_CASE("ew_add backward distributes the adjoint to both inputs") {
    Parameter a("a", Tensor({3}, {0.5, -1.0, 2.0}));
    Parameter b("b", Tensor({3}, {1.0, 1.5, -0.5}));
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(sum_all(ew_add(a.value, b.value)));
    }
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(tape.grad(a.value)[i] == 1.0);
        CHECK(tape.grad(b.value)[i] == 1.0);
    }
    const double err = finite_difference_check({&a, &b}, [&] { return sum_all(ew_add(a.value, b.value)); });
    CHECK(err < 1e-9);
}

TEST_CASE("shape mismatch errors name both shapes") {
    const Tensor a({2, 3});
    const Tensor b({3, 2});
    try {
        ew_add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(3,2)") != std::string::npos);
    }
    CHECK_THROWS_AS(ew_mul(a, b), ShapeError);
}

TEST_CASE("ew_mul hadamard products and identity") {
    const Tensor a({2}, {2, 3});
    const Tensor b({2}, {4, 5});
    const Tensor out = ew_mul(a, b);
    CHECK(out[0] == 8.0);
    CHECK(out[1] == 15.0);

    Rng rng(11);
    const Tensor x = reference::random_tensor({2, 3, 3}, rng);
    CHECK(bit_equal(ew_mul(x, Tensor::ones(x.shape())), x));
}

TEST_CASE("ew_mul channel-vector broadcast equals materialized expansion") {
    Rng rng(19);
    Parameter map("map", reference::random_tensor({2, 3, 3}, rng));
    Parameter vec("vec", reference::random_tensor({2}, rng, 0.25, 1.0));

    const Tensor fused = ew_mul(map.value, vec.value);
    Tensor expanded(map.value.shape());
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 9; ++i)
            expanded.mutable_data()[c * 9 + i] = vec.value[c];
    CHECK(bit_equal(fused, ew_mul(map.value, expanded)));

    const double err =
        finite_difference_check({&map, &vec}, [&] { return sum_all(ew_mul(map.value, vec.value)); });
    CHECK(err < 1e-6);
}

TEST_CASE("ew_mul single-channel map broadcast") {
    Rng rng(23);
    Parameter map("map", reference::random_tensor({3, 2, 2}, rng));
    Parameter gate("gate", reference::random_tensor({1, 2, 2}, rng, 0.0, 1.0));
    const Tensor out = ew_mul(map.value, gate.value);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(out[c * 4 + i] == map.value[c * 4 + i] * gate.value[i]);
    const double err =
        finite_difference_check({&map, &gate}, [&] { return sum_all(ew_mul(map.value, gate.value)); });
    CHECK(err < 1e-6);
}

TEST_CASE("sigmoid midpoint, saturation, and derivative") {
    const Tensor mid = sigmoid(Tensor::scalar(0));
    CHECK(mid[0] == 0.5);

    const Tensor hi = sigmoid(Tensor::scalar(50));
    CHECK(std::abs(hi[0] - 1.0) < 1e-15);
    const Tensor lo = sigmoid(Tensor::scalar(-50));
    CHECK(lo[0] > 0.0);
    CHECK(lo[0] < 1e-15);

    Parameter x("x", Tensor::scalar(0));
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(sum_all(sigmoid(x.value)));
    }
    CHECK(tape.grad(x.value)[0] == Approx(0.25).margin(1e-15));
    CHECK(finite_difference_check({&x}, [&] { return sum_all(sigmoid(x.value)); }) < 1e-9);
}

TEST_CASE("tanh zero, odd symmetry, and unit derivative at zero") {
    CHECK(tanh(Tensor::scalar(0))[0] == 0.0);

    Rng rng(29);
    const Tensor x = reference::random_tensor({32}, rng, -3, 3);
    const Tensor pos = tanh(x);
    const Tensor neg = tanh(scale(x, -1));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(neg[i] == -pos[i]);

    Parameter w("w", Tensor::scalar(0));
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(sum_all(tanh(w.value)));
    }
    CHECK(tape.grad(w.value)[0] == 1.0);
    CHECK(finite_difference_check({&w}, [&] { return sum_all(tanh(w.value)); }) < 1e-9);
}

TEST_CASE("relu clamps, is idempotent, and masks gradients") {
    const Tensor x({3}, {-1, 0, 2});
    const Tensor y = relu(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 2.0);
    CHECK(bit_equal(relu(y), y));

    // Away from the kink the analytic mask must match central differences.
    Parameter w("w", Tensor({4}, {-1.5, -0.5, 0.5, 1.5}));
    CHECK(finite_difference_check({&w}, [&] { return sum_all(relu(w.value)); }) < 1e-9);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(sum_all(relu(w.value)));
    }
    const Tensor g = tape.grad(w.value);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
    CHECK(g[2] == 1.0);
    CHECK(g[3] == 1.0);
}

TEST_CASE("concat_channels stacks in order and splits gradients") {
    Rng rng(31);
    const Tensor a = reference::random_tensor({2, 8, 8}, rng);
    const Tensor b = reference::random_tensor({3, 8, 8}, rng);
    const Tensor cat = concat_channels({a, b});
    REQUIRE(cat.shape() == Shape{5, 8, 8});
    CHECK(std::memcmp(cat.data(), a.data(), a.size() * sizeof(real)) == 0);
    CHECK(std::memcmp(cat.data() + a.size(), b.data(), b.size() * sizeof(real)) == 0);

    CHECK(bit_equal(concat_channels({a}), a));

    Parameter pa("a", reference::random_tensor({2, 3, 3}, rng));
    Parameter pb("b", reference::random_tensor({1, 3, 3}, rng));
    Parameter gate("g", reference::random_tensor({3, 3, 3}, rng));
    const auto f = [&] { return sum_all(ew_mul(concat_channels({pa.value, pb.value}), gate.value)); };
    CHECK(finite_difference_check({&pa, &pb}, f) < 1e-6);

    CHECK_THROWS_AS(concat_channels({a, Tensor({2, 4, 4})}), ShapeError);
}

TEST_CASE("slice_channels inverts concat and routes gradients") {
    Rng rng(37);
    Parameter x("x", reference::random_tensor({4, 3, 3}, rng));
    const Tensor left = slice_channels(x.value, 0, 2);
    const Tensor right = slice_channels(x.value, 2, 4);
    CHECK(bit_equal(concat_channels({left, right}), x.value));

    Parameter w("w", reference::random_tensor({2, 3, 3}, rng));
    const auto f = [&] { return sum_all(ew_mul(slice_channels(x.value, 1, 3), w.value)); };
    CHECK(finite_difference_check({&x, &w}, f) < 1e-6);
}

TEST_CASE("finite differences are exact on a quadratic") {
    Rng rng(41);
    Parameter w("w", reference::random_tensor({16}, rng, -2, 2));
    const auto f = [&] { return sum_all(ew_mul(w.value, w.value)); };
    CHECK(finite_difference_check({&w}, f) < 1e-9);

    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(f());
    }
    const Tensor g = tape.grad(w.value);
    for (std::size_t i = 0; i < w.value.size(); ++i) CHECK(g[i] == Approx(2.0 * w.value[i]).margin(1e-14));
}

TEST_CASE("sigmoid chain of depth five stays under tolerance") {
    Rng rng(43);
    Parameter w("w", reference::random_tensor({8}, rng, -1, 1));
    const auto f = [&] {
        Tensor y = w.value;
        for (int d = 0; d < 5; ++d) y = sigmoid(y);
        return sum_all(y);
    };
    CHECK(finite_difference_check({&w}, f) < 1e-5);
}

TEST_CASE("every elementwise primitive matches central differences") {
    Rng rng(47);
    Parameter a("a", reference::random_tensor({4, 5, 5}, rng));
    Parameter b("b", reference::random_tensor({4, 5, 5}, rng));
    Parameter vec("vec", reference::random_tensor({4}, rng, 0.2, 1.2));
    Parameter gate("gate", reference::random_tensor({1, 5, 5}, rng, 0.1, 0.9));
    const std::vector<Parameter*> params{&a, &b, &vec, &gate};

    const auto f = [&] {
        Tensor t = ew_add(a.value, b.value);
        t = ew_mul(t, vec.value);
        t = ew_mul(t, gate.value);
        t = tanh(t);
        t = ew_sub(t, sigmoid(b.value));
        t = relu(ew_add(t, Tensor::full(t.shape(), 0.05)));
        return mean_all(t);
    };
    CHECK(finite_difference_check(params, f) < 1e-4);
}

TEST_CASE("replaying the same computation is bit-identical") {
    Rng rng(53);
    Parameter w("w", reference::random_tensor({3, 4, 4}, rng));
    Parameter v("v", reference::random_tensor({3}, rng, 0.2, 1.0));

    const auto run = [&](Tensor& out, Tensor& gw, Tensor& gv) {
        Tape tape;
        TapeScope scope(tape);
        Tensor y = ew_mul(sigmoid(w.value), v.value);
        Tensor loss = sum_all(tanh(y));
        out = loss;
        tape.backward(loss);
        gw = tape.grad(w.value);
        gv = tape.grad(v.value);
    };

    Tensor o1, gw1, gv1, o2, gw2, gv2;
    run(o1, gw1, gv1);
    run(o2, gw2, gv2);
    CHECK(bit_equal(o1, o2));
    CHECK(bit_equal(gw1, gw2));
    CHECK(bit_equal(gv1, gv2));
}

TEST_CASE("gradients accumulate additively across consumers") {
    Parameter w("w", Tensor({2}, {3.0, -2.0}));
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(sum_all(ew_add(w.value, w.value)));
    }
    CHECK(tape.grad(w.value)[0] == 2.0);
    CHECK(tape.grad(w.value)[1] == 2.0);
}

TEST_CASE("non-finite gradients are rejected") {
    Parameter w("w", Tensor::scalar(1.0));
    const auto f = [&] { return sum_all(scale(w.value, std::numeric_limits<real>::infinity())); };
    CHECK_THROWS_AS(finite_difference_check({&w}, f), DataError);
}

TEST_CASE("backward rejects non-scalar and unrecorded roots") {
    Tape tape;
    TapeScope scope(tape);
    Parameter w("w", Tensor({2}, {1, 2}));
    const Tensor y = ew_add(w.value, w.value);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(0)), DataError);
}

TEST_CASE("tensor invariants: shape arithmetic and finiteness") {
    CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1, 1}), ShapeError);
    CHECK_THROWS_AS(Tensor({2}, {1.0}), ShapeError);

    Rng rng(59);
    const Tensor x = reference::random_tensor({2, 6, 6}, rng, -40, 40);
    CHECK(all_finite(sigmoid(x)));
    CHECK(all_finite(tanh(x)));
    CHECK(all_finite(relu(x)));
}

TEST_CASE("parameter gradients zero and accumulate") {
    Parameter w("w", Tensor({2}, {1.0, 2.0}));
    REQUIRE(w.grad.shape() == w.value.shape());

    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(sum_all(ew_mul(w.value, w.value)));
    }
    w.accumulate_from(tape);
    CHECK(w.grad[0] == Approx(2.0));
    CHECK(w.grad[1] == Approx(4.0));
    w.accumulate_from(tape);
    CHECK(w.grad[0] == Approx(4.0));

    w.zero_grad();
    CHECK(w.grad[0] == 0.0);
    CHECK(w.grad[1] == 0.0);
}
