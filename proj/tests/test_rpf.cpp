#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "fusioncast/reference.hpp"
#include "fusioncast/rpf.hpp"

using namespace fusioncast;
using Catch::Approx;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(real)) == 0;
}

void fill(Tensor& t, real v) { std::fill_n(t.mutable_data(), t.size(), v); }

void zero_gates(RpfGates& g) {
    fill(g.spatial_h.conv.kernel.value, 0.0);
    fill(g.spatial_h.conv.bias.value, 0.0);
    fill(g.channel_h.mlp.w1.value, 0.0);
    fill(g.channel_h.mlp.b1.value, 0.0);
    fill(g.channel_h.mlp.w2.value, 0.0);
    fill(g.channel_h.mlp.b2.value, 0.0);
}

}  // namespace

TEST_CASE("spatial attention saturates with the gate bias") {
    Rng rng(21);
    SpatialGate gate("gate", rng);
    fill(gate.conv.kernel.value, 0.0);
    fill(gate.conv.bias.value, 0.0);

    const Tensor f = reference::random_tensor({3, 6, 6}, rng);
    const Tensor m_half = spatial_attention(f, gate);
    REQUIRE(m_half.shape() == Shape{1, 6, 6});
    for (std::size_t i = 0; i < m_half.size(); ++i) CHECK(m_half[i] == 0.5);

    fill(gate.conv.bias.value, -50.0);
    const Tensor m_shut = spatial_attention(f, gate);
    for (std::size_t i = 0; i < m_shut.size(); ++i) {
        CHECK(m_shut[i] > 0.0);
        CHECK(m_shut[i] < 1e-15);
    }
}

TEST_CASE("spatial attention equals its composed pipeline") {
    Rng rng(22);
    SpatialGate gate("gate", rng);
    const Tensor f = reference::random_tensor({4, 5, 5}, rng);
    const Tensor composed = sigmoid(conv2d(channel_pool(f), gate.conv));
    CHECK(bit_equal(spatial_attention(f, gate), composed));
}

TEST_CASE("channel attention closed forms") {
    Rng rng(23);
    ChannelGate zero("zero", 4, rng);
    fill(zero.mlp.w1.value, 0.0);
    fill(zero.mlp.b1.value, 0.0);
    fill(zero.mlp.w2.value, 0.0);
    fill(zero.mlp.b2.value, 0.0);
    const Tensor w = channel_attention(reference::random_tensor({4, 4, 4}, rng), zero);
    REQUIRE(w.shape() == Shape{4});
    for (std::size_t i = 0; i < 4; ++i) CHECK(w[i] == 0.5);

    // Constant map: avg and max descriptors coincide, so the gate sees 2*mlp(v).
    // 0.75 is dyadic, keeping the averaged path bit-identical to the max path.
    ChannelGate gate("gate", 4, rng);
    const Tensor constant = Tensor::full({4, 3, 3}, 0.75);
    const Tensor expect = sigmoid(scale(mlp_apply(Tensor::full({4}, 0.75), gate.mlp), 2.0));
    CHECK(bit_equal(channel_attention(constant, gate), expect));

    CHECK_THROWS_AS(channel_attention(Tensor({3, 4, 4}), gate), ShapeError);
}

TEST_CASE("channel attention gradient under tolerance") {
    Rng rng(24);
    ChannelGate gate("gate", 4, rng);
    Parameter f("f", reference::random_tensor({4, 4, 4}, rng));
    std::vector<Parameter*> params{&f};
    gate.collect(params);
    const auto fn = [&] { return sum_all(channel_attention(f.value, gate)); };
    CHECK(finite_difference_check(params, fn) < 1e-4);
}

TEST_CASE("refine_radar scales channels") {
    Rng rng(25);
    const Tensor f = reference::random_tensor({3, 4, 4}, rng);
    CHECK(bit_equal(refine_radar(f, Tensor::ones({3})), f));

    const Tensor w({3}, {1.0, 0.0, 1.0});
    const Tensor refined = refine_radar(f, w);
    for (std::size_t i = 0; i < 16; ++i) CHECK(refined[16 + i] == 0.0);

    const Tensor wr = reference::random_tensor({3}, rng, 0.0, 1.0);
    const Tensor got = refine_radar(f, wr);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 16; ++i) CHECK(got[c * 16 + i] == f[c * 16 + i] * wr[c]);

    CHECK_THROWS_AS(refine_radar(f, Tensor::ones({2})), ShapeError);
}

TEST_CASE("gated fusion identities") {
    Rng rng(26);
    const Tensor f_radar = reference::random_tensor({3, 5, 5}, rng);
    const Tensor f_prime = reference::random_tensor({3, 5, 5}, rng);

    // Shut gate: the residual passes the radar features through bit-exactly.
    const Tensor shut = gated_fuse(Tensor::zeros({1, 5, 5}), f_prime, f_radar);
    CHECK(bit_equal(shut, f_radar));

    // Open gate with unit channel weights doubles the radar features.
    const Tensor open = gated_fuse(Tensor::ones({1, 5, 5}), refine_radar(f_radar, Tensor::ones({3})), f_radar);
    for (std::size_t i = 0; i < open.size(); ++i) CHECK(open[i] == 2.0 * f_radar[i]);

    // Scalar loop oracle.
    const Tensor m = reference::random_tensor({1, 5, 5}, rng, 0.0, 1.0);
    const Tensor fused = gated_fuse(m, f_prime, f_radar);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 25; ++i) {
            const double want = double(m[i]) * double(f_prime[c * 25 + i]) + double(f_radar[c * 25 + i]);
            CHECK(std::abs(double(fused[c * 25 + i]) - want) < 1e-12);
        }

    CHECK_THROWS_AS(gated_fuse(Tensor({2, 5, 5}), f_prime, f_radar), ShapeError);
    CHECK_THROWS_AS(gated_fuse(m, Tensor({3, 4, 4}), f_radar), ShapeError);
}

TEST_CASE("zero-initialized gates scale radar states by 1.25") {
    Rng rng(27);
    RpfGates gates("rpf", 3, true, rng);
    zero_gates(gates);

    const BranchState pwv{reference::random_tensor({2, 6, 6}, rng), reference::random_tensor({2, 6, 6}, rng)};
    const BranchState radar{reference::random_tensor({3, 6, 6}, rng), reference::random_tensor({3, 6, 6}, rng)};

    const FusedState fused = rpf_fuse(pwv, radar, gates);
    REQUIRE(fused.h.shape() == radar.h.shape());
    for (std::size_t i = 0; i < fused.h.size(); ++i) {
        CHECK(fused.h[i] == Approx(1.25 * radar.h[i]).margin(1e-15));
        CHECK(fused.c[i] == Approx(1.25 * radar.c[i]).margin(1e-15));
    }

    // With zero conv weights the PWV values cannot reach the gate map.
    const BranchState other_pwv{reference::random_tensor({2, 6, 6}, rng),
                                reference::random_tensor({2, 6, 6}, rng)};
    const FusedState fused2 = rpf_fuse(other_pwv, radar, gates);
    CHECK(bit_equal(fused.h, fused2.h));
    CHECK(bit_equal(fused.c, fused2.c));
}

TEST_CASE("gate maps stay strictly inside (0,1)") {
    Rng rng(28);
    SpatialGate sg("sg", rng);
    ChannelGate cg("cg", 5, rng);
    for (int trial = 0; trial < 8; ++trial) {
        const Tensor f = reference::random_tensor({5, 7, 7}, rng, -30, 30);
        const Tensor m = spatial_attention(f, sg);
        const Tensor w = channel_attention(f, cg);
        for (std::size_t i = 0; i < m.size(); ++i) {
            CHECK(m[i] > 0.0);
            CHECK(m[i] < 1.0);
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK(w[i] > 0.0);
            CHECK(w[i] < 1.0);
        }
    }
}

TEST_CASE("raising the gate never shrinks the correction") {
    Rng rng(29);
    const Tensor f_radar = reference::random_tensor({2, 4, 4}, rng);
    const Tensor f_prime = reference::random_tensor({2, 4, 4}, rng);
    const Tensor m_lo = reference::random_tensor({1, 4, 4}, rng, 0.05, 0.45);
    Tensor m_hi = m_lo.clone();
    for (std::size_t i = 0; i < m_hi.size(); ++i) m_hi.mutable_data()[i] += 0.5;

    const Tensor lo = gated_fuse(m_lo, f_prime, f_radar);
    const Tensor hi = gated_fuse(m_hi, f_prime, f_radar);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 16; ++i) {
            if (f_prime[c * 16 + i] == 0.0) continue;
            CHECK(std::abs(hi[c * 16 + i] - f_radar[c * 16 + i]) >=
                  std::abs(lo[c * 16 + i] - f_radar[c * 16 + i]));
        }
}

TEST_CASE("residual bound: correction never exceeds the refined magnitude") {
    Rng rng(30);
    for (int trial = 0; trial < 6; ++trial) {
        const Tensor f_radar = reference::random_tensor({3, 5, 5}, rng);
        const Tensor f_prime = reference::random_tensor({3, 5, 5}, rng);
        const Tensor m = reference::random_tensor({1, 5, 5}, rng, 0.0, 1.0);
        const Tensor fused = gated_fuse(m, f_prime, f_radar);

        double corr = 0, prime = 0;
        for (std::size_t i = 0; i < fused.size(); ++i) {
            corr = std::max(corr, std::abs(double(fused[i]) - double(f_radar[i])));
            prime = std::max(prime, std::abs(double(f_prime[i])));
        }
        CHECK(corr <= prime + 1e-15);
    }
}

TEST_CASE("rpf block end-to-end gradient on 4x4 maps") {
    Rng rng(31);
    RpfGates gates("rpf", 2, true, rng);
    Parameter pwv("pwv", reference::random_tensor({2, 4, 4}, rng));
    Parameter radar("radar", reference::random_tensor({2, 4, 4}, rng));
    std::vector<Parameter*> params{&pwv, &radar};
    gates.collect(params);

    const auto f = [&] {
        return sum_all(rpf_fuse_one(pwv.value, radar.value, gates.spatial_h, gates.channel_h));
    };
    CHECK(finite_difference_check(params, f) < 1e-4);
}

TEST_CASE("separate hidden/cell gates double the parameter count") {
    Rng rng(32);
    RpfGates shared("a", 4, true, rng);
    RpfGates split("b", 4, false, rng);
    std::vector<Parameter*> ps, pl;
    shared.collect(ps);
    split.collect(pl);
    CHECK(pl.size() == 2 * ps.size());
}

TEST_CASE("rpf_fuse rejects mismatched branch extents") {
    Rng rng(33);
    RpfGates gates("rpf", 2, true, rng);
    const BranchState pwv{Tensor({2, 4, 4}), Tensor({2, 4, 4})};
    const BranchState radar{Tensor({2, 8, 8}), Tensor({2, 8, 8})};
    CHECK_THROWS_AS(rpf_fuse(pwv, radar, gates), ShapeError);
}
