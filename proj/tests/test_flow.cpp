#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "fusioncast/flow.hpp"

using namespace fusioncast;
using Catch::Approx;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(real)) == 0;
}

Tensor gaussian_blob(std::size_t n, double cx, double cy, double sigma, double amp) {
    Tensor f({1, n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            f.mutable_data()[y * n + x] = static_cast<real>(amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
        }
    return f;
}

std::pair<double, double> centroid(const Tensor& f) {
    const std::size_t n = f.extent(1);
    double m = 0, sx = 0, sy = 0;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double v = f[y * n + x];
            m += v;
            sx += v * static_cast<double>(x);
            sy += v * static_cast<double>(y);
        }
    return {sx / m, sy / m};
}

}  // namespace

TEST_CASE("identical or featureless frames give exactly zero flow") {
    const Tensor blob = gaussian_blob(32, 16, 16, 3.0, 5.0);
    const FlowField f1 = estimate_flow(blob, blob);
    for (std::size_t i = 0; i < f1.u.size(); ++i) {
        CHECK(f1.u[i] == 0.0);
        CHECK(f1.v[i] == 0.0);
    }

    const Tensor flat = Tensor::full({1, 32, 32}, 2.5);
    const FlowField f2 = estimate_flow(flat, flat);
    for (std::size_t i = 0; i < f2.u.size(); ++i) {
        CHECK(f2.u[i] == 0.0);
        CHECK(f2.v[i] == 0.0);
    }
}

TEST_CASE("a +2px horizontal shift is recovered over the blob support") {
    const std::size_t n = 32;
    const Tensor prev = gaussian_blob(n, 13, 16, 3.5, 5.0);
    const Tensor curr = gaussian_blob(n, 15, 16, 3.5, 5.0);
    const FlowField flow = estimate_flow(prev, curr);

    const double peak = 5.0;
    std::size_t checked = 0;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            if (prev[y * n + x] < 0.3 * peak) continue;
            ++checked;
            CHECK(std::abs(flow.u[y * n + x] - 2.0) < 0.5);
            CHECK(std::abs(flow.v[y * n + x]) < 0.5);
        }
    REQUIRE(checked > 20);
}

TEST_CASE("flow is scale-equivariant up to the damping term") {
    const std::size_t n = 32;
    const Tensor prev = gaussian_blob(n, 13, 16, 3.5, 1.0);
    const Tensor curr = gaussian_blob(n, 15, 16, 3.5, 1.0);
    const FlowField f1 = estimate_flow(prev, curr);

    const Tensor prev10 = scale(prev, 10.0);
    const Tensor curr10 = scale(curr, 10.0);
    const FlowField f10 = estimate_flow(prev10, curr10);

    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            if (prev[y * n + x] < 0.3) continue;
            CHECK(std::abs(f1.u[y * n + x] - f10.u[y * n + x]) < 0.05);
            CHECK(std::abs(f1.v[y * n + x] - f10.v[y * n + x]) < 0.05);
        }
}

TEST_CASE("flow magnitudes are clamped to v_max") {
    FlowParams p;
    p.v_max = 1.5;
    const Tensor prev = gaussian_blob(32, 10, 16, 2.0, 8.0);
    const Tensor curr = gaussian_blob(32, 20, 16, 2.0, 8.0);
    const FlowField flow = estimate_flow(prev, curr, p);
    for (std::size_t i = 0; i < flow.u.size(); ++i) {
        CHECK(std::abs(flow.u[i]) <= 1.5);
        CHECK(std::abs(flow.v[i]) <= 1.5);
    }
}

TEST_CASE("advection with zero flow is the identity") {
    const Tensor frame = gaussian_blob(16, 8, 8, 2.0, 3.0);
    const FlowField zero{Tensor::zeros({1, 16, 16}), Tensor::zeros({1, 16, 16})};
    const FrameSequence out = advect(frame, zero, 3, 1000, 600);
    REQUIRE(out.size() == 3);
    for (const Tensor& f : out.frames) CHECK(bit_equal(f, frame));
    CHECK(out.epochs == std::vector<std::int64_t>{1600, 2200, 2800});
}

TEST_CASE("integer uniform flow shifts exactly with zero fill") {
    const std::size_t n = 8;
    Tensor frame({1, n, n});
    for (std::size_t i = 0; i < frame.size(); ++i) frame.mutable_data()[i] = static_cast<real>(i + 1);

    const FlowField one_east{Tensor::ones({1, n, n}), Tensor::zeros({1, n, n})};
    const FrameSequence out = advect(frame, one_east, 2);

    for (std::size_t y = 0; y < n; ++y) {
        CHECK(out.frames[0][y * n + 0] == 0.0);
        for (std::size_t x = 1; x < n; ++x) CHECK(out.frames[0][y * n + x] == frame[y * n + x - 1]);
        CHECK(out.frames[1][y * n + 0] == 0.0);
        CHECK(out.frames[1][y * n + 1] == 0.0);
        for (std::size_t x = 2; x < n; ++x) CHECK(out.frames[1][y * n + x] == frame[y * n + x - 2]);
    }
}

TEST_CASE("advection preserves non-negativity and approximately conserves interior mass") {
    const std::size_t n = 32;
    const Tensor frame = gaussian_blob(n, 14, 14, 2.5, 4.0);
    FlowField flow{Tensor::full({1, n, n}, 0.7), Tensor::full({1, n, n}, 0.3)};
    const FrameSequence out = advect(frame, flow, 4);

    double prev_mass = 0;
    for (std::size_t i = 0; i < frame.size(); ++i) prev_mass += frame[i];
    for (const Tensor& f : out.frames) {
        double mass = 0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            CHECK(f[i] >= 0.0);
            mass += f[i];
        }
        CHECK(mass == Approx(prev_mass).epsilon(0.01));
        prev_mass = mass;
    }
}

TEST_CASE("prior generation repeats the last frame on a static scene") {
    FrameSequence hist;
    hist.cadence = 600;
    const Tensor frame = gaussian_blob(16, 8, 8, 2.0, 3.0);
    for (int t = 0; t < 3; ++t) {
        hist.frames.push_back(frame);
        hist.epochs.push_back(1000 + 600 * t);
    }
    const FrameSequence prior = generate_prior(hist, 4);
    REQUIRE(prior.size() == 4);
    for (const Tensor& f : prior.frames) CHECK(bit_equal(f, frame));
    for (std::size_t k = 0; k < prior.epochs.size(); ++k)
        CHECK(prior.epochs[k] == hist.epochs.back() + static_cast<std::int64_t>(k + 1) * 600);
}

TEST_CASE("prior tracks a translating blob within a pixel per step") {
    const std::size_t n = 32;
    const double vx = 1.2, vy = -0.6;
    FrameSequence hist;
    hist.cadence = 600;
    for (int t = 0; t < 2; ++t) {
        hist.frames.push_back(gaussian_blob(n, 12 + vx * t, 18 + vy * t, 3.0, 5.0));
        hist.epochs.push_back(600 * t);
    }
    const FrameSequence prior = generate_prior(hist, 5);
    for (int k = 1; k <= 5; ++k) {
        const auto [cx, cy] = centroid(prior.frames[static_cast<std::size_t>(k - 1)]);
        const double tx = 12 + vx * (1 + k), ty = 18 + vy * (1 + k);
        CHECK(std::abs(cx - tx) <= 1.0);
        CHECK(std::abs(cy - ty) <= 1.0);
    }

    CHECK_THROWS_AS(generate_prior(FrameSequence{}, 3), DataError);
    FrameSequence one;
    one.frames.push_back(hist.frames[0]);
    one.epochs.push_back(0);
    CHECK_THROWS_AS(generate_prior(one, 3), DataError);
}

TEST_CASE("flow perturbation is off at sigma zero and seeded otherwise") {
    const std::size_t n = 16;
    FrameSequence hist;
    hist.cadence = 600;
    for (int t = 0; t < 2; ++t) {
        hist.frames.push_back(gaussian_blob(n, 6.0 + t, 8, 2.0, 3.0));
        hist.epochs.push_back(600 * t);
    }

    PriorParams off;
    off.perturb_sigma = 0.0;
    const FrameSequence a = generate_prior(hist, 3, off);
    const FrameSequence b = generate_prior(hist, 3, off);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(bit_equal(a.frames[k], b.frames[k]));

    PriorParams jitter;
    jitter.perturb_sigma = 0.5;
    jitter.perturb_seed = 11;
    const FrameSequence c = generate_prior(hist, 3, jitter);
    const FrameSequence d = generate_prior(hist, 3, jitter);
    bool differs_from_clean = false;
    for (std::size_t k = 0; k < c.size(); ++k) {
        CHECK(bit_equal(c.frames[k], d.frames[k]));
        differs_from_clean = differs_from_clean || !bit_equal(c.frames[k], a.frames[k]);
    }
    CHECK(differs_from_clean);
}

TEST_CASE("persistence repeats the last observation") {
    const Tensor frame = gaussian_blob(8, 4, 4, 1.5, 2.0);
    const FrameSequence out = persistence(frame, 4, 5000, 600);
    REQUIRE(out.size() == 4);
    for (const Tensor& f : out.frames) CHECK(bit_equal(f, frame));
    CHECK(out.epochs.front() == 5600);
    CHECK_THROWS_AS(persistence(frame, 0), ConfigError);
}
