#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "fusioncast/trainer.hpp"

using namespace fusioncast;
using Catch::Approx;

namespace {

std::string temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "fc_trainer_test" / name;
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

CorpusConfig small_corpus() {
    CorpusConfig c;
    c.synth.n = 16;
    c.synth.n_frames = 18;
    c.synth.n_stations = 12;
    c.t_in = 4;
    c.t_out = 4;
    c.train_scenes = 1;
    c.val_scenes = 1;
    c.test_scenes = 1;
    return c;
}

ModelConfig small_model(const CorpusConfig& corpus) {
    ModelConfig cfg = gradcheck_model_config();
    cfg.grid = corpus.synth.n;
    cfg.t_in = corpus.t_in;
    cfg.t_out = corpus.t_out;
    return cfg;
}

// Forward doubles, backward deliberately claims the factor is 3.
Tensor corrupted_scale(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.mutable_data()[i] = real(2) * x[i];
    out.set_requires_grad(x.requires_grad());
    if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
        const int ix = tp->input_id(x);
        tp->record(out, [ix](Tape& t, const std::vector<real>& g) {
            if (ix < 0) return;
            auto& gx = t.adjoint(ix);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += real(3) * g[i];
        });
    }
    return out;
}

}  // namespace

TEST_CASE("sequence mse closed forms and gradient") {
    Rng rng(3);
    std::vector<Tensor> target;
    for (int f = 0; f < 3; ++f) {
        Tensor t({1, 4, 4});
        for (std::size_t i = 0; i < t.size(); ++i) t.mutable_data()[i] = static_cast<real>(uniform_range(rng, 0, 1));
        target.push_back(t);
    }
    CHECK(sequence_mse(target, target)[0] == 0.0);

    std::vector<Tensor> shifted;
    for (const Tensor& t : target) shifted.push_back(ew_add(t, Tensor::full(t.shape(), 0.25)));
    CHECK(sequence_mse(shifted, target)[0] == Approx(0.0625).margin(1e-15));

    Parameter pred("pred", target[0].clone());
    const auto f = [&] { return sequence_mse({pred.value}, {target[1]}); };
    CHECK(finite_difference_check({&pred}, f) < 1e-8);

    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(f());
    }
    const Tensor g = tape.grad(pred.value);
    const std::size_t n = pred.value.size();
    for (std::size_t i = 0; i < n; ++i)
        CHECK(g[i] == Approx(2.0 * (pred.value[i] - target[1][i]) / static_cast<double>(n)).margin(1e-15));

    CHECK_THROWS_AS(sequence_mse({target[0]}, {}), ShapeError);
}

TEST_CASE("adam leaves parameters unchanged on zero gradients") {
    Parameter w("w", Tensor({3}, {1.0, -2.0, 0.5}));
    const Tensor before = w.value.clone();
    TrainConfig cfg;
    AdamOptimizer opt({&w}, cfg);
    for (int s = 0; s < 3; ++s) {
        opt.step();
        opt.zero_grad();
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.value[i] == before[i]);
}

TEST_CASE("adam's first step moves by about -lr * sign(g)") {
    Parameter w("w", Tensor({2}, {0.0, 0.0}));
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.clip = 0;  // disabled
    AdamOptimizer opt({&w}, cfg);
    w.grad = Tensor({2}, {0.37, -21.0});
    opt.step();
    CHECK(w.value[0] == Approx(-1e-3).epsilon(1e-4));
    CHECK(w.value[1] == Approx(1e-3).epsilon(1e-4));
}

TEST_CASE("global-norm clipping rescales gradients") {
    // clip 1.0 with a norm-2 gradient must match an unclipped half gradient
    Parameter a("a", Tensor({2}, {1.0, 1.0}));
    Parameter b("b", Tensor({2}, {1.0, 1.0}));
    TrainConfig clip_cfg;
    clip_cfg.clip = 1.0;
    TrainConfig free_cfg;
    free_cfg.clip = 0;
    AdamOptimizer clipped({&a}, clip_cfg);
    AdamOptimizer unclipped({&b}, free_cfg);

    a.grad = Tensor({2}, {std::sqrt(2.0), std::sqrt(2.0)});  // global norm 2
    b.grad = Tensor({2}, {std::sqrt(2.0) / 2, std::sqrt(2.0) / 2});
    clipped.step();
    unclipped.step();
    CHECK(a.value[0] == Approx(b.value[0]).margin(1e-15));
    CHECK(a.value[1] == Approx(b.value[1]).margin(1e-15));
}

TEST_CASE("non-finite gradients abort with the parameter name") {
    Parameter w("encoder.broken.kernel", Tensor({1}, {1.0}));
    TrainConfig cfg;
    AdamOptimizer opt({&w}, cfg);
    w.grad = Tensor({1}, {std::numeric_limits<real>::quiet_NaN()});
    try {
        opt.step();
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("encoder.broken.kernel") != std::string::npos);
    }
}

TEST_CASE("a single-window fixture overfits") {
    CorpusConfig corpus = small_corpus();
    Dataset data = build_synthetic_dataset(71, corpus);
    REQUIRE(!data.train.empty());
    data.train.resize(1);
    data.val = data.train;

    ModelConfig mc = small_model(corpus);
    Model model(mc, 72);
    TrainConfig tc;
    tc.epochs = 8;
    tc.batch = 1;
    tc.seed = 73;
    tc.tf_p0 = 0.0;

    const TrainResult result = train_model(model, data, tc, temp_dir("overfit"));
    REQUIRE(result.log.size() == 8);
    CHECK(result.log.back().train_loss < result.log.front().train_loss);

    int violations = 0;
    for (std::size_t e = 1; e < result.log.size(); ++e)
        if (result.log[e].train_loss > result.log[e - 1].train_loss) ++violations;
    CHECK(violations <= 2);
}

TEST_CASE("training is deterministic across runs and thread counts") {
    const CorpusConfig corpus = small_corpus();
    const ModelConfig mc = small_model(corpus);

    const auto run = [&](const std::string& dir, int threads) {
        Dataset data = build_synthetic_dataset(81, corpus);
        Model model(mc, 82);
        TrainConfig tc;
        tc.epochs = 2;
        tc.batch = 4;
        tc.seed = 83;
        tc.threads = threads;
        train_model(model, data, tc, dir);
        return std::pair{slurp(dir + "/train_log.csv"), slurp(dir + "/checkpoint.fckp")};
    };

    const auto [log1, ckpt1] = run(temp_dir("det1"), 1);
    const auto [log2, ckpt2] = run(temp_dir("det2"), 1);
    const auto [log4, ckpt4] = run(temp_dir("det4"), 2);
    CHECK(log1 == log2);
    CHECK(ckpt1 == ckpt2);
    CHECK(log1 == log4);
    CHECK(ckpt1 == ckpt4);
    CHECK(!log1.empty());
}

TEST_CASE("no_pwv trains on a corpus with no usable moisture data") {
    CorpusConfig corpus = small_corpus();
    Dataset data = build_synthetic_dataset(91, corpus);
    for (auto* split : {&data.train, &data.val, &data.test})
        for (SampleWindow& w : *split)
            for (Tensor& f : w.pwv.frames) f = Tensor::zeros(f.shape());

    ModelConfig mc = small_model(corpus);
    mc.variant = Variant::NoPwv;
    Model model(mc, 92);
    TrainConfig tc;
    tc.epochs = 1;
    tc.seed = 93;
    const TrainResult result = train_model(model, data, tc, temp_dir("no_pwv"));
    CHECK(std::isfinite(result.log.back().train_loss));
}

TEST_CASE("checkpoint round-trip preserves evaluation bit-exactly") {
    CorpusConfig corpus = small_corpus();
    Dataset data = build_synthetic_dataset(101, corpus);
    ModelConfig mc = small_model(corpus);
    Model model(mc, 102);
    TrainConfig tc;
    tc.epochs = 1;
    tc.seed = 103;
    train_model(model, data, tc, temp_dir("rt"));

    EvalConfig ec;
    ec.lead_frames = {1, 4};
    const MetricsReport before = evaluate_model(model, data.test, ec);

    Model reloaded(mc, 104);
    load_checkpoint(temp_dir("rt") + "/checkpoint.fckp", reloaded.parameters());
    const MetricsReport after = evaluate_model(reloaded, data.test, ec);

    CHECK(std::memcmp(&before.mae, &after.mae, sizeof(double)) == 0);
    CHECK(std::memcmp(&before.rmse, &after.rmse, sizeof(double)) == 0);
    for (std::size_t ti = 0; ti < before.csi_values.size(); ++ti)
        for (std::size_t li = 0; li < before.csi_values[ti].size(); ++li) {
            REQUIRE(before.csi_values[ti][li].has_value() == after.csi_values[ti][li].has_value());
            if (before.csi_values[ti][li])
                CHECK(*before.csi_values[ti][li] == *after.csi_values[ti][li]);
        }
}

TEST_CASE("gradcheck suite passes and names the worst parameter") {
    const GradCheckReport report = gradcheck_suite();
    for (const GradCheckCase& c : report.cases) {
        INFO(c.name << " err=" << c.max_rel_err << " worst=" << c.worst_param);
        CHECK(c.pass);
        CHECK(c.max_rel_err < c.tolerance);
    }
    CHECK(report.all_pass);

    bool model_case = false;
    for (const GradCheckCase& c : report.cases)
        if (c.name == "model_end_to_end") {
            model_case = true;
            CHECK(c.tolerance == 1e-3);
        }
    CHECK(model_case);
}

TEST_CASE("a corrupted backward implementation is caught") {
    Parameter w("w", Tensor({4}, {0.5, -1.0, 2.0, 0.25}));
    const auto f = [&] { return sum_all(corrupted_scale(w.value)); };
    CHECK(finite_difference_check({&w}, f) > 0.2);
}

TEST_CASE("synthetic datasets split by scene ranges") {
    CorpusConfig corpus = small_corpus();
    corpus.train_scenes = 2;
    corpus.val_scenes = 1;
    corpus.test_scenes = 1;
    const Dataset data = build_synthetic_dataset(111, corpus);

    const std::size_t per_scene = static_cast<std::size_t>(corpus.synth.n_frames - corpus.t_in - corpus.t_out + 1);
    CHECK(data.train.size() == 2 * per_scene);
    CHECK(data.val.size() == per_scene);
    CHECK(data.test.size() == per_scene);

    for (const SampleWindow& w : data.train) {
        CHECK(w.prior.epochs == w.target.epochs);
        CHECK(w.pwv.epochs == w.hist.epochs);
        CHECK(w.pwv.unit == Unit::Millimeters);
    }

    // Scenes sit on distinct days, so splits cannot share epochs.
    CHECK(data.train.back().target.epochs.back() < data.val.front().hist.epochs.front());
    CHECK(data.val.back().target.epochs.back() < data.test.front().hist.epochs.front());
}
