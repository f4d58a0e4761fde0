#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "dmamba/gradcheck.hpp"
#include "dmamba/ops.hpp"
#include "dmamba/train.hpp"
#include "helpers.hpp"

using namespace dmamba;
using testutil::random_tensor;

namespace {

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.base_dim = 8;
    cfg.state_size = 4;
    return cfg;
}

TrainConfig fast_train_config(int64_t epochs, uint64_t seed = 0) {
    TrainConfig cfg;
    cfg.max_epochs = epochs;
    cfg.seed = seed;
    cfg.patience = 0;
    return cfg;
}

}  // namespace

TEST_CASE("adam first step matches the analytic value") {
    Tensor p = Tensor::from({2}, {1.0, -3.0}, true);
    TrainConfig cfg;
    Adam opt({{"p", p}}, cfg);
    p.grad() = {1.0, 1.0};
    opt.step();
    // Bias correction makes m_hat = g, v_hat = g^2 on step one.
    const double expected = 1.0 - 0.001 / (1.0 + 1e-8);
    CHECK(p.data()[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(p.data()[1] == doctest::Approx(-3.0 - 0.001 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    Tensor p = Tensor::from({3}, {0.5, -0.5, 2.0}, true);
    TrainConfig cfg;
    Adam opt({{"p", p}}, cfg);
    for (int step = 0; step < 10; ++step) {
        p.zero_grad();
        opt.step();
    }
    CHECK(p.data() == std::vector<double>{0.5, -0.5, 2.0});
}

TEST_CASE("adam: identical gradient histories give identical updates") {
    Tensor a = Tensor::scalar(1.0, true);
    Tensor b = Tensor::scalar(1.0, true);
    TrainConfig cfg;
    Adam opt({{"a", a}, {"b", b}}, cfg);
    Rng rng(3);
    for (int step = 0; step < 50; ++step) {
        const double g = rng.uniform(-2.0, 2.0);
        a.grad()[0] = g;
        b.grad()[0] = g;
        opt.step();
        a.zero_grad();
        b.zero_grad();
    }
    CHECK(a.data()[0] == b.data()[0]);
}

TEST_CASE("adam rejects non-finite gradients with the parameter name") {
    Tensor p = Tensor::scalar(1.0, true);
    TrainConfig cfg;
    Adam opt({{"weights.w", p}}, cfg);
    p.grad()[0] = std::nan("");
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("weights.w"), NumericalError);
}

TEST_CASE("adam update magnitude is invariant to gradient scale at tiny eps") {
    TrainConfig cfg;
    cfg.eps = 1e-12;
    Tensor a = Tensor::scalar(0.0, true);
    Tensor b = Tensor::scalar(0.0, true);
    Adam opt_a({{"a", a}}, cfg);
    Adam opt_b({{"b", b}}, cfg);
    Rng rng(4);
    double prev_a = 0.0, prev_b = 0.0;
    for (int step = 0; step < 1000; ++step) {
        const double g = rng.uniform(0.5, 1.5);
        a.grad()[0] = g;
        b.grad()[0] = 100.0 * g;
        prev_a = a.data()[0];
        prev_b = b.data()[0];
        opt_a.step();
        opt_b.step();
        a.zero_grad();
        b.zero_grad();
    }
    const double da = a.data()[0] - prev_a;
    const double db = b.data()[0] - prev_b;
    CHECK(std::fabs(da - db) / std::fabs(da) < 1e-6);  // same sign, same magnitude
}

TEST_CASE("cross entropy analytic cases and gradient") {
    Tensor uniform = Tensor::from({1, 2}, {0.0, 0.0});
    CHECK(cross_entropy(uniform, {0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor saturated = Tensor::from({1, 2}, {30.0, 0.0});
    CHECK(cross_entropy(saturated, {0}).item() < 1e-12);

    Rng rng(5);
    Tensor logits = random_tensor({4, 3}, rng, -2.0, 2.0);
    std::vector<uint8_t> labels{0, 2, 1, 2};
    auto fn = [&] { return cross_entropy(logits, labels); };
    CHECK(finite_diff_check(fn, {{"logits", logits}}, 1e-5, 1e-6).all_pass());

    // Gradient is (softmax - one_hot)/batch.
    logits.zero_grad();
    {
        Tape tape;
        Tensor loss = cross_entropy(logits, labels);
        tape.backward(loss);
    }
    for (int64_t r = 0; r < 4; ++r) {
        auto probs = softmax_row(
            std::span<const double>(logits.data().data() + r * 3, 3));
        for (int64_t k = 0; k < 3; ++k) {
            const double onehot = labels[static_cast<size_t>(r)] == k ? 1.0 : 0.0;
            CHECK(logits.grad()[static_cast<size_t>(r * 3 + k)] ==
                  doctest::Approx((probs[static_cast<size_t>(k)] - onehot) / 4.0).epsilon(1e-10));
        }
    }

    CHECK_THROWS_AS(cross_entropy(logits, std::vector<uint8_t>{0, 1}), ShapeError);
    CHECK_THROWS_AS(cross_entropy(logits, std::vector<uint8_t>{0, 3, 1, 2}), ValueError);
}

TEST_CASE("training with lr=0 changes nothing") {
    EEGDataset data = synth_generate(60, 11, 5.0);
    SplitSpec spec;
    auto split = split_dataset(data, spec);
    Model model(tiny_model_config(), 7);
    const auto before = model.snapshot_values();

    TrainConfig cfg = fast_train_config(3);
    cfg.lr = 0.0;
    auto history = train(model, subset(data, split.train), subset(data, split.val), cfg);
    // Parameters untouched (running stats do move in train mode).
    for (const auto& [name, tensor] : model.named_parameters()) {
        bool found = false;
        for (size_t i = 0; i < model.registry().items().size(); ++i) {
            if (model.registry().items()[i].name == name) {
                CHECK(tensor.data() == before[i]);
                found = true;
            }
        }
        CHECK(found);
    }
    for (const auto& e : history.epochs) CHECK(e.val_accuracy == history.epochs[0].val_accuracy);
}

TEST_CASE("training is deterministic given the seed") {
    EEGDataset data = synth_generate(60, 13, 5.0);
    SplitSpec spec;
    auto split = split_dataset(data, spec);
    auto run = [&] {
        Model model(tiny_model_config(), 21);
        TrainConfig cfg = fast_train_config(3, 5);
        return train(model, subset(data, split.train), subset(data, split.val), cfg);
    };
    auto h1 = run();
    auto h2 = run();
    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (size_t i = 0; i < h1.epochs.size(); ++i) {
        CHECK(h1.epochs[i].train_loss == h2.epochs[i].train_loss);  // bitwise
        CHECK(h1.epochs[i].val_accuracy == h2.epochs[i].val_accuracy);
    }
}

TEST_CASE("training loss trends down on the synthetic task") {
    EEGDataset data = synth_generate(120, 17, 5.0);
    SplitSpec spec;
    auto split = split_dataset(data, spec);
    Model model(tiny_model_config(), 3);
    TrainConfig cfg = fast_train_config(5, 2);
    auto history = train(model, subset(data, split.train), subset(data, split.val), cfg);
    REQUIRE(history.epochs.size() == 5);
    CHECK(history.epochs.back().train_loss <= history.epochs.front().train_loss);
}

TEST_CASE("evaluate: constant predictor, perfect labels, confusion identity") {
    EEGDataset data = synth_generate(40, 19, 5.0);
    Model model(tiny_model_config(), 9);
    // Force an all-awake predictor: zero head weights, biased logits.
    Tensor head_w = model.registry().find("head.w");
    Tensor head_b = model.registry().find("head.b");
    for (double& v : head_w.data()) v = 0.0;
    head_b.data() = {1.0, 0.0};
    EvalReport report = evaluate(model, data);
    CHECK(report.accuracy == doctest::Approx(50.0));  // balanced classes
    CHECK(report.tp == 0);
    CHECK(report.tn == 20);
    CHECK(report.fn == 20);

    // Relabel with the model's own predictions: accuracy must be 100%.
    EEGDataset echo = data;
    echo.labels = predict(model, data);
    CHECK(evaluate(model, echo).accuracy == 100.0);

    // accuracy == (TP+TN)/n from the confusion counts.
    CHECK(report.accuracy ==
          doctest::Approx(100.0 * static_cast<double>(report.tp + report.tn) /
                          static_cast<double>(report.n)));

    // Pure: repeated evaluation is identical.
    EvalReport again = evaluate(model, data);
    CHECK(again.accuracy == report.accuracy);
    CHECK(again.tp == report.tp);

    EEGDataset empty;
    CHECK_THROWS_AS(evaluate(model, empty), ValueError);
}

TEST_CASE("student-t interval matches the hand-computed fixture") {
    CHECK(student_t_975(4) == doctest::Approx(2.7764).epsilon(1e-6));
    const std::vector<double> folds{79.0, 80.0, 81.0, 80.0, 80.0};
    const auto [mean, half] = fold_confidence_interval(folds);
    CHECK(mean == doctest::Approx(80.0).epsilon(1e-12));
    // s = sqrt(0.5), half = 2.7764 * s / sqrt(5) = 0.87797...
    CHECK(half == doctest::Approx(0.87797).epsilon(1e-4));

    const auto [m2, h2] = fold_confidence_interval({80.0, 80.0, 80.0});
    CHECK(m2 == 80.0);
    CHECK(h2 == 0.0);  // exactly

    // Half-width shrinks with fold variance.
    const auto [m3, h3] = fold_confidence_interval({78.0, 80.0, 82.0, 80.0, 80.0});
    CHECK(h3 > half);
}

TEST_CASE("cross-validation: constant predictor gives zero-variance interval") {
    EEGDataset data = synth_generate(100, 23, 5.0);
    TrainConfig cfg = fast_train_config(1, 3);
    cfg.lr = 0.0;  // the model never moves
    auto builder = [&](uint64_t fold_seed) {
        Model m(tiny_model_config(), 0);  // fixed init regardless of fold
        (void)fold_seed;
        Tensor head_w = m.registry().find("head.w");
        Tensor head_b = m.registry().find("head.b");
        for (double& v : head_w.data()) v = 0.0;
        head_b.data() = {1.0, 0.0};
        return m;
    };
    EvalReport report = cross_validate(builder, data, 5, cfg);
    REQUIRE(report.fold_accuracies.size() == 5);
    for (double acc : report.fold_accuracies) CHECK(acc == doctest::Approx(50.0));
    CHECK(report.mean_accuracy == doctest::Approx(50.0));
    CHECK(report.ci_half_width == 0.0);  // zero variance -> exactly zero
    CHECK(report.n == 100);

    // Deterministic: same seed, same report.
    EvalReport again = cross_validate(builder, data, 5, cfg);
    CHECK(again.fold_accuracies == report.fold_accuracies);
}
