#include "dmamba/train.hpp"

#include <algorithm>
#include <cmath>

#include "dmamba/ops.hpp"

namespace dmamba {

void TrainConfig::validate() const {
    if (lr < 0.0) throw ValueError("learning rate must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ValueError("Adam betas must lie in [0, 1)");
    }
    if (eps <= 0.0) throw ValueError("Adam eps must be positive");
    if (batch_size < 2) throw ValueError("batch size must be >= 2 (batch norm)");
    if (max_epochs < 1) throw ValueError("max_epochs must be >= 1");
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg)
    : params_(std::move(params)), lr_(cfg.lr), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps) {
    cfg.validate();
    for (const auto& [name, t] : params_) {
        t.set_requires_grad(true);
        m_.emplace_back(t.data().size(), 0.0);
        v_.emplace_back(t.data().size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t p = 0; p < params_.size(); ++p) {
        auto& [name, tensor] = params_[p];
        const auto& g = tensor.grad();
        auto& values = tensor.data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw NumericalError("non-finite gradient in parameter " + name);
            }
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            values[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

void Adam::zero_grad() const {
    for (const auto& [name, t] : params_) t.zero_grad();
}

Tensor cross_entropy(const Tensor& logits, const std::vector<uint8_t>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [batch, classes]");
    const int64_t batch = logits.extent(0), classes = logits.extent(1);
    if (static_cast<int64_t>(labels.size()) != batch) {
        throw ShapeError("cross_entropy: label count does not match batch");
    }
    for (uint8_t l : labels) {
        if (l >= classes) {
            throw ValueError("cross_entropy: label " + std::to_string(l) + " out of range [0, " +
                             std::to_string(classes) + ")");
        }
    }
    const auto& ld = logits.data();
    Tensor out(Shape{1});
    double total = 0.0;
    for (int64_t r = 0; r < batch; ++r) {
        const size_t base = static_cast<size_t>(r * classes);
        double mx = ld[base];
        for (int64_t k = 1; k < classes; ++k) mx = std::max(mx, ld[base + static_cast<size_t>(k)]);
        double sum = 0.0;
        for (int64_t k = 0; k < classes; ++k) sum += std::exp(ld[base + static_cast<size_t>(k)] - mx);
        total += mx + std::log(sum) - ld[base + static_cast<size_t>(labels[static_cast<size_t>(r)])];
    }
    out.data()[0] = total / static_cast<double>(batch);
    detail::check_finite(out, "cross_entropy");

    if (detail::tracked({&logits})) {
        out.set_requires_grad(true);
        Tape::active()->record({out}, [logits, out, labels, batch, classes] {
            const double go = out.grad()[0];
            const auto& ld2 = logits.data();
            auto& gl = logits.grad();
            const double inv_batch = 1.0 / static_cast<double>(batch);
            for (int64_t r = 0; r < batch; ++r) {
                const size_t base = static_cast<size_t>(r * classes);
                auto probs = softmax_row(
                    std::span<const double>(ld2.data() + base, static_cast<size_t>(classes)));
                for (int64_t k = 0; k < classes; ++k) {
                    const double onehot = labels[static_cast<size_t>(r)] == k ? 1.0 : 0.0;
                    gl[base + static_cast<size_t>(k)] += go * (probs[static_cast<size_t>(k)] - onehot) * inv_batch;
                }
            }
        });
    }
    return out;
}

TrainHistory train(Model& model, const EEGDataset& train_set, const EEGDataset& val_set,
                   const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0 || val_set.size() == 0) {
        throw ValueError("train: datasets must be non-empty");
    }
    for (uint8_t l : train_set.labels) {
        if (l >= model.config().num_classes) throw ValueError("train: label arity exceeds model classes");
    }

    Adam optimizer(model.named_parameters(), cfg);
    Rng rng(cfg.seed);
    std::vector<int64_t> order(static_cast<size_t>(train_set.size()));
    for (int64_t i = 0; i < train_set.size(); ++i) order[static_cast<size_t>(i)] = i;

    TrainHistory history;
    std::vector<std::vector<double>> best_snapshot;
    for (int64_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        int64_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const size_t bs = end - start;
            if (bs < 2) continue;  // batch norm cannot normalize a single sample
            std::span<const int64_t> idx(order.data() + start, bs);
            Tensor batch = gather_batch(train_set, idx);
            std::vector<uint8_t> labels(bs);
            for (size_t i = 0; i < bs; ++i) labels[i] = train_set.labels[static_cast<size_t>(idx[i])];

            Tape tape;
            Tensor logits = model.forward(batch, NormMode::train);
            Tensor loss = cross_entropy(logits, labels);
            tape.backward(loss);
            optimizer.step();
            optimizer.zero_grad();
            loss_sum += loss.item() * static_cast<double>(bs);
            seen += static_cast<int64_t>(bs);
        }
        const double val_acc = evaluate(model, val_set).accuracy;
        history.epochs.push_back({epoch, seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0, val_acc});
        if (history.best_epoch == 0 || val_acc > history.best_val_accuracy) {
            history.best_val_accuracy = val_acc;
            history.best_epoch = epoch;
            best_snapshot = model.snapshot_values();
        } else if (cfg.patience > 0 && epoch - history.best_epoch >= cfg.patience) {
            break;
        }
    }
    if (!best_snapshot.empty()) model.restore_values(best_snapshot);
    return history;
}

std::vector<uint8_t> predict(Model& model, const EEGDataset& d) {
    NoGrad off;
    std::vector<uint8_t> preds(static_cast<size_t>(d.size()));
    const int64_t eval_batch = 64;
    std::vector<int64_t> idx;
    for (int64_t start = 0; start < d.size(); start += eval_batch) {
        const int64_t end = std::min(d.size(), start + eval_batch);
        idx.clear();
        for (int64_t i = start; i < end; ++i) idx.push_back(i);
        Tensor logits = model.forward(gather_batch(d, idx), NormMode::eval);
        const int64_t classes = logits.extent(1);
        for (int64_t r = 0; r < end - start; ++r) {
            int64_t arg = 0;
            for (int64_t k = 1; k < classes; ++k) {
                if (logits.at({r, k}) > logits.at({r, arg})) arg = k;
            }
            preds[static_cast<size_t>(start + r)] = static_cast<uint8_t>(arg);
        }
    }
    return preds;
}

EvalReport evaluate(Model& model, const EEGDataset& d) {
    if (d.size() == 0) throw ValueError("evaluate: empty dataset");
    const auto preds = predict(model, d);
    EvalReport report;
    report.n = d.size();
    int64_t correct = 0;
    for (int64_t i = 0; i < d.size(); ++i) {
        const bool truth = d.labels[static_cast<size_t>(i)] != 0;
        const bool positive = preds[static_cast<size_t>(i)] != 0;
        correct += truth == positive ? 1 : 0;
        if (truth && positive) report.tp++;
        else if (!truth && !positive) report.tn++;
        else if (!truth && positive) report.fp++;
        else report.fn++;
    }
    report.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(d.size());
    return report;
}

double student_t_975(int64_t dof) {
    static constexpr double kTable[30] = {
        12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060, 2.2622, 2.2281,
        2.2010,  2.1788, 2.1604, 2.1448, 2.1314, 2.1199, 2.1098, 2.1009, 2.0930, 2.0860,
        2.0796,  2.0739, 2.0687, 2.0639, 2.0595, 2.0555, 2.0518, 2.0484, 2.0452, 2.0423};
    if (dof < 1) throw ValueError("t quantile needs dof >= 1");
    if (dof <= 30) return kTable[dof - 1];
    return 1.9600;
}

std::pair<double, double> fold_confidence_interval(const std::vector<double>& fold_accuracies) {
    const size_t k = fold_accuracies.size();
    if (k == 0) throw ValueError("no fold accuracies");
    double mean = 0.0;
    for (double a : fold_accuracies) mean += a;
    mean /= static_cast<double>(k);
    if (k < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double a : fold_accuracies) ss += (a - mean) * (a - mean);
    const double stdev = std::sqrt(ss / static_cast<double>(k - 1));
    const double half = student_t_975(static_cast<int64_t>(k) - 1) * stdev /
                        std::sqrt(static_cast<double>(k));
    return {mean, half};
}

EvalReport cross_validate(const std::function<Model(uint64_t fold_seed)>& builder,
                          const EEGDataset& dataset, int64_t k, const TrainConfig& cfg) {
    const auto folds = stratified_kfold(dataset, k, cfg.seed);
    EvalReport report;
    Rng seeder(cfg.seed);
    for (size_t f = 0; f < folds.size(); ++f) {
        const uint64_t fold_seed = seeder.fork(f).next_u64();
        Model model = builder(fold_seed);

        // Carve a stratified validation set out of the fold's training part
        // for best-epoch selection.
        EEGDataset fold_train = subset(dataset, folds[f].first);
        SplitSpec val_spec;
        val_spec.train_frac = 0.85;
        val_spec.val_frac = 0.15;
        val_spec.test_frac = 0.0;
        val_spec.seed = fold_seed;
        const auto carve = split_dataset(fold_train, val_spec);
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = fold_seed;
        train(model, subset(fold_train, carve.train), subset(fold_train, carve.val), fold_cfg);

        EEGDataset fold_test = subset(dataset, folds[f].second);
        EvalReport fold_report = evaluate(model, fold_test);
        report.fold_accuracies.push_back(fold_report.accuracy);
        report.n += fold_report.n;
        report.tp += fold_report.tp;
        report.tn += fold_report.tn;
        report.fp += fold_report.fp;
        report.fn += fold_report.fn;
    }
    const auto [mean, half] = fold_confidence_interval(report.fold_accuracies);
    report.mean_accuracy = mean;
    report.ci_half_width = half;
    report.accuracy = mean;
    return report;
}

}  // namespace dmamba
