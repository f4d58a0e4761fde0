#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dmamba/data.hpp"
#include "dmamba/model.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t batch_size = 16;
    int64_t max_epochs = 100;
    uint64_t seed = 0;
    int64_t patience = 15;  // epochs without val improvement; <= 0 disables

    void validate() const;
};

// Adam with bias correction. step() consumes the gradients currently stored
// on the parameters; a non-finite gradient raises NumericalError naming the
// parameter.
class Adam {
public:
    Adam(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg);
    void step();
    void zero_grad() const;
    int64_t step_count() const { return t_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
Tensor cross_entropy(const Tensor& logits, const std::vector<uint8_t>& labels);

struct EvalReport {
    double accuracy = 0.0;  // percent
    int64_t n = 0;
    // Binary confusion counts; drowsy (label 1) is the positive class.
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    // Cross-validation only.
    std::vector<double> fold_accuracies;
    double mean_accuracy = 0.0;
    double ci_half_width = 0.0;
};

struct TrainHistory {
    struct EpochStats {
        int64_t epoch;  // 1-based
        double train_loss;
        double val_accuracy;
    };
    std::vector<EpochStats> epochs;
    double best_val_accuracy = 0.0;
    int64_t best_epoch = 0;
};

// Seeded shuffled mini-batches; per-epoch mean train loss and val accuracy;
// the model is left holding the weights of its best validation epoch.
// Trailing batches of one sample are skipped (batch norm needs >= 2).
TrainHistory train(Model& model, const EEGDataset& train_set, const EEGDataset& val_set,
                   const TrainConfig& cfg);

// Argmax predictions, eval-mode batch norm. Pure.
std::vector<uint8_t> predict(Model& model, const EEGDataset& d);
EvalReport evaluate(Model& model, const EEGDataset& d);

// Stratified k-fold cross-validation. Each fold trains a fresh model from
// builder(fold_seed) on the fold's training part (with a stratified 15%
// validation carve-out) and scores the held-out fold. The interval is the
// Student-t 95% CI over fold accuracies.
EvalReport cross_validate(const std::function<Model(uint64_t fold_seed)>& builder,
                          const EEGDataset& dataset, int64_t k, const TrainConfig& cfg);

// 0.975 quantile of Student's t with the given degrees of freedom.
double student_t_975(int64_t dof);

// mean +- half-width over per-fold accuracies (half-width 0 for k < 2 or
// zero variance).
std::pair<double, double> fold_confidence_interval(const std::vector<double>& fold_accuracies);

}  // namespace dmamba
