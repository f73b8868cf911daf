#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taskadapt/adaptation.hpp"
#include "taskadapt/instructions.hpp"
#include "taskadapt/rng.hpp"

namespace taskadapt {

// Pairwise adaptation classifier: scalar token embeddings for the 9 tokens of
// (z_x, z_i, z_j), dropout on the embedded features during training, then
// 9 -> 24 -> 24 -> 1 with ReLU hidden layers and a logistic output giving the
// probability that the z_i base policy adapts better than z_j on z_x.
class TransferModel {
public:
    TransferModel();

    void init_uniform(Rng& rng);  // +-1/sqrt(fan_in) per layer, embeddings +-0.1

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    static constexpr double kDropoutRate = 0.2;

    // Inference mode: deterministic, dropout off.
    double forward(const Instruction& z_x, const Instruction& z_i, const Instruction& z_j) const;

    // Binary cross-entropy over the batch plus its gradient accumulated into
    // `grad`. Dropout masks are drawn from `rng` when train_mode is set.
    double batch_gradient(const std::vector<ComparisonRecord>& batch, bool train_mode, Rng* rng,
                          std::vector<double>& grad) const;

    double batch_loss(const std::vector<ComparisonRecord>& batch) const;

private:
    std::vector<double> params_;  // [10 embedding scalars | dense layer weights and biases]
};

struct ClassifierConfig {
    double learning_rate = 0.001;
    long max_steps = 50000;  // desk-scale default; raise for full-scale runs
    int batch_size = 32;
    double validation_fraction = 0.2;  // carved off the training records for early stopping
    int eval_interval = 500;           // steps between early-stop evaluations
    int patience = 10;                 // evaluations without improvement before stopping
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClassifierResult {
    TransferModel model;
    std::vector<double> loss_curve;  // per-step training loss
    long steps_used = 0;
};

ClassifierResult train_classifier(const std::vector<ComparisonRecord>& records,
                                  const ClassifierConfig& cfg);

// Fraction of records where thresholding forward() at 0.5 matches the label;
// an output of exactly 0.5 predicts 1.
double accuracy(const TransferModel& model, const std::vector<ComparisonRecord>& records);

struct RankedBase {
    Instruction instruction{Verb::Goto, Color::Blue, ObjectKind::Box};
    int wins = 0;
    double mean_win_probability = 0.0;
};

// Borda-style ranking over all ordered pairs; ties broken by mean win
// probability, then by instruction order.
std::vector<RankedBase> select_best(const TransferModel& model, const Instruction& z_x,
                                    const std::vector<Instruction>& base_labels);

void save_model(const TransferModel& model, const std::string& path);
TransferModel load_model(const std::string& path);

// Synthetic oracle dataset: label = 1 iff z_i's verb matches z_x's and z_j's
// does not; pairs without a verb-match difference are excluded.
std::vector<ComparisonRecord> synthetic_verb_dataset(int n_records, std::uint64_t seed);

// Control with the same inputs but shuffled labels (no learnable signal).
std::vector<ComparisonRecord> shuffle_labels(std::vector<ComparisonRecord> records,
                                             std::uint64_t seed);

}  // namespace taskadapt
