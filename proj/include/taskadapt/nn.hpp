#pragma once

#include <cstddef>
#include <vector>

#include "taskadapt/rng.hpp"

namespace taskadapt {

// Fully connected net: linear layers with ReLU between them and a linear
// last layer. Parameters live in one flat vector so gradient checking and
// snapshot serialization can treat every model uniformly.
class Mlp {
public:
    Mlp() = default;
    explicit Mlp(std::vector<int> dims);  // e.g. {684, 128, 128, 7}

    // Uniform +-1/sqrt(fan_in) per layer.
    void init_uniform(Rng& rng);

    const std::vector<int>& dims() const { return dims_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    std::vector<double> forward(const std::vector<double>& input) const;

    // Forward pass keeping pre-activation caches for backward().
    struct Trace {
        std::vector<std::vector<double>> activations;  // input + each layer output
    };
    std::vector<double> forward(const std::vector<double>& input, Trace& trace) const;

    // Accumulates dLoss/dParams into `grad` (same size as params) given
    // dLoss/dOutput; returns dLoss/dInput.
    std::vector<double> backward(const Trace& trace, const std::vector<double>& output_grad,
                                 std::vector<double>& grad) const;

private:
    std::vector<int> dims_;
    std::vector<double> params_;
    std::vector<std::size_t> layer_offsets_;  // offset of layer l's weights; biases follow
};

// Standard Adam with bias correction.
class Adam {
public:
    Adam() = default;
    Adam(std::size_t n_params, double learning_rate, double epsilon)
        : m_(n_params, 0.0), v_(n_params, 0.0), lr_(learning_rate), eps_(epsilon) {}

    void step(std::vector<double>& params, const std::vector<double>& grad);

private:
    std::vector<double> m_;
    std::vector<double> v_;
    double lr_ = 1e-3;
    double eps_ = 1e-8;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    long t_ = 0;
};

}  // namespace taskadapt
