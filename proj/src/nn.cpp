#include "taskadapt/nn.hpp"

#include <cmath>
#include <cstddef>

namespace taskadapt {

Mlp::Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        layer_offsets_.push_back(total);
        total += static_cast<std::size_t>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
    }
    params_.assign(total, 0.0);
}

void Mlp::init_uniform(Rng& rng) {
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
        const std::size_t off = layer_offsets_[l];
        const std::size_t n = static_cast<std::size_t>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
        for (std::size_t i = 0; i < n; ++i) params_[off + i] = rng.symmetric(bound);
    }
}

std::vector<double> Mlp::forward(const std::vector<double>& input) const {
    Trace trace;
    return forward(input, trace);
}

std::vector<double> Mlp::forward(const std::vector<double>& input, Trace& trace) const {
    trace.activations.clear();
    trace.activations.push_back(input);
    std::vector<double> x = input;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        const int in = dims_[l];
        const int out = dims_[l + 1];
        const double* w = params_.data() + layer_offsets_[l];
        const double* b = w + static_cast<std::size_t>(in) * out;
        std::vector<double> y(static_cast<std::size_t>(out));
        for (int o = 0; o < out; ++o) {
            double acc = b[o];
            const double* row = w + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(o)] = acc;
        }
        if (l + 2 < dims_.size()) {
            for (double& v : y) v = v > 0.0 ? v : 0.0;  // ReLU on hidden layers
        }
        trace.activations.push_back(y);
        x = std::move(y);
    }
    return x;
}

std::vector<double> Mlp::backward(const Trace& trace, const std::vector<double>& output_grad,
                                  std::vector<double>& grad) const {
    std::vector<double> delta = output_grad;
    for (std::size_t l = dims_.size() - 1; l-- > 0;) {
        const int in = dims_[l];
        const int out = dims_[l + 1];
        const std::vector<double>& x = trace.activations[l];
        const std::vector<double>& y = trace.activations[l + 1];
        // Hidden layers stored post-ReLU: gate the incoming gradient.
        if (l + 2 < dims_.size()) {
            for (int o = 0; o < out; ++o)
                if (y[static_cast<std::size_t>(o)] <= 0.0) delta[static_cast<std::size_t>(o)] = 0.0;
        }
        const std::size_t off = layer_offsets_[l];
        double* gw = grad.data() + off;
        double* gb = gw + static_cast<std::size_t>(in) * out;
        const double* w = params_.data() + off;
        std::vector<double> prev(static_cast<std::size_t>(in), 0.0);
        for (int o = 0; o < out; ++o) {
            const double d = delta[static_cast<std::size_t>(o)];
            gb[o] += d;
            double* grow = gw + static_cast<std::size_t>(o) * in;
            const double* wrow = w + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) {
                grow[i] += d * x[static_cast<std::size_t>(i)];
                prev[static_cast<std::size_t>(i)] += d * wrow[i];
            }
        }
        delta = std::move(prev);
    }
    return delta;
}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
    }
}

}  // namespace taskadapt
