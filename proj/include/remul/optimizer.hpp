#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "remul/error.hpp"

namespace remul {

// Adam with decoupled weight decay. A zero gradient with zero decay leaves
// parameters bit-identical.
class AdamW {
public:
    struct Options {
        double learning_rate = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
        double weight_decay = 0.0;
    };

    explicit AdamW(Options options) : options_(options) {}

    void step(std::span<double> params, std::span<const double> grads) {
        if (params.size() != grads.size()) throw ShapeMismatch("optimizer: parameter/gradient size mismatch");
        if (m_.size() != params.size()) {
            m_.assign(params.size(), 0.0);
            v_.assign(params.size(), 0.0);
            t_ = 0;
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(options_.beta1, t_);
        const double bc2 = 1.0 - std::pow(options_.beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i];
            m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
            v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g * g;
            if (options_.weight_decay != 0.0) params[i] -= options_.learning_rate * options_.weight_decay * params[i];
            const double update = (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + options_.epsilon);
            if (update != 0.0) params[i] -= options_.learning_rate * update;
        }
    }

    const Options& options() const noexcept { return options_; }
    int steps() const noexcept { return t_; }

private:
    Options options_;
    std::vector<double> m_, v_;
    int t_ = 0;
};

}  // namespace remul
