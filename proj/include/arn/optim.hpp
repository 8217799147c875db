#pragma once

// Adam-style adaptive-moment optimizer, one instance per network. Moment
// buffers mirror the network's parameter layout.

#include <cmath>
#include <cstdint>
#include <vector>

#include "arn/errors.hpp"
#include "arn/network.hpp"
#include "arn/tensor.hpp"

namespace arn {

template <typename T>
class AdamOptimizer {
public:
    AdamOptimizer() = default;

    AdamOptimizer(const Network<T>& net, double learning_rate)
        : lr_(learning_rate), m_(net.make_grad_sink()), v_(net.make_grad_sink()) {
        if (!(lr_ > 0.0)) throw ConfigError("learning rate must be > 0");
    }

    std::int64_t step_count() const { return step_; }

    void step(Network<T>& net, const GradSink<T>& grads) {
        ++step_;
        const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        auto& params = net.params();
        for (std::size_t l = 0; l < params.size(); ++l) {
            update(params[l].w, grads.grads[l].w, m_.grads[l].w, v_.grads[l].w, bias1, bias2);
            update(params[l].b, grads.grads[l].b, m_.grads[l].b, v_.grads[l].b, bias1, bias2);
        }
        if (!net.params_finite()) {
            throw TrainError("adam", step_, net.name() + ": non-finite parameter after update at step " +
                                              std::to_string(step_));
        }
    }

private:
    void update(Tensor<T>& p, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v, double bias1, double bias2) {
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
            const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bias1;
            const double vhat = vi / bias2;
            p[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }

    double lr_ = 1e-4;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    std::int64_t step_ = 0;
    GradSink<T> m_;
    GradSink<T> v_;
};

}  // namespace arn
