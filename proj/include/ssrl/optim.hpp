#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ssrl/graph.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

enum class OptKind { Sgd, Adam };

struct OptimizerConfig {
    OptKind kind = OptKind::Adam;
    double lr = 1e-3;
    double momentum = 0.0;   // sgd
    double beta1 = 0.9;      // adam
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerConfig adam(double lr = 1e-3) { return {OptKind::Adam, lr, 0.0, 0.9, 0.999, 1e-8}; }
    static OptimizerConfig sgd(double lr = 1e-2, double momentum = 0.0) {
        return {OptKind::Sgd, lr, momentum, 0.9, 0.999, 1e-8};
    }
};

/// First-order optimizer over a graph's trainable parameters. Moment buffers
/// are indexed parallel to the graph's parameter list; the step counter
/// advances exactly once per step() for Adam bias correction.
template <typename Real>
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, const Graph<Real>& g) : cfg_(cfg) {
        for (const auto& p : g.params()) {
            m_.emplace_back(p.value.shape());
            if (cfg_.kind == OptKind::Adam) v_.emplace_back(p.value.shape());
        }
    }

    std::size_t steps() const { return steps_; }
    const OptimizerConfig& config() const { return cfg_; }

    void step(Graph<Real>& g) {
        auto& params = g.params();
        ++steps_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            if (!p.trainable) continue;
            if (!p.grad.all_finite())
                throw NumericError("non-finite gradient in parameter '" + p.name + "'");
            if (cfg_.kind == OptKind::Sgd) {
                auto& vel = m_[pi];
                for (std::size_t i = 0; i < p.value.size(); ++i) {
                    const double v = cfg_.momentum * static_cast<double>(vel[i]) +
                                     static_cast<double>(p.grad[i]);
                    vel[i] = static_cast<Real>(v);
                    p.value[i] = static_cast<Real>(static_cast<double>(p.value[i]) - cfg_.lr * v);
                }
            } else {
                auto& m = m_[pi];
                auto& v = v_[pi];
                for (std::size_t i = 0; i < p.value.size(); ++i) {
                    const double gd = p.grad[i];
                    const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gd;
                    const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gd * gd;
                    m[i] = static_cast<Real>(mi);
                    v[i] = static_cast<Real>(vi);
                    const double mhat = mi / bc1;
                    const double vhat = vi / bc2;
                    p.value[i] = static_cast<Real>(static_cast<double>(p.value[i]) -
                                                   cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
                }
            }
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<Tensor<Real>> m_;  // sgd velocity / adam first moment
    std::vector<Tensor<Real>> v_;  // adam second moment
    std::size_t steps_ = 0;
};

} // namespace ssrl
