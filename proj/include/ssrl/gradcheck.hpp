#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ssrl/graph.hpp"
#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

/// One differentiable quantity to verify: a mutable value tensor (parameter
/// or network input) paired with a snapshot of its analytic gradient.
template <typename Real>
struct GradTarget {
    std::string name;
    Tensor<Real>* value = nullptr;
    Tensor<Real> analytic;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_name;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;

    std::string summary() const {
        std::ostringstream os;
        os << "max rel err " << max_rel_err << " at '" << worst_name << "'[" << worst_index
           << "]: analytic " << worst_analytic << ", numeric " << worst_numeric << " ("
           << coords_checked << " coordinates)";
        return os.str();
    }
};

/// Runs the objective twice (must be bitwise reproducible — stochastic
/// dropout or any other per-call randomness is rejected), backpropagates,
/// and snapshots d objective / d value for every trainable parameter and
/// every tensor in `inputs`.
template <typename Real>
std::vector<GradTarget<Real>> analytic_gradients(
    Graph<Real>& g, Workspace<Real>& ws, const std::function<double()>& objective,
    const std::map<std::string, Tensor<Real>*>& inputs = {}) {
    const double l0 = objective();
    const double l1 = objective();
    if (!(l0 == l1))
        throw NumericError("gradient check: objective is not deterministic (" + std::to_string(l0) +
                           " vs " + std::to_string(l1) + "); use a mode without stochastic dropout");
    g.zero_grads();
    g.backward(ws);
    std::vector<GradTarget<Real>> targets;
    for (auto& p : g.params()) {
        if (!p.trainable) continue;
        targets.push_back({p.name, &p.value, p.grad});
    }
    for (const auto& [name, tensor] : inputs) {
        const std::size_t node = static_cast<std::size_t>(g.input_id(name));
        GradTarget<Real> t;
        t.name = "input:" + name;
        t.value = tensor;
        t.analytic = ws.cot_set[node] ? ws.cot[node] : Tensor<Real>(tensor->shape());
        targets.push_back(std::move(t));
    }
    return targets;
}

/// Central-difference comparison against the analytic snapshot. When a
/// tensor has more coordinates than `max_coords_per_target`, a deterministic
/// subset is sampled without replacement. rel_err uses a denominator floor
/// so near-zero gradient pairs compare absolutely.
template <typename Real>
GradCheckReport fd_compare(const std::function<double()>& objective,
                           std::vector<GradTarget<Real>>& targets, double h,
                           std::size_t max_coords_per_target, std::uint64_t seed,
                           double denom_floor = 1e-6) {
    GradCheckReport rep;
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
        GradTarget<Real>& t = targets[ti];
        const std::size_t n = t.value->size();
        std::vector<std::size_t> coords;
        if (n <= max_coords_per_target) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            // Floyd's algorithm: max_coords distinct indices in [0, n).
            Rng rng = make_rng(derive_seed(seed, 0x66646373ULL, ti));
            std::vector<char> taken(n, 0);
            for (std::size_t j = n - max_coords_per_target; j < n; ++j) {
                std::size_t r = static_cast<std::size_t>(uniform_index(rng, j + 1));
                if (taken[r]) r = j;
                taken[r] = 1;
                coords.push_back(r);
            }
        }
        for (const std::size_t i : coords) {
            Real& slot = (*t.value)[i];
            const Real orig = slot;
            slot = static_cast<Real>(static_cast<double>(orig) + h);
            const double lp = objective();
            slot = static_cast<Real>(static_cast<double>(orig) - h);
            const double lm = objective();
            slot = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = static_cast<double>(t.analytic[i]);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), denom_floor});
            const double rel = std::abs(analytic - numeric) / denom;
            ++rep.coords_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_name = t.name;
                rep.worst_index = i;
                rep.worst_analytic = analytic;
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

/// Convenience wrapper: analytic pass then FD sweep over all trainable
/// parameters plus the given inputs.
template <typename Real>
GradCheckReport grad_check(Graph<Real>& g, Workspace<Real>& ws,
                           const std::function<double()>& objective,
                           std::map<std::string, Tensor<Real>*> inputs, double h,
                           std::size_t max_coords_per_target, std::uint64_t seed,
                           double denom_floor = 1e-6) {
    auto targets = analytic_gradients(g, ws, objective, inputs);
    return fd_compare(objective, targets, h, max_coords_per_target, seed, denom_floor);
}

} // namespace ssrl
