#pragma once

// Central finite-difference verification of reverse-mode gradients.
// Runs in double precision; models are instantiated with T=double so the
// checked code path is the same template code used for float training.

#include <functional>
#include <string>
#include <vector>

#include "engen/autodiff.hpp"

namespace engen {

struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t coords_checked = 0;
    std::string worst_param;
    size_t worst_index = 0;
};

// build: constructs the scalar loss on the given graph from the current
// parameter values. Must be pure (same params -> same loss).
inline GradCheckResult grad_check(const std::vector<Param<double>*>& params,
                                  const std::function<Graph<double>::NodeId(Graph<double>&)>& build,
                                  double eps = 1e-4) {
    for (auto* p : params) p->zero_grad();
    {
        Graph<double> g(true);
        auto loss = build(g);
        g.backward(loss);
    }
    auto eval = [&]() {
        Graph<double> g(false);
        return g.scalar_value(build(g));
    };
    GradCheckResult res;
    for (auto* p : params) {
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            double orig = p->value.data[i];
            p->value.data[i] = orig + eps;
            double fp = eval();
            p->value.data[i] = orig - eps;
            double fm = eval();
            p->value.data[i] = orig;
            double g_fd = (fp - fm) / (2.0 * eps);
            double g_an = p->grad.data[i];
            double denom = std::max({1.0, std::abs(g_an), std::abs(g_fd)});
            double rel = std::abs(g_an - g_fd) / denom;
            ++res.coords_checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = p->name;
                res.worst_index = i;
            }
        }
    }
    return res;
}

} // namespace engen
