#ifndef DIME_GRADCHECK_HPP
#define DIME_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dime/core/autodiff.hpp"

namespace dime {

struct GradcheckResult {
    std::string fragment;
    double max_rel_err = 0.0;
    std::string worst_tensor;
    int64_t worst_index = -1;
    bool finite = true;    // analytic gradients all finite
    bool pass = false;
    std::string note;
};

// Compares the analytic gradient of a rebuildable scalar loss against
// central finite differences over every element of every listed leaf.
// The loss closure must recompute the forward pass from the leaves'
// current values on each call.
template <typename T>
GradcheckResult check_gradients(const std::string& name,
                                const std::function<Tensor<T>()>& loss_fn,
                                std::vector<std::pair<std::string, Tensor<T>>> leaves,
                                double h = 1e-5, double tol = 1e-4) {
    GradcheckResult res;
    res.fragment = name;

    for (auto& [lname, leaf] : leaves) leaf.zero_grad();
    Tensor<T> loss = loss_fn();
    loss.backward();

    std::vector<std::vector<T>> analytic;
    analytic.reserve(leaves.size());
    for (auto& [lname, leaf] : leaves) {
        if (leaf.has_grad()) {
            analytic.push_back(leaf.grad());
        } else {
            analytic.emplace_back(leaf.value().v.size(), T(0));
        }
        for (size_t i = 0; i < analytic.back().size(); ++i) {
            if (!std::isfinite(static_cast<double>(analytic.back()[i]))) {
                res.finite = false;
                res.pass = false;
                res.worst_tensor = lname;
                res.worst_index = static_cast<int64_t>(i);
                res.note = "non-finite analytic gradient";
                return res;
            }
        }
    }

    NoGradGuard ng;  // finite differences do not need graphs
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li].second;
        auto& vals = leaf.mutable_value().v;
        for (size_t i = 0; i < vals.size(); ++i) {
            T orig = vals[i];
            vals[i] = orig + static_cast<T>(h);
            T fp = loss_fn().item();
            vals[i] = orig - static_cast<T>(h);
            T fm = loss_fn().item();
            vals[i] = orig;
            double fd = (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * h);
            double an = static_cast<double>(analytic[li][i]);
            double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
            double rel = std::abs(an - fd) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_tensor = leaves[li].first;
                res.worst_index = static_cast<int64_t>(i);
            }
        }
    }
    res.pass = res.finite && res.max_rel_err < tol;
    return res;
}

// The full per-fragment verification suite behind the `gradcheck` CLI
// subcommand (64-bit mode). Defined in src/gradcheck.cpp.
std::vector<GradcheckResult> run_gradcheck_suite(double h = 1e-5, double tol = 1e-4);

}  // namespace dime

#endif
