#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>

#include "vdistill/model.hpp"

namespace vdistill {

// Adam over a fixed set of parameter blocks. The caller accumulates
// gradients (possibly over several samples) and then calls step once.
template <typename T>
class Adam {
public:
    Adam(T lr, std::set<std::string> targets, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), targets_(std::move(targets)) {}

    const std::set<std::string>& targets() const { return targets_; }
    void set_lr(T lr) { lr_ = lr; }

    void step(Model<T>& model, T lr_multiplier = T(1)) {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (const auto& name : targets_) {
            Param<T>* p = model.find(name);
            if (!p) throw std::runtime_error("optimizer target not found: " + name);
            auto& [m, v] = state_[name];
            if (m.size() != p->value.size()) {
                m = Mat<T>(p->value.rows, p->value.cols);
                v = Mat<T>(p->value.rows, p->value.cols);
            }
            const T lr = lr_ * lr_multiplier;
            for (size_t i = 0; i < p->value.size(); ++i) {
                T g = p->grad.data[i];
                m.data[i] = beta1_ * m.data[i] + (T(1) - beta1_) * g;
                v.data[i] = beta2_ * v.data[i] + (T(1) - beta2_) * g * g;
                T mhat = m.data[i] / bc1;
                T vhat = v.data[i] / bc2;
                p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    T lr_;
    T beta1_, beta2_, eps_;
    long t_ = 0;
    std::set<std::string> targets_;
    std::map<std::string, std::pair<Mat<T>, Mat<T>>> state_;
};

}  // namespace vdistill
