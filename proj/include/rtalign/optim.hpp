#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <map>
#include <string>
#include <vector>

namespace rtalign {

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled, applied to matrix parameters
};

// Adam with decoupled weight decay over named parameter buffers.
class AdamW {
public:
    explicit AdamW(AdamSettings settings = {}) : settings_(settings) {}

    template <typename ParamMapT>
    void step(ParamMapT& params, const std::map<std::string, std::vector<double>>& grads,
              double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
        for (auto& [name, param] : params) {
            const auto it = grads.find(name);
            if (it == grads.end()) continue;
            const std::vector<double>& g = it->second;
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.empty()) {
                m.assign(g.size(), 0.0);
                v.assign(g.size(), 0.0);
            }
            const bool decay = settings_.weight_decay > 0.0 && param.rows > 1 && param.cols > 1;
            for (std::size_t i = 0; i < g.size(); ++i) {
                m[i] = settings_.beta1 * m[i] + (1.0 - settings_.beta1) * g[i];
                v[i] = settings_.beta2 * v[i] + (1.0 - settings_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                double w = param.values[i];
                if (decay) w -= lr * settings_.weight_decay * w;
                param.values[i] = w - lr * mhat / (std::sqrt(vhat) + settings_.eps);
            }
        }
    }

private:
    AdamSettings settings_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// Cosine annealing with warm restarts: linear warmup from zero, then cycles
// whose length grows by cycle_mult and whose peak decays by max_lr_decay.
struct CosineWarmRestartSchedule {
    double max_lr = 1.5e-5;
    double min_lr = 2.0e-7;
    double max_lr_decay = 0.8;
    double cycle_mult = 1.8;
    std::size_t warmup_steps = 100;
    std::size_t first_cycle_steps = 200;

    double lr(std::size_t step) const {
        if (step < warmup_steps) {
            return max_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
        }
        std::size_t t = step - warmup_steps;
        double cycle_max = max_lr;
        std::size_t cycle_len = first_cycle_steps;
        while (t >= cycle_len) {
            t -= cycle_len;
            cycle_len = static_cast<std::size_t>(
                std::floor(cycle_mult * static_cast<double>(cycle_len) + 0.5));
            cycle_max *= max_lr_decay;
        }
        const double frac = static_cast<double>(t) / static_cast<double>(cycle_len);
        return min_lr + 0.5 * (cycle_max - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
    }
};

}  // namespace rtalign
