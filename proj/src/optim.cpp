#include "stylecodec/optim.h"

#include <algorithm>
#include <cmath>

namespace stylecodec {

AdamW::AdamW(const nn::ParamStore& store, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& p : store.all()) {
        m_.push_back(nn::Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(nn::Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void AdamW::step(nn::ParamStore& store, double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    const auto params = store.all();
    for (size_t i = 0; i < params.size(); ++i) {
        nn::Parameter& p = *params[i];
        if (!p.trainable) continue;
        nn::Mat& m = m_[i];
        nn::Mat& v = v_[i];
        m = static_cast<float>(cfg_.beta1) * m + static_cast<float>(1.0 - cfg_.beta1) * p.grad;
        v = static_cast<float>(cfg_.beta2) * v + static_cast<float>(1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
        if (lr == 0.0) continue;
        const float step_size = static_cast<float>(lr / bc1);
        const float denom_scale = static_cast<float>(1.0 / std::sqrt(bc2));
        p.value *= static_cast<float>(1.0 - lr * cfg_.weight_decay);
        p.value.array() -= step_size * m.array() / (v.array().sqrt() * denom_scale + static_cast<float>(cfg_.eps));
    }
}

double warmup_linear_lr(long step, long warmup, long total, double peak) {
    if (step <= 0) return 0.0;
    if (warmup > 0 && step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (step >= total) return 0.0;
    if (total <= warmup) return peak;
    return peak * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

double clip_grad_norm(nn::ParamStore& store, double max_norm) {
    double sq = 0.0;
    for (const auto& p : store.all()) {
        if (p->trainable) sq += static_cast<double>(p->grad.cast<double>().squaredNorm());
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const float s = static_cast<float>(max_norm / norm);
        for (const auto& p : store.all()) p->grad *= s;
    }
    return norm;
}

}  // namespace stylecodec
