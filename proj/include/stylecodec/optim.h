#pragma once

#include <vector>

#include "stylecodec/nn.h"

namespace stylecodec {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam over every trainable parameter of a store.
// Moments are indexed by parameter creation order.
class AdamW {
public:
    AdamW(const nn::ParamStore& store, AdamWConfig cfg);

    void step(nn::ParamStore& store, double lr);
    long steps() const { return steps_; }

    std::vector<nn::Mat>& first_moments() { return m_; }
    std::vector<nn::Mat>& second_moments() { return v_; }
    const std::vector<nn::Mat>& first_moments() const { return m_; }
    const std::vector<nn::Mat>& second_moments() const { return v_; }
    void set_steps(long s) { steps_ = s; }

private:
    AdamWConfig cfg_;
    std::vector<nn::Mat> m_;
    std::vector<nn::Mat> v_;
    long steps_ = 0;
};

// Linear warmup from 0 at step 0 to `peak` at `warmup`, then linear decay to
// 0 at `total`.
double warmup_linear_lr(long step, long warmup, long total, double peak);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(nn::ParamStore& store, double max_norm);

}  // namespace stylecodec
