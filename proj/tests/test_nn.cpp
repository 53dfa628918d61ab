#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "stylecodec/nn.h"
#include "stylecodec/optim.h"

using namespace stylecodec;
using nn::Mat;
using nn::Tape;
using nn::Var;

namespace {

Mat random_mat(Rng& rng, int r, int c, float sd = 1.0f) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(sd * rng.normal());
    return m;
}

// Builds sum(f(inputs) .* R) for a fixed random R, compares analytic parameter
// gradients with central differences.
void check_gradients(std::vector<Mat> inputs, const std::function<Var(Tape&, std::vector<Var>&)>& f,
                     double tol = 2e-2, float h = 1e-2f) {
    nn::ParamStore store;
    std::vector<nn::Parameter*> ps;
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto& p = store.create("in" + std::to_string(i), static_cast<int>(inputs[i].rows()), static_cast<int>(inputs[i].cols()));
        p.value = inputs[i];
        ps.push_back(&p);
    }
    Rng rng(1234);
    Mat weights;
    auto eval = [&](bool grad) {
        Tape t(grad);
        std::vector<Var> vs;
        for (auto* p : ps) vs.push_back(t.param(*p));
        Var out = f(t, vs);
        if (weights.size() == 0) weights = random_mat(rng, static_cast<int>(t.value(out).rows()), static_cast<int>(t.value(out).cols()));
        Var loss = nn::sum_all(t, nn::mul(t, out, t.constant(weights)));
        const double value = t.scalar(loss);
        if (grad) t.backward(loss);
        return value;
    };
    store.zero_grad();
    eval(true);
    for (auto* p : ps) {
        const Mat analytic = p->grad;
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const float orig = p->value.data()[i];
            p->value.data()[i] = orig + h;
            const double up = eval(false);
            p->value.data()[i] = orig - h;
            const double down = eval(false);
            p->value.data()[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            EXPECT_NEAR(analytic.data()[i], fd, tol * std::max(1.0, std::abs(fd))) << p->name << "[" << i << "]";
        }
    }
}

// Softmax attention computed head by head with explicit loops.
Mat naive_attention(const Mat& q, const Mat& k, const Mat& v, int heads) {
    const int Tq = static_cast<int>(q.rows()), Tk = static_cast<int>(k.rows()), d = static_cast<int>(q.cols());
    const int dh = d / heads;
    Mat out = Mat::Zero(Tq, d);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < Tq; ++i) {
            std::vector<double> s(Tk);
            double mx = -1e300;
            for (int j = 0; j < Tk; ++j) {
                double dot = 0;
                for (int c = 0; c < dh; ++c) dot += double(q(i, h * dh + c)) * k(j, h * dh + c);
                s[j] = dot / std::sqrt(double(dh));
                mx = std::max(mx, s[j]);
            }
            double z = 0;
            for (double& x : s) z += (x = std::exp(x - mx));
            for (int j = 0; j < Tk; ++j) {
                for (int c = 0; c < dh; ++c) out(i, h * dh + c) += static_cast<float>(s[j] / z * v(j, h * dh + c));
            }
        }
    }
    return out;
}

}  // namespace

TEST(Nn, ArithmeticGradients) {
    Rng rng(1);
    check_gradients({random_mat(rng, 3, 4), random_mat(rng, 3, 4)}, [](Tape& t, auto& v) {
        return nn::add(t, nn::mul(t, v[0], v[1]), nn::sub(t, nn::scale(t, v[0], 0.5f), v[1]));
    });
    check_gradients({random_mat(rng, 3, 4), random_mat(rng, 1, 4), random_mat(rng, 1, 4)}, [](Tape& t, auto& v) {
        return nn::add_rowvec(t, nn::mul_rowvec(t, v[0], v[1]), v[2]);
    });
    check_gradients({random_mat(rng, 3, 4), random_mat(rng, 4, 2), random_mat(rng, 1, 2)}, [](Tape& t, auto& v) {
        return nn::linear(t, v[0], v[1], v[2]);
    });
}

TEST(Nn, ActivationGradients) {
    Rng rng(2);
    check_gradients({random_mat(rng, 3, 5)}, [](Tape& t, auto& v) { return nn::gelu(t, v[0]); });
    check_gradients({random_mat(rng, 3, 5)}, [](Tape& t, auto& v) { return nn::tanh(t, v[0]); });
    Mat x = random_mat(rng, 3, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (std::abs(x.data()[i]) < 0.05f) x.data()[i] = 0.5f;  // keep away from the kink
    }
    check_gradients({x}, [](Tape& t, auto& v) { return nn::relu(t, v[0]); });
}

TEST(Nn, NormalizationGradients) {
    Rng rng(3);
    check_gradients({random_mat(rng, 4, 6), random_mat(rng, 1, 6), random_mat(rng, 1, 6)},
                    [](Tape& t, auto& v) { return nn::layer_norm(t, v[0], v[1], v[2]); });
    for (bool by_var : {false, true}) {
        check_gradients({random_mat(rng, 6, 3, 2.0f)}, [by_var](Tape& t, auto& v) { return nn::time_norm(t, v[0], 1e-5f, by_var); });
    }
    check_gradients({random_mat(rng, 3, 4)}, [](Tape& t, auto& v) { return nn::l2_normalize_rows(t, v[0]); });
    check_gradients({random_mat(rng, 5, 4)}, [](Tape& t, auto& v) { return nn::mean_rows(t, v[0]); });
}

TEST(Nn, AttentionMatchesNaiveAndHasCorrectGradients) {
    Rng rng(4);
    const Mat q = random_mat(rng, 5, 8), k = random_mat(rng, 7, 8), v = random_mat(rng, 7, 8);
    Tape t(false);
    const Mat got = t.value(nn::attention(t, t.constant(q), t.constant(k), t.constant(v), 2));
    const Mat want = naive_attention(q, k, v, 2);
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-5f);
    check_gradients({q, k, v}, [](Tape& tp, auto& vs) { return nn::attention(tp, vs[0], vs[1], vs[2], 2); });
}

TEST(Nn, ConvMatchesNaiveAndHasCorrectGradients) {
    Rng rng(5);
    const int T = 6, in = 3, out = 2, kernel = 3;
    const Mat x = random_mat(rng, T, in), w = random_mat(rng, kernel * in, out), b = random_mat(rng, 1, out);
    Tape t(false);
    const Mat got = t.value(nn::conv1d(t, t.constant(x), t.constant(w), t.constant(b), kernel));
    for (int r = 0; r < T; ++r) {
        for (int o = 0; o < out; ++o) {
            double acc = b(0, o);
            for (int j = 0; j < kernel; ++j) {
                const int src = r + j - kernel / 2;
                if (src < 0 || src >= T) continue;
                for (int c = 0; c < in; ++c) acc += double(x(src, c)) * w(j * in + c, o);
            }
            EXPECT_NEAR(got(r, o), acc, 1e-5);
        }
    }
    check_gradients({x, w, b}, [](Tape& tp, auto& vs) { return nn::conv1d(tp, vs[0], vs[1], vs[2], 3); });
    EXPECT_THROW(nn::conv1d(t, t.constant(x), t.constant(w), nn::Var{}, 2), std::invalid_argument);
}

TEST(Nn, GatherAndLossGradients) {
    Rng rng(6);
    const std::vector<int> ids = {2, 0, 2, 1};
    check_gradients({random_mat(rng, 3, 4)}, [&](Tape& t, auto& v) { return nn::gather_rows(t, v[0], ids); });
    const std::vector<int> targets = {1, 0, 3, 2};
    const std::vector<uint8_t> mask = {1, 0, 1, 1};
    check_gradients({random_mat(rng, 4, 5)}, [&](Tape& t, auto& v) { return nn::cross_entropy_masked(t, v[0], targets, mask); });
    const Mat target = random_mat(rng, 3, 2);
    check_gradients({random_mat(rng, 3, 2)}, [&](Tape& t, auto& v) { return nn::mse(t, v[0], target); });
    const Mat dir = random_mat(rng, 1, 4);
    check_gradients({random_mat(rng, 1, 4)}, [&](Tape& t, auto& v) { return nn::cosine_distance(t, v[0], dir); });
}

TEST(Nn, TimeNormZeroMeanAndUnitScale) {
    Rng rng(7);
    const Mat x = random_mat(rng, 40, 3, 3.0f);
    Tape t(false);
    const Mat by_sd = t.value(nn::time_norm(t, t.constant(x), 1e-5f, false));
    const Mat by_var = t.value(nn::time_norm(t, t.constant(x), 1e-5f, true));
    for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(by_sd.col(c).mean(), 0.0, 1e-5);
        EXPECT_NEAR(by_sd.col(c).squaredNorm() / 40.0, 1.0, 1e-3);
        const double mean = x.col(c).cast<double>().mean();
        const double var = (x.col(c).cast<double>().array() - mean).square().mean();
        EXPECT_NEAR(by_var(0, c), (x(0, c) - mean) / (var + 1e-5), 1e-4);
    }
}

TEST(Nn, CrossEntropyOfUniformLogitsIsLogVocabulary) {
    Tape t(false);
    const std::vector<int> targets = {3, 0, 63};
    const std::vector<uint8_t> mask = {1, 1, 1};
    Var l = nn::cross_entropy_masked(t, t.constant(Mat::Zero(3, 64)), targets, mask);
    EXPECT_NEAR(t.scalar(l), std::log(64.0), 1e-6);
    const std::vector<uint8_t> none = {0, 0, 0};
    EXPECT_EQ(t.scalar(nn::cross_entropy_masked(t, t.constant(Mat::Zero(3, 64)), targets, none)), 0.0f);
}

TEST(Nn, ExternalLossRoutesGradient) {
    nn::ParamStore store;
    auto& p = store.create("x", 1, 3);
    p.value << 1, 2, 3;
    store.zero_grad();
    Tape t;
    Mat g(1, 3);
    g << 0.5f, -1.0f, 2.0f;
    Var l = nn::external_loss(t, t.param(p), 7.0, g);
    EXPECT_FLOAT_EQ(t.scalar(l), 7.0f);
    t.backward(l);
    EXPECT_EQ(p.grad, g);
}

TEST(Optim, WarmupLinearSchedule) {
    EXPECT_DOUBLE_EQ(warmup_linear_lr(0, 10, 100, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(warmup_linear_lr(5, 10, 100, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(warmup_linear_lr(10, 10, 100, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(warmup_linear_lr(55, 10, 100, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(warmup_linear_lr(100, 10, 100, 1.0), 0.0);
}

TEST(Optim, ClipScalesToMaxNorm) {
    nn::ParamStore store;
    auto& p = store.create("x", 1, 2);
    p.grad = Mat(1, 2);
    p.grad << 3.0f, 4.0f;
    EXPECT_NEAR(clip_grad_norm(store, 1.0), 5.0, 1e-6);
    EXPECT_NEAR(p.grad.norm(), 1.0, 1e-6);
}

TEST(Optim, AdamFirstStepMovesByLearningRate) {
    nn::ParamStore store;
    auto& p = store.create("x", 1, 2);
    p.value << 1.0f, -1.0f;
    p.grad = Mat(1, 2);
    p.grad << 0.3f, -2.0f;
    AdamW opt(store, AdamWConfig{0.9, 0.95, 1e-8, 0.0});
    opt.step(store, 0.1);
    // Bias-corrected first step is lr * sign(g).
    EXPECT_NEAR(p.value(0, 0), 0.9, 1e-5);
    EXPECT_NEAR(p.value(0, 1), -0.9, 1e-5);
}
