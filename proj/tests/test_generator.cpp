#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "stylecodec/generator.h"

using namespace stylecodec;
using nn::Mat;
using nn::Tape;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig c;
    c.text_vocab = 12;
    c.style_dim = 6;
    c.d_model = 32;
    c.heads = 4;
    c.text_blocks = 1;
    c.decoder_blocks = 1;
    return c;
}

struct Fixture {
    nn::ParamStore store;
    GeneratorConfig cfg = small_config();
    Rng init{5};
    CodecGenerator gen{store, cfg, init};
};

Mat random_frames(Rng& rng, int T, int d) {
    Mat m(T, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
    return m;
}

CodecMatrix random_codec(Rng& rng, int T, const ChannelLayout& layout) {
    CodecMatrix c;
    c.layout = layout;
    c.tokens.resize(T, layout.channels());
    for (Eigen::Index i = 0; i < c.tokens.size(); ++i) c.tokens.data()[i] = static_cast<int>(rng.below(64));
    return c;
}

// Kolmogorov distribution tail 2 sum (-1)^{k-1} exp(-2 k^2 x^2).
double ks_pvalue(double d, int n) {
    const double x = std::sqrt(static_cast<double>(n)) * d;
    double p = 0.0;
    for (int k = 1; k < 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x * x);
    return std::clamp(p, 0.0, 1.0);
}

}  // namespace

TEST(Generator, TextEncoderIsDeterministicAndPositionAware) {
    Fixture f;
    const std::vector<int> seq = {1, 2, 3, 4, 5}, rev = {5, 4, 3, 2, 1};
    Tape t(false);
    const Mat a = t.value(f.gen.text_encode(t, seq));
    const Mat b = t.value(f.gen.text_encode(t, seq));
    const Mat r = t.value(f.gen.text_encode(t, rev));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.rows(), 5);
    EXPECT_EQ(a.cols(), 32);
    Mat r_back = r.colwise().reverse();
    EXPECT_GT((a - r_back).cwiseAbs().maxCoeff(), 1e-4f);
    EXPECT_THROW(f.gen.text_encode(t, std::vector<int>{}), std::invalid_argument);
    EXPECT_THROW(f.gen.text_encode(t, std::vector<int>{12}), std::out_of_range);
}

TEST(Generator, StyleFusionIsResidual) {
    Fixture f;
    Tape t(false);
    const std::vector<int> seq = {1, 2, 3};
    nn::Var h = f.gen.text_encode(t, seq);
    f.store.get("gen.fuse.v.w").value.setZero();
    const Mat fused = t.value(f.gen.fuse_style(t, h, t.constant(Mat::Zero(1, 6))));
    EXPECT_EQ(fused.rows(), 3);
    EXPECT_LT((fused - t.value(h)).cwiseAbs().maxCoeff(), 1e-6f);
}

TEST(Generator, DifferentStylesGiveDifferentFusedStates) {
    Fixture f;
    Rng rng(1);
    Tape t(false);
    const std::vector<int> seq = {1, 2, 3};
    nn::Var h = f.gen.text_encode(t, seq);
    const Mat a = t.value(f.gen.fuse_style(t, h, t.constant(random_frames(rng, 1, 6))));
    const Mat b = t.value(f.gen.fuse_style(t, h, t.constant(random_frames(rng, 1, 6))));
    EXPECT_EQ(a.rows(), t.value(h).rows());
    EXPECT_EQ(a.cols(), t.value(h).cols());
    EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-6f);
}

TEST(Generator, DurationLossAndRounding) {
    Fixture f;
    Tape t(false);
    const std::vector<int> target = {2, 3, 5};
    Mat logd(3, 1);
    for (int i = 0; i < 3; ++i) logd(i, 0) = std::log(static_cast<float>(target[static_cast<size_t>(i)]));
    EXPECT_NEAR(t.scalar(f.gen.duration_loss(t, t.constant(logd), target)), 0.0f, 1e-12f);
    Mat extreme(4, 1);
    extreme << -50.0f, -1.0f, 0.0f, 2.0f;
    const auto rounded = CodecGenerator::round_durations(extreme);
    for (int d : rounded) EXPECT_GE(d, 1);
    EXPECT_EQ(rounded[3], static_cast<int>(std::lround(std::exp(2.0))));
}

TEST(Generator, LengthRegulatorRepeatsRows) {
    Tape t(false);
    Mat h(2, 3);
    h << 1, 2, 3, 4, 5, 6;
    const std::vector<int> ones = {1, 1};
    EXPECT_EQ(t.value(CodecGenerator::length_regulate(t, t.constant(h), ones)), h);
    const std::vector<int> dur = {2, 3};
    const Mat out = t.value(CodecGenerator::length_regulate(t, t.constant(h), dur));
    ASSERT_EQ(out.rows(), 5);
    for (int r = 0; r < 5; ++r) EXPECT_EQ(out.row(r), h.row(r < 2 ? 0 : 1));
    // Mean pooling by the same durations recovers the input.
    Mat pooled = Mat::Zero(2, 3);
    int r = 0;
    for (int i = 0; i < 2; ++i) {
        for (int k = 0; k < dur[static_cast<size_t>(i)]; ++k) pooled.row(i) += out.row(r++);
        pooled.row(i) /= static_cast<float>(dur[static_cast<size_t>(i)]);
    }
    EXPECT_EQ(pooled, h);
}

TEST(Generator, MaskAngleEndpoints) {
    Rng rng(2);
    const MaskPlan all = mask_from_angle(rng, 40, 0, 0.0);
    EXPECT_DOUBLE_EQ(all.ratio, 1.0);
    EXPECT_EQ(all.masked_count(), 40);
    const MaskPlan none = mask_from_angle(rng, 40, 0, std::numbers::pi / 2);
    EXPECT_NEAR(none.ratio, 0.0, 1e-15);
    EXPECT_EQ(none.masked_count(), 0);
}

TEST(Generator, MaskRatioFollowsCosineLaw) {
    Rng rng(3);
    const int n = 100000;
    std::vector<double> ratios(n);
    double sum = 0.0;
    long masked = 0;
    for (int i = 0; i < n; ++i) {
        const MaskPlan p = sample_mask(rng, 20, 0);
        ratios[static_cast<size_t>(i)] = p.ratio;
        sum += p.ratio;
        masked += p.masked_count();
    }
    EXPECT_NEAR(sum / n, 2.0 / std::numbers::pi, 0.005);
    EXPECT_NEAR(static_cast<double>(masked) / (20.0 * n), 2.0 / std::numbers::pi, 0.005);
    std::sort(ratios.begin(), ratios.end());
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
        const double cdf = 1.0 - 2.0 * std::acos(ratios[static_cast<size_t>(i)]) / std::numbers::pi;
        d = std::max({d, std::abs(cdf - double(i) / n), std::abs(cdf - double(i + 1) / n)});
    }
    EXPECT_GT(ks_pvalue(d, n), 0.01) << "KS statistic " << d;
}

TEST(Generator, InitialLossIsLogCodebook) {
    Fixture f;
    Rng rng(4);
    double total = 0.0;
    int count = 0;
    for (int i = 0; i < 20; ++i) {
        Tape t(false);
        const CodecMatrix c = random_codec(rng, 30, f.cfg.layout);
        const MaskPlan plan = mask_from_angle(rng, 30, i % 6, 0.3);
        auto l = f.gen.codec_loss(t, t.constant(random_frames(rng, 30, 32)), c, plan);
        total += t.scalar(l.loss);
        ++count;
    }
    EXPECT_NEAR(total / count, std::log(64.0), 0.1);
}

TEST(Generator, UnmaskedTargetsCarryNoLoss) {
    Fixture f;
    Rng rng(5);
    CodecMatrix c = random_codec(rng, 24, f.cfg.layout);
    const MaskPlan plan = mask_from_angle(rng, 24, 3, 1.0);
    ASSERT_GT(plan.masked_count(), 0);
    ASSERT_LT(plan.masked_count(), 24);
    const Mat frames = random_frames(rng, 24, 32);
    Tape t(false);
    nn::Var logits = f.gen.decoder_logits(t, t.constant(frames), c.tokens, 3, plan.mask);
    std::vector<int> tgt = c.channel(3);
    const float base = t.scalar(nn::cross_entropy_masked(t, logits, tgt, plan.mask));
    for (size_t r = 0; r < tgt.size(); ++r) {
        if (!plan.mask[r]) tgt[r] = (tgt[r] + 17) % 64;
    }
    EXPECT_EQ(t.scalar(nn::cross_entropy_masked(t, logits, tgt, plan.mask)), base);
    // Values at masked positions never reach the network either.
    CodecMatrix hidden = c;
    for (int r = 0; r < 24; ++r) {
        if (plan.mask[static_cast<size_t>(r)]) hidden.tokens(r, 3) = (hidden.tokens(r, 3) + 5) % 64;
    }
    Tape t2(false);
    EXPECT_EQ(t2.value(f.gen.decoder_logits(t2, t2.constant(frames), hidden.tokens, 3, plan.mask)), t.value(logits));
}

TEST(Generator, EmptyMaskIsSkippedWithZeroLoss) {
    Fixture f;
    Rng rng(6);
    const CodecMatrix c = random_codec(rng, 10, f.cfg.layout);
    MaskPlan plan;
    plan.channel = 1;
    plan.mask.assign(10, 0);
    Tape t;
    auto l = f.gen.codec_loss(t, t.constant(random_frames(rng, 10, 32)), c, plan);
    EXPECT_TRUE(l.skipped);
    EXPECT_EQ(t.scalar(l.loss), 0.0f);
}

TEST(Generator, CommitScheduleCoversEveryPositionOnce) {
    for (int T : {1, 2, 5, 17, 48}) {
        for (int J : {1, 2, 4, 8, 12}) {
            int total = 0, prev = 0;
            for (int j = 0; j < J; ++j) {
                const int now = DecodeSchedule::committed_after(T, j, J);
                EXPECT_GE(now, prev);
                if (prev < T) {
                    EXPECT_GT(now, prev);
                }
                total += DecodeSchedule::retain_count(T, j, J);
                prev = now;
            }
            EXPECT_EQ(total, T);
            EXPECT_EQ(DecodeSchedule::committed_after(T, J - 1, J), T);
        }
    }
    DecodeSchedule s;
    s.initial_temperature = 2.0;
    EXPECT_DOUBLE_EQ(s.temperature(0, 5), 2.0);
    EXPECT_DOUBLE_EQ(s.temperature(4, 5), 0.0);
    EXPECT_DOUBLE_EQ(s.temperature(0, 1), 0.0);
}

TEST(Generator, CommittedPositionsNeverChange) {
    Fixture f;
    Rng rng(7);
    const Mat frames = random_frames(rng, 19, 32);
    DecodeTrace trace;
    Rng dr(8);
    const CodecMatrix out = f.gen.iterative_decode(frames, DecodeSchedule::standard(f.cfg), dr, &trace);
    ASSERT_EQ(trace.commits.size(), 6u);
    for (const auto& per_iter : trace.commits) {
        std::set<int> seen;
        size_t total = 0;
        for (const auto& commits : per_iter) {
            for (int r : commits) EXPECT_TRUE(seen.insert(r).second) << "position committed twice";
            total += commits.size();
        }
        EXPECT_EQ(total, 19u);
    }
    for (Eigen::Index i = 0; i < out.tokens.size(); ++i) {
        EXPECT_GE(out.tokens.data()[i], 0);
        EXPECT_LT(out.tokens.data()[i], 64);
    }
}

TEST(Generator, SingleIterationIsGreedy) {
    Fixture f;
    Rng rng(9);
    const Mat frames = random_frames(rng, 12, 32);
    DecodeSchedule s = DecodeSchedule::standard(f.cfg);
    std::fill(s.iterations.begin(), s.iterations.end(), 1);
    Rng r1(1), r2(2);
    const CodecMatrix a = f.gen.iterative_decode(frames, s, r1);
    const CodecMatrix b = f.gen.iterative_decode(frames, s, r2);
    EXPECT_EQ(a, b);
    // Channel 0 equals the argmax of fully masked logits.
    Tape t(false);
    const std::vector<uint8_t> all(12, 1);
    const Mat logits = t.value(f.gen.decoder_logits(t, t.constant(frames), TokenGrid::Zero(12, 6), 0, all));
    for (int r = 0; r < 12; ++r) {
        Eigen::Index best;
        logits.row(r).maxCoeff(&best);
        EXPECT_EQ(a.tokens(r, 0), best);
    }
}

TEST(Generator, FramePositionTableFastestPeriodIsTwo) {
    const Mat pe = frame_position_table(10, 8);
    for (int r = 0; r + 2 < 10; ++r) {
        EXPECT_NEAR(pe(r, 0), pe(r + 2, 0), 1e-5f);
    }
    EXPECT_GT(std::abs(pe(0, 0) - pe(1, 0)), 0.5f);
}
