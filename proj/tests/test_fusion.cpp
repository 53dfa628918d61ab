#include <gtest/gtest.h>

#include <cmath>

#include "stylecodec/dataset.h"
#include "stylecodec/fusion.h"

using namespace stylecodec;
using nn::Mat;
using nn::Tape;

namespace {

const CorpusWorld& world() {
    static const CorpusWorld w(DatasetConfig{}, TemplateBank::load_default());
    return w;
}

struct Fixture {
    nn::ParamStore store;
    FusionConfig cfg;
    Rng init{3};
    TimbreExtractor extractor{store, cfg, init};
    FusionDecoder decoder{store, cfg, world().scheme(), init};
};

Eigen::VectorXd unit(Rng& rng, int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v.normalized();
}

}  // namespace

TEST(Fusion, ExtractorIsDeterministicAndUnitNorm) {
    Fixture f;
    Rng rng(1);
    const SyntheticUtterance u = synth_utterance(world(), rng);
    const Mat frames = world().speech_frames(u);
    const Eigen::VectorXd a = f.extractor.extract(frames), b = f.extractor.extract(frames);
    EXPECT_EQ(a, b);
    EXPECT_NEAR(a.norm(), 1.0, 1e-6);
    EXPECT_THROW(f.extractor.extract(Mat(0, 32)), std::invalid_argument);
}

TEST(Fusion, IdentityModulationIsPlainNormalization) {
    Rng rng(2);
    Mat hidden(7, 64);
    for (Eigen::Index i = 0; i < hidden.size(); ++i) hidden.data()[i] = static_cast<float>(rng.normal());
    Eigen::VectorXd t = Eigen::VectorXd::Zero(32);
    t(0) = 1.0;
    for (bool exact : {false, true}) {
        nn::ParamStore store;
        FusionConfig cfg;
        cfg.paper_exact_eq4 = exact;
        Rng init(3);
        FusionDecoder dec(store, cfg, world().scheme(), init);
        store.get("fusion.gamma.w").value.setZero();
        store.get("fusion.gamma.w").value.row(0).setOnes();
        store.get("fusion.beta.w").value.setZero();
        Tape tp(false);
        const Mat got = tp.value(dec.cond_norm(tp, tp.constant(hidden), tp.constant(to_row(t))));
        const Mat want = tp.value(nn::time_norm(tp, tp.constant(hidden), cfg.norm_eps, exact));
        EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-6f);
    }
}

TEST(Fusion, ConstantHiddenGivesShiftOnly) {
    Fixture f;
    Rng rng(3);
    const Eigen::VectorXd t = unit(rng, 32);
    Tape tp(false);
    const Mat out = tp.value(f.decoder.cond_norm(tp, tp.constant(Mat::Constant(5, 64, 2.5f)), tp.constant(to_row(t))));
    const Mat beta = to_row(t) * f.store.get("fusion.beta.w").value;
    for (int r = 0; r < 5; ++r) EXPECT_LT((out.row(r) - beta).cwiseAbs().maxCoeff(), 1e-5f);
}

TEST(Fusion, DistinctTimbresGiveDistinctOutputs) {
    Fixture f;
    Rng rng(4);
    Mat hidden(6, 64);
    for (Eigen::Index i = 0; i < hidden.size(); ++i) hidden.data()[i] = static_cast<float>(rng.normal());
    Tape tp(false);
    const Mat a = tp.value(f.decoder.cond_norm(tp, tp.constant(hidden), tp.constant(to_row(unit(rng, 32)))));
    const Mat b = tp.value(f.decoder.cond_norm(tp, tp.constant(hidden), tp.constant(to_row(unit(rng, 32)))));
    EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-3f);
}

TEST(Fusion, AssembleSeparatesTimbreFromAttributes) {
    Fixture f;
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const SyntheticUtterance u = synth_utterance(world(), rng);
        const FinalUtterance a = f.decoder.assemble(u.codec, unit(rng, 32));
        const FinalUtterance b = f.decoder.assemble(u.codec, unit(rng, 32));
        EXPECT_EQ(a.attributes.bins, b.attributes.bins);
        EXPECT_EQ(a.frame_phonemes, b.frame_phonemes);
        EXPECT_EQ(a.attributes.bins[1], static_cast<int>(u.labels.pitch));
        EXPECT_EQ(a.frame_phonemes, u.phoneme_per_frame());
        EXPECT_NEAR(a.timbre_readout.norm(), 1.0, 1e-5);
    }
    const SyntheticUtterance u = synth_utterance(world(), rng);
    EXPECT_THROW(f.decoder.assemble(u.codec, Eigen::VectorXd::Zero(32)), std::invalid_argument);
}

TEST(Fusion, RowConversionRoundTrip) {
    Eigen::VectorXd v(3);
    v << 1.5, -2.0, 0.25;
    EXPECT_EQ(from_row(to_row(v)), v);
    EXPECT_EQ(to_row(v).rows(), 1);
}
