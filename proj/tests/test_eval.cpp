#include <gtest/gtest.h>

#include <cmath>

#include "stylecodec/eval.h"

using namespace stylecodec;

namespace {

struct Fixture {
    DatasetConfig data = [] {
        DatasetConfig c;
        c.n_train = 40;
        c.n_test_in_domain = 12;
        c.n_test_heldout_style = 12;
        c.n_test_heldout_speaker = 12;
        return c;
    }();
    CorpusWorld world{data, TemplateBank::load_default()};
    Corpus corpus = generate_corpus(world);
    ModelConfig cfg = [this] {
        ModelConfig m = ModelConfig::for_data(data);
        m.generator.d_model = 32;
        m.generator.text_blocks = 1;
        m.generator.decoder_blocks = 1;
        return m;
    }();
};

const Fixture& fx() {
    static const Fixture f;
    return f;
}

}  // namespace

TEST(Eval, WilsonBoundsSolveTheScoreEquation) {
    const double z = 1.96;
    for (auto [k, n] : {std::pair{0L, 10L}, {3L, 10L}, {50L, 100L}, {99L, 100L}, {300L, 300L}}) {
        const auto [lo, hi] = wilson_interval(k, n, z);
        const double p = double(k) / n;
        // Each bound x satisfies (p - x)^2 = z^2 x (1 - x) / n.
        for (double x : {lo, hi}) EXPECT_NEAR((p - x) * (p - x), z * z * x * (1 - x) / n, 1e-12);
        EXPECT_LE(lo, p + 1e-12);
        EXPECT_GE(hi, p - 1e-12);
    }
    EXPECT_TRUE(std::isnan(wilson_interval(0, 0).first));
}

TEST(Eval, GroundTruthCodecsScorePerfectly) {
    const auto& split = fx().corpus.split(DataSplit::TestInDomain);
    std::vector<CodecMatrix> codecs;
    std::vector<AttributeLabels> labels;
    for (const auto& u : split) {
        codecs.push_back(u.codec);
        labels.push_back(u.labels);
    }
    const EvalReport r = score_codecs(fx().world.scheme(), codecs, labels);
    for (const auto& a : r.accuracy) EXPECT_EQ(a.rate(), 1.0);
    EXPECT_EQ(r.gender.rate(), 1.0);
}

TEST(Eval, RandomTokenCodecsScoreAtChance) {
    const PatternScheme scheme = fx().world.scheme();
    Rng rng(1);
    std::vector<CodecMatrix> codecs;
    std::vector<AttributeLabels> labels;
    for (int i = 0; i < 1000; ++i) {
        CodecMatrix c;
        c.layout = scheme.layout;
        c.tokens.resize(30, scheme.layout.channels());
        for (Eigen::Index k = 0; k < c.tokens.size(); ++k) c.tokens.data()[k] = static_cast<int>(rng.below(64));
        codecs.push_back(c);
        AttributeLabels l;
        l.pitch = static_cast<Level>(rng.below(3));
        l.speed = static_cast<Level>(rng.below(3));
        l.energy = static_cast<Level>(rng.below(3));
        l.emotion = static_cast<int>(rng.below(5));
        labels.push_back(l);
    }
    const EvalReport r = score_codecs(scheme, codecs, labels);
    const auto chance = chance_levels(scheme);
    EXPECT_DOUBLE_EQ(chance[0], 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(chance[3], 1.0 / 5.0);
    for (size_t a = 0; a < 4; ++a) EXPECT_NEAR(r.accuracy[a].rate(), chance[a], 0.05) << kScoredAttributes[a];
    EXPECT_TRUE(within_chance(r, scheme));
}

TEST(Eval, ModeMeanArmIsDeterministicInStyle) {
    StyleCodecModel model(fx().cfg, Vocabulary::build(fx().world.bank()));
    const auto& u = fx().corpus.split(DataSplit::TestInDomain).front();
    SynthesisRequest req;
    req.prompt = u.style_text;
    req.content = u.content_tokens;
    req.timbre = u.timbre.normalized();
    req.style_choice = StyleChoice::ModeMean;
    Rng a(1), b(2);
    const auto ra = model.synthesize(req, a), rb = model.synthesize(req, b);
    EXPECT_EQ(ra.style_vector, rb.style_vector);
    EXPECT_EQ(ra.component, rb.component);
    req.style_choice = StyleChoice::Sample;
    Rng c(1), d(2);
    EXPECT_NE(model.synthesize(req, c).style_vector, model.synthesize(req, d).style_vector);
}

TEST(Eval, DegenerateMixtureHasZeroComponentEntropy) {
    StyleCodecModel model(fx().cfg, Vocabulary::build(fx().world.bank()));
    model.params().get("smsd.w_logit").value.setZero();
    auto& b = model.params().get("smsd.b_logit").value;
    b.setConstant(-1000.0f);
    b(0, 0) = 0.0f;
    const EvalReport r = eval_many_to_many(model, fx().corpus.split(DataSplit::TestInDomain), 3, 4, Rng(3));
    EXPECT_EQ(r.component_entropy, 0.0);
    EXPECT_EQ(r.samples, 12);
}

TEST(Eval, UntrainedModelControlsAtChance) {
    StyleCodecModel model(fx().cfg, Vocabulary::build(fx().world.bank()));
    const EvalReport r = eval_control(model, fx().corpus.split(DataSplit::TestInDomain), 60, Rng(4));
    EXPECT_EQ(r.samples, 60);
    EXPECT_TRUE(within_chance(r, model.scheme())) << r.table();
    EXPECT_EQ(model.counters().decodes, 60);
}

TEST(Eval, EvaluationIsDeterministic) {
    StyleCodecModel model(fx().cfg, Vocabulary::build(fx().world.bank()));
    const auto& split = fx().corpus.split(DataSplit::TestInDomain);
    const EvalReport a = eval_control(model, split, 8, Rng(5));
    const EvalReport b = eval_control(model, split, 8, Rng(5));
    EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Eval, SplitHygieneHoldsOnGeneratedCorpus) {
    const HygieneReport h = check_split_hygiene(fx().world, fx().corpus);
    EXPECT_TRUE(h.ok());
    Corpus leaky = fx().corpus;
    leaky.splits[0].push_back(leaky.split(DataSplit::TestHeldoutStyle).front());
    EXPECT_FALSE(check_split_hygiene(fx().world, leaky).ok());
}

TEST(Eval, TimbreAucIsAProbability) {
    StyleCodecModel model(fx().cfg, Vocabulary::build(fx().world.bank()));
    const double auc = timbre_auc(model, fx().world, fx().corpus.split(DataSplit::Train), 30);
    EXPECT_GE(auc, 0.0);
    EXPECT_LE(auc, 1.0);
}

TEST(Eval, LearnableVarianceCounts) {
    EXPECT_EQ(learnable_variance_count(NoiseMode::FullyFactored, 5, 16), 80);
    EXPECT_EQ(learnable_variance_count(NoiseMode::Isotropic, 5, 16), 5);
    EXPECT_EQ(learnable_variance_count(NoiseMode::IsotropicAcrossClusters, 5, 16), 1);
    EXPECT_EQ(learnable_variance_count(NoiseMode::FixedIsotropic, 5, 16), 0);
}

TEST(Eval, AblationGridsAndRowRoundTrip) {
    EXPECT_EQ(AblationConfig::component_grid().size(), 3u);
    for (const auto& c : AblationConfig::component_grid()) EXPECT_EQ(c.mode, NoiseMode::IsotropicAcrossClusters);
    EXPECT_EQ(AblationConfig::noise_mode_grid().size(), 4u);
    AblationRow row;
    row.cell = {7, NoiseMode::FullyFactored};
    row.style_accuracy = 0.5;
    row.sigma_before = 0.1 + 1e-17;
    row.sigma_after = 1.0 / 3.0;
    row.variance_entries = 112;
    const AblationRow back = AblationRow::from_json(row.to_json());
    EXPECT_EQ(back.sigma_after, row.sigma_after);
    EXPECT_EQ(back.sigma_before, row.sigma_before);
    EXPECT_EQ(back.cell.components, 7);
    EXPECT_TRUE(std::isnan(back.degree_variance));
}

TEST(Eval, SmallAblationRunIsDeterministicAndFreezesFixedSigma) {
    StyleCodecModel base(fx().cfg, Vocabulary::build(fx().world.bank()));
    AblationConfig cfg;
    cfg.cells = {{3, NoiseMode::IsotropicAcrossClusters}, {5, NoiseMode::FixedIsotropic}};
    cfg.finetune_steps = 3;
    cfg.n_styles = 2;
    cfg.n_samples = 2;
    TrainConfig tc;
    tc.frames_per_batch = 96;
    tc.warmup_steps = 1;
    const auto& train = fx().corpus.split(DataSplit::Train);
    const auto& eval = fx().corpus.split(DataSplit::TestInDomain);
    const auto a = run_ablations(base, fx().world, train, eval, tc, cfg);
    const auto b = run_ablations(base, fx().world, train, eval, tc, cfg);
    ASSERT_EQ(a.size(), 2u);
    for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].to_json().dump(), b[i].to_json().dump());
    EXPECT_EQ(a[1].sigma_before, a[1].sigma_after);
    EXPECT_EQ(a[1].variance_entries, 0);
    EXPECT_EQ(a[0].variance_entries, 1);
    const std::string table = render_ablation_table(a);
    EXPECT_NE(table.find("fixed_isotropic"), std::string::npos);
}
