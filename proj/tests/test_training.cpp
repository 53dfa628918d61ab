#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "stylecodec/training.h"

using namespace stylecodec;

namespace {

DatasetConfig tiny_data() {
    DatasetConfig c;
    c.n_train = 60;
    c.n_test_in_domain = 10;
    c.n_test_heldout_style = 10;
    c.n_test_heldout_speaker = 10;
    return c;
}

ModelConfig tiny_model(const DatasetConfig& data) {
    ModelConfig m = ModelConfig::for_data(data);
    m.generator.d_model = 32;
    m.generator.text_blocks = 1;
    m.generator.decoder_blocks = 1;
    m.fusion.extractor_dim = 16;
    m.fusion.extractor_blocks = 1;
    m.fusion.hidden_dim = 16;
    m.fusion.readout_hidden = 16;
    return m;
}

TrainConfig tiny_train() {
    TrainConfig t;
    t.frames_per_batch = 96;
    t.peak_lr = 1e-3;
    t.warmup_steps = 3;
    t.total_steps = 20;
    t.fusion_steps = 5;
    t.fusion_warmup = 1;
    t.fusion_batch = 4;
    return t;
}

struct World {
    DatasetConfig data = tiny_data();
    CorpusWorld world{data, TemplateBank::load_default()};
    Corpus corpus = generate_corpus(world);
    const std::vector<SyntheticUtterance>& train() const { return corpus.split(DataSplit::Train); }
    std::unique_ptr<StyleCodecModel> model(const ModelConfig& cfg) const {
        return std::make_unique<StyleCodecModel>(cfg, Vocabulary::build(world.bank()));
    }
};

const World& shared_world() {
    static const World w;
    return w;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Training, LossBreakdownShapeAndBatchBudget) {
    const World& w = shared_world();
    auto model = w.model(tiny_model(w.data));
    Trainer tr(*model, w.world, w.train(), tiny_train());
    const auto idx = tr.batch_indices(0);
    ASSERT_FALSE(idx.empty());
    int frames = 0;
    for (size_t i : idx) frames += w.train()[i].frames();
    EXPECT_TRUE(frames <= 96 || idx.size() == 1);
    const LossBreakdown lb = tr.step();
    EXPECT_GE(lb.codec, 0.0);
    EXPECT_GE(lb.dur, 0.0);
    EXPECT_TRUE(std::isfinite(lb.smsd));
    EXPECT_EQ(lb.frames, frames);
    EXPECT_EQ(lb.utterances, static_cast<int>(idx.size()));
    const auto j = lb.to_json();
    for (const char* k : {"L_codec", "L_dur", "L_SMSD", "total", "lr", "step"}) EXPECT_TRUE(j.contains(k)) << k;
}

TEST(Training, IdenticalSeedsGiveIdenticalLossCurves) {
    const World& w = shared_world();
    auto a = w.model(tiny_model(w.data));
    auto b = w.model(tiny_model(w.data));
    TrainConfig cfg = tiny_train();
    cfg.total_steps = 8;
    Trainer ta(*a, w.world, w.train(), cfg), tb(*b, w.world, w.train(), cfg);
    for (int s = 0; s < 8; ++s) {
        const LossBreakdown la = ta.step(), lb = tb.step();
        EXPECT_EQ(la.total, lb.total);
        EXPECT_EQ(la.codec, lb.codec);
    }
}

TEST(Training, StyleJitterPerturbsOnlyGeneratorConditioning) {
    const World& w = shared_world();
    auto exact = w.model(tiny_model(w.data));
    auto j1 = w.model(tiny_model(w.data));
    auto j2 = w.model(tiny_model(w.data));
    TrainConfig cfg = tiny_train();
    TrainConfig jit = cfg;
    jit.style_jitter = 0.5;
    Trainer te(*exact, w.world, w.train(), cfg), t1(*j1, w.world, w.train(), jit), t2(*j2, w.world, w.train(), jit);
    // Step 0 runs at zero learning rate, so all three see identical weights.
    const LossBreakdown le = te.step(), l1 = t1.step(), l2 = t2.step();
    EXPECT_EQ(l1.smsd, le.smsd);  // SMSD still regresses the exact target
    EXPECT_NE(l1.dur, le.dur);
    EXPECT_EQ(l1.total, l2.total);
    EXPECT_EQ(l1.codec, l2.codec);
    EXPECT_EQ(j1->counters().smsd_samples, 0);
    jit.style_jitter = -0.1;
    EXPECT_THROW(jit.validate(), std::invalid_argument);
}

TEST(Training, ZeroLearningRateLeavesParametersUnchanged) {
    const World& w = shared_world();
    auto model = w.model(tiny_model(w.data));
    std::vector<nn::Mat> before;
    for (const auto& p : model->params().all()) before.push_back(p->value);
    TrainConfig cfg = tiny_train();
    cfg.peak_lr = 0.0;
    cfg.adam.weight_decay = 0.0;
    Trainer tr(*model, w.world, w.train(), cfg);
    for (int s = 0; s < 4; ++s) tr.step();
    size_t i = 0;
    for (const auto& p : model->params().all()) EXPECT_EQ(p->value, before[i++]) << p->name;
}

TEST(Training, TeacherForcingNeverTouchesInferencePaths) {
    const World& w = shared_world();
    auto model = w.model(tiny_model(w.data));
    Trainer tr(*model, w.world, w.train(), tiny_train());
    for (int s = 0; s < 5; ++s) tr.step();
    tr.run_fusion();
    EXPECT_EQ(model->counters().smsd_samples, 0);
    EXPECT_EQ(model->counters().predicted_duration_uses, 0);
    EXPECT_EQ(model->counters().decodes, 0);
}

TEST(Training, NonFiniteLossAborts) {
    const World& w = shared_world();
    auto model = w.model(tiny_model(w.data));
    model->params().get("gen.head.0.w").value.setConstant(std::nanf(""));
    TrainConfig cfg = tiny_train();
    Trainer tr(*model, w.world, w.train(), cfg);
    EXPECT_THROW(tr.step(), NonFiniteLoss);
}

TEST(Training, SmsdOnlyStageFreezesGenerator) {
    const World& w = shared_world();
    auto model = w.model(tiny_model(w.data));
    const nn::Mat head = model->params().get("gen.head.0.w").value;
    const nn::Mat smsd = model->params().get("smsd.w_mean").value;
    TrainConfig cfg = tiny_train();
    cfg.stage = TrainStage::SmsdOnly;
    Trainer tr(*model, w.world, w.train(), cfg);
    for (int s = 0; s < 5; ++s) tr.step();
    EXPECT_EQ(model->params().get("gen.head.0.w").value, head);
    EXPECT_NE(model->params().get("smsd.w_mean").value, smsd);
}

TEST(Training, SmsdRefinementFollowsJointStepsWithGeneratorFrozen) {
    const World& w = shared_world();
    const ModelConfig mc = tiny_model(w.data);
    TrainConfig cfg = tiny_train();
    cfg.total_steps = 4;
    cfg.smsd_refine_steps = 6;
    cfg.smsd_refine_warmup = 2;
    cfg.smsd_refine_frames = 200;
    auto model = w.model(mc);
    Trainer tr(*model, w.world, w.train(), cfg);
    for (int s = 0; s < 4; ++s) EXPECT_FALSE(tr.step().refine);
    const nn::Mat head = model->params().get("gen.head.0.w").value;
    const nn::Mat smsd = model->params().get("smsd.w_mean").value;
    std::vector<double> ref;
    for (int s = 4; s < 10; ++s) {
        const LossBreakdown lb = tr.step();
        EXPECT_TRUE(lb.refine);
        EXPECT_EQ(lb.codec, 0.0);
        EXPECT_EQ(lb.dur, 0.0);
        EXPECT_EQ(lb.lr, warmup_linear_lr(s - 4, 2, 6, cfg.smsd_refine_lr));
        int frames = 0;
        for (size_t i : tr.batch_indices(s)) frames += w.train()[i].frames();
        EXPECT_LE(frames, 200 + 48);
        ref.push_back(lb.total);
    }
    EXPECT_EQ(model->params().get("gen.head.0.w").value, head);
    EXPECT_NE(model->params().get("smsd.w_mean").value, smsd);
    tr.run();  // already complete
    EXPECT_EQ(tr.step_count(), 10);

    // Resuming across the phase boundary reproduces the refinement losses.
    auto first = w.model(mc);
    Trainer tb(*first, w.world, w.train(), cfg);
    for (int s = 0; s < 4; ++s) tb.step();
    const auto p = temp_path("stylecodec_ckpt_refine.bin");
    save_checkpoint(p.string(), *first, tb);
    LoadedCheckpoint ck = load_checkpoint(p.string(), &mc);
    Trainer tc(*ck.model, w.world, w.train(), ck.meta.train);
    restore_trainer(ck, tc);
    for (int s = 4; s < 10; ++s) EXPECT_NEAR(tc.step().total, ref[static_cast<size_t>(s - 4)], 1e-6);
    std::filesystem::remove(p);
}

TEST(Training, FusionStageReducesLoss) {
    const World& w = shared_world();
    auto model = w.model(tiny_model(w.data));
    TrainConfig cfg = tiny_train();
    cfg.fusion_steps = 60;
    cfg.fusion_warmup = 5;
    Trainer tr(*model, w.world, w.train(), cfg);
    std::vector<double> losses;
    tr.run_fusion([&](const FusionLoss& l) { losses.push_back(l.extractor + l.readout); });
    ASSERT_EQ(losses.size(), 60u);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += losses[static_cast<size_t>(i)];
        last += losses[losses.size() - 1 - static_cast<size_t>(i)];
    }
    EXPECT_LT(last, first);
}

TEST(Training, CheckpointSaveLoadSaveIsByteIdentical) {
    const World& w = shared_world();
    auto model = w.model(tiny_model(w.data));
    Trainer tr(*model, w.world, w.train(), tiny_train());
    for (int s = 0; s < 3; ++s) tr.step();
    tr.fusion_step();
    const auto p1 = temp_path("stylecodec_ckpt_a.bin"), p2 = temp_path("stylecodec_ckpt_b.bin");
    save_checkpoint(p1.string(), *model, tr, "datahash");
    LoadedCheckpoint ck = load_checkpoint(p1.string());
    EXPECT_EQ(ck.meta.step, 3);
    EXPECT_EQ(ck.meta.fusion_step, 1);
    EXPECT_EQ(ck.meta.data_hash, "datahash");
    Trainer tr2(*ck.model, w.world, w.train(), ck.meta.train);
    restore_trainer(ck, tr2);
    save_checkpoint(p2.string(), *ck.model, tr2, "datahash");
    EXPECT_EQ(read_bytes(p1), read_bytes(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST(Training, CheckpointRejectsMismatchAndCorruption) {
    const World& w = shared_world();
    const ModelConfig cfg = tiny_model(w.data);
    auto model = w.model(cfg);
    Trainer tr(*model, w.world, w.train(), tiny_train());
    const auto p = temp_path("stylecodec_ckpt_k.bin");
    save_checkpoint(p.string(), *model, tr);
    ModelConfig other = cfg;
    other.smsd.components = 3;
    EXPECT_THROW(load_checkpoint(p.string(), &other), CheckpointError);
    other = cfg;
    other.smsd.mode = NoiseMode::FullyFactored;
    EXPECT_THROW(load_checkpoint(p.string(), &other), CheckpointError);
    EXPECT_NO_THROW(load_checkpoint(p.string(), &cfg));
    std::string bytes = read_bytes(p);
    bytes[0] = 'X';
    std::ofstream(p, std::ios::binary) << bytes;
    EXPECT_THROW(load_checkpoint(p.string()), CheckpointError);
    EXPECT_THROW(load_checkpoint(temp_path("stylecodec_no_such_file.bin").string()), CheckpointError);
    std::filesystem::remove(p);
}

TEST(Training, ResumeMatchesUnbrokenRun) {
    const World& w = shared_world();
    const ModelConfig cfg = tiny_model(w.data);
    auto unbroken = w.model(cfg);
    Trainer ta(*unbroken, w.world, w.train(), tiny_train());
    std::vector<double> ref;
    for (int s = 0; s < 20; ++s) ref.push_back(ta.step().total);

    auto first = w.model(cfg);
    Trainer tb(*first, w.world, w.train(), tiny_train());
    for (int s = 0; s < 10; ++s) tb.step();
    const auto p = temp_path("stylecodec_ckpt_resume.bin");
    save_checkpoint(p.string(), *first, tb);
    LoadedCheckpoint ck = load_checkpoint(p.string(), &cfg);
    Trainer tc(*ck.model, w.world, w.train(), ck.meta.train);
    restore_trainer(ck, tc);
    for (int s = 10; s < 20; ++s) {
        const LossBreakdown lb = tc.step();
        EXPECT_EQ(lb.step, s);
        EXPECT_NEAR(lb.total, ref[static_cast<size_t>(s)], 1e-6);
    }
    std::filesystem::remove(p);
}

TEST(Training, ScheduleAndConfigValidation) {
    TrainConfig cfg = tiny_train();
    EXPECT_EQ(TrainConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
    cfg.frames_per_batch = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Training, ConfigHashTracksConfig) {
    const World& w = shared_world();
    ModelConfig m = tiny_model(w.data);
    const TrainConfig t = tiny_train();
    const std::string h = config_hash(m, t);
    EXPECT_EQ(h, config_hash(m, t));
    m.smsd.components = 7;
    EXPECT_NE(h, config_hash(m, t));
}
