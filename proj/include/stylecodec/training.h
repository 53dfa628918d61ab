#pragma once

// Joint optimization of the codec generator, duration predictor, style-text
// encoder and SMSD head under teacher forcing, a separate stage for the
// timbre path, and checkpoint persistence.

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylecodec/dataset.h"
#include "stylecodec/model.h"
#include "stylecodec/optim.h"

namespace stylecodec {

enum class TrainStage {
    Joint,     // L_codec + L_dur + L_SMSD over every generator parameter
    SmsdOnly,  // L_SMSD over the style-text encoder and SMSD head only
};

struct TrainConfig {
    int frames_per_batch = 4096;
    double peak_lr = 5e-4;
    long warmup_steps = 500;
    long total_steps = 5000;
    uint64_t seed = 13;
    double w_codec = 1.0;
    double w_dur = 1.0;
    double w_smsd = 1.0;
    double clip_norm = 1.0;
    // Upper end of the per-utterance Gaussian jitter scale added to the
    // ground-truth style vector the generator is conditioned on. 0 = exact.
    double style_jitter = 0.0;
    AdamWConfig adam;
    TrainStage stage = TrainStage::Joint;

    // Optional SMSD refinement after the joint steps: style-text encoder and
    // SMSD head only, with their own batch budget and schedule.
    long smsd_refine_steps = 0;
    long smsd_refine_warmup = 100;
    double smsd_refine_lr = 2e-3;
    int smsd_refine_frames = 1024;

    // Timbre extractor + fusion decoder stage.
    long fusion_steps = 1000;
    long fusion_warmup = 100;
    double fusion_lr = 3e-3;
    int fusion_batch = 16;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
    long step = 0;
    bool refine = false;  // SMSD refinement phase (no generator losses)
    double lr = 0.0;
    double codec = 0.0;
    double dur = 0.0;
    double smsd = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    int utterances = 0;
    int frames = 0;
    int skipped_masks = 0;

    nlohmann::json to_json() const;
};

struct FusionLoss {
    long step = 0;
    double lr = 0.0;
    double extractor = 0.0;  // 1 - cos(extracted, speaker timbre)
    double readout = 0.0;    // 1 - cos(readout, input timbre)
    nlohmann::json to_json() const;
};

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Owns the optimizer state; draws every random choice of step s from
// streams derived from (seed, s), so resuming only needs the step count.
class Trainer {
public:
    Trainer(StyleCodecModel& model, const CorpusWorld& world, const std::vector<SyntheticUtterance>& train,
            TrainConfig cfg);

    LossBreakdown step();
    FusionLoss fusion_step();

    long step_count() const { return step_; }
    long fusion_step_count() const { return fusion_step_; }
    void set_step_counts(long step, long fusion_step) {
        step_ = step;
        fusion_step_ = fusion_step;
    }
    const TrainConfig& config() const { return cfg_; }
    AdamW& optimizer() { return opt_; }
    AdamW& fusion_optimizer() { return fusion_opt_; }
    const AdamW& optimizer() const { return opt_; }
    const AdamW& fusion_optimizer() const { return fusion_opt_; }
    long skipped_masks() const { return skipped_masks_; }

    // Batch for step s: utterance indices whose frame total fits the budget
    // (always at least one utterance).
    std::vector<size_t> batch_indices(long s) const;
    // Steps at or past total_steps belong to the SMSD refinement phase.
    bool refining(long s) const { return s >= cfg_.total_steps; }

    // Runs the joint stage to total_steps, then any SMSD refinement steps;
    // `on_step` sees every breakdown.
    void run(const std::function<void(const LossBreakdown&)>& on_step = {});
    void run_fusion(const std::function<void(const FusionLoss&)>& on_step = {});

private:
    StyleCodecModel& model_;
    const CorpusWorld& world_;
    const std::vector<SyntheticUtterance>& train_;
    TrainConfig cfg_;
    AdamW opt_;
    AdamW fusion_opt_;
    long step_ = 0;
    long fusion_step_ = 0;
    long skipped_masks_ = 0;
};

// Marks parameters trainable for a stage (SmsdOnly freezes the generator).
void configure_trainable(StyleCodecModel& model, TrainStage stage);

// Copies every parameter present with the same shape in both stores,
// skipping names that start with `skip_prefix` when it is non-empty.
void copy_params(const nn::ParamStore& src, nn::ParamStore& dst, const std::string& skip_prefix = {});

// ---- checkpoints ---------------------------------------------------------

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    ModelConfig model;
    TrainConfig train;
    std::vector<std::string> vocabulary;
    long step = 0;
    long fusion_step = 0;
    std::string config_hash;
    std::string data_hash;  // hash of the training corpus manifest, may be empty
};

std::string config_hash(const ModelConfig& model, const TrainConfig& train);

void save_checkpoint(const std::string& path, const StyleCodecModel& model, const Trainer& trainer,
                     const std::string& data_hash = {});

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::unique_ptr<StyleCodecModel> model;
    // Optimizer moments; apply with restore_trainer once a Trainer exists.
    std::vector<nn::Mat> m, v, fm, fv;
    long adam_steps = 0;
    long fusion_adam_steps = 0;
};

// Throws CheckpointError on bad magic, version, hash, or (when `expected`
// is given) a different component count or noise mode.
LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);
void restore_trainer(const LoadedCheckpoint& ckpt, Trainer& trainer);

}  // namespace stylecodec
