#pragma once

// Objective evaluation through the exact pattern oracle: attribute-control
// accuracy with Wilson intervals, many-to-many diversity measures, timbre
// similarity, split hygiene, and the mixture-count / noise-mode grids.

#include <array>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stylecodec/dataset.h"
#include "stylecodec/model.h"
#include "stylecodec/training.h"

namespace stylecodec {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Proportion {
    long successes = 0;
    long trials = 0;

    double rate() const { return trials ? static_cast<double>(successes) / static_cast<double>(trials) : kNaN; }
    void add(bool ok) {
        successes += ok ? 1 : 0;
        ++trials;
    }
};

// Wilson score interval; z = 1.96 gives 95%.
std::pair<double, double> wilson_interval(long successes, long trials, double z = 1.96);

inline constexpr std::array<const char*, 4> kScoredAttributes = {"pitch", "speed", "energy", "emotion"};

struct EvalReport {
    std::string split;
    int samples = 0;
    std::array<Proportion, 4> accuracy;  // pitch, speed, energy, emotion
    Proportion gender;
    double duration_mae = kNaN;          // frames, predicted vs ground truth
    double timbre_readout_cosine = kNaN; // mean cos(readout, prompt timbre)
    double timbre_auc = kNaN;
    // Many-to-many measures.
    double style_accuracy = kNaN;        // SA-analog: correct label bins
    double degree_variance = kNaN;       // SD-analog (primary scalar)
    double distinct_degree_bins = kNaN;
    double component_entropy = kNaN;     // nats

    nlohmann::json to_json() const;
    std::string table() const;
};

// Accuracy of decoded codecs against target labels.
EvalReport score_codecs(const PatternScheme& scheme, const std::vector<CodecMatrix>& codecs,
                        const std::vector<AttributeLabels>& targets, const std::string& split = "codecs");

// Chance accuracy per scored attribute (uniform labels).
std::array<double, 4> chance_levels(const PatternScheme& scheme);
// True when every attribute is within `k` standard errors of chance.
bool within_chance(const EvalReport& r, const PatternScheme& scheme, double k = 3.0);

// Synthesizes n prompts of the split (cycling through it) with the prompt's
// own ground-truth timbre and scores attributes against the prompted labels.
EvalReport eval_control(StyleCodecModel& model, const std::vector<SyntheticUtterance>& split, int n, const Rng& rng,
                        StyleChoice choice = StyleChoice::Sample, const std::string& split_tag = "test");

// For n_styles prompts, draws n_samples style vectors each and measures
// label accuracy and degree diversity of the decoded outputs.
EvalReport eval_many_to_many(StyleCodecModel& model, const std::vector<SyntheticUtterance>& split, int n_styles,
                             int n_samples, const Rng& rng, StyleChoice choice = StyleChoice::Sample,
                             const std::string& split_tag = "test");

// Same-speaker vs cross-speaker ranking quality of timbre embeddings.
double timbre_auc(const StyleCodecModel& model, const CorpusWorld& world, const std::vector<SyntheticUtterance>& utts,
                  int max_utterances = 200);

struct HygieneReport {
    size_t train_heldout_template_overlap = 0;
    size_t train_heldout_speaker_overlap = 0;
    bool ok() const { return train_heldout_template_overlap == 0 && train_heldout_speaker_overlap == 0; }
};
// Hash intersection of training templates/speakers with the heldout ones.
HygieneReport check_split_hygiene(const CorpusWorld& world, const Corpus& corpus);

// ---- ablation grids ------------------------------------------------------

struct AblationCell {
    int components = 5;
    NoiseMode mode = NoiseMode::IsotropicAcrossClusters;
    std::string name() const;
};

struct AblationConfig {
    std::vector<AblationCell> cells;
    long finetune_steps = 300;
    int n_styles = 20;
    int n_samples = 8;
    uint64_t seed = 17;
    std::string resume_path;  // line-delimited rows; completed cells are skipped

    static std::vector<AblationCell> component_grid();  // K in {3, 5, 7}
    static std::vector<AblationCell> noise_mode_grid(); // four modes at K = 5
};

struct AblationRow {
    AblationCell cell;
    double style_accuracy = kNaN;
    double degree_variance = kNaN;
    double distinct_degree_bins = kNaN;
    double component_entropy = kNaN;
    long variance_entries = 0;   // distinct learnable variance entries
    double sigma_before = kNaN;  // first variance entry before fine-tuning
    double sigma_after = kNaN;
    double final_smsd_loss = kNaN;

    nlohmann::json to_json() const;
    static AblationRow from_json(const nlohmann::json& j);
};

// Each cell starts from `base`, replaces the SMSD head by a fresh one with the
// cell's K and noise mode, fine-tunes the head and style-text encoder on the
// SMSD loss, then runs the many-to-many evaluation with shared seeds.
std::vector<AblationRow> run_ablations(const StyleCodecModel& base, const CorpusWorld& world,
                                       const std::vector<SyntheticUtterance>& train,
                                       const std::vector<SyntheticUtterance>& eval_split, const TrainConfig& train_cfg,
                                       const AblationConfig& cfg);

std::string render_ablation_table(const std::vector<AblationRow>& rows);

// Number of variance entries the mode learns for K components of dimension d.
long learnable_variance_count(NoiseMode mode, int K, int d);

}  // namespace stylecodec
