#pragma once

// Synthetic corpus: speakers with fixed timbre, phoneme sequences with
// speed-dependent durations, style prompts, and codec matrices built by the
// invertible pattern map.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylecodec/codec.h"
#include "stylecodec/nn.h"
#include "stylecodec/rng.h"
#include "stylecodec/style_text.h"

namespace stylecodec {

struct DatasetConfig {
    uint64_t seed = 7;
    int n_speakers = 20;
    int text_vocab = 40;
    ChannelLayout layout;
    int n_emotions = 5;
    int degree_levels = 5;
    int timbre_dim = 32;
    int style_dim = 16;
    int min_phonemes = 4;
    int max_phonemes = 9;
    int max_frames = 48;
    double timbre_jitter = 0.1;
    double duration_jitter = 0.15;
    std::array<double, 3> speed_multipliers{1.4, 1.0, 0.7};  // slow, normal, fast
    double heldout_speaker_fraction = 0.2;
    int n_train = 2400;
    int n_test_in_domain = 300;
    int n_test_heldout_style = 300;
    int n_test_heldout_speaker = 300;

    void validate() const;
    PatternScheme scheme() const { return PatternScheme{layout, n_emotions, degree_levels}; }
    nlohmann::json to_json() const;
    static DatasetConfig from_json(const nlohmann::json& j);
};

DatasetConfig make_generator_config(uint64_t seed, int n_speakers, int text_vocab, const ChannelLayout& layout);

enum class DataSplit { Train, TestInDomain, TestHeldoutStyle, TestHeldoutSpeaker };
inline constexpr std::array<DataSplit, 4> kAllSplits = {DataSplit::Train, DataSplit::TestInDomain,
                                                        DataSplit::TestHeldoutStyle, DataSplit::TestHeldoutSpeaker};
std::string_view split_name(DataSplit s);
DataSplit parse_split(std::string_view s);

struct SyntheticUtterance {
    int64_t id = 0;
    int speaker_id = 0;
    std::vector<int> content_tokens;
    StylePrompt style_text;
    AttributeLabels labels;
    AttributeDegrees degrees;
    std::vector<int> durations;
    CodecMatrix codec;
    Eigen::VectorXd timbre;

    int frames() const { return codec.frames(); }
    std::vector<int> phoneme_per_frame() const;
};

// Deterministic tables derived from a DatasetConfig: speaker timbres and
// genders, per-phoneme base durations, the speech-frame projection, and the
// template bank.
class CorpusWorld {
public:
    CorpusWorld(DatasetConfig cfg, TemplateBank bank);

    const DatasetConfig& config() const { return cfg_; }
    const TemplateBank& bank() const { return bank_; }
    PatternScheme scheme() const { return cfg_.scheme(); }

    Gender speaker_gender(int speaker) const;
    const Eigen::VectorXd& speaker_timbre(int speaker) const;
    bool is_heldout_speaker(int speaker) const;
    std::vector<int> speakers(bool heldout) const;
    int base_duration(int phoneme) const { return base_duration_[static_cast<size_t>(phoneme)]; }

    // Latent speech frames of an utterance: projected codec tokens plus the
    // utterance timbre plus deterministic per-utterance noise. This is the
    // input of the timbre extractor.
    nn::Mat speech_frames(const SyntheticUtterance& u) const;
    // Same rendering with the utterance's timbre replaced.
    nn::Mat speech_frames(const SyntheticUtterance& u, const Eigen::VectorXd& timbre) const;

private:
    DatasetConfig cfg_;
    TemplateBank bank_;
    std::vector<Gender> gender_;
    std::vector<Eigen::VectorXd> timbre_;
    std::vector<int> base_duration_;
    std::vector<nn::Mat> token_projection_;  // per channel: codebook x timbre_dim
};

struct UtteranceRequest {
    std::optional<int> speaker;                 // default: random non-heldout speaker
    TemplateSplit template_split = TemplateSplit::Train;
    std::optional<AttributeLabels> labels;      // gender is overridden by the speaker
    std::optional<AttributeDegrees> degrees;
    std::optional<std::vector<int>> content;
    int64_t id = 0;
};

SyntheticUtterance synth_utterance(const CorpusWorld& world, Rng& rng, const UtteranceRequest& req = {});

struct Corpus {
    DatasetConfig config;
    std::array<std::vector<SyntheticUtterance>, 4> splits;

    const std::vector<SyntheticUtterance>& split(DataSplit s) const { return splits[static_cast<size_t>(s)]; }
};

Corpus generate_corpus(const CorpusWorld& world);

nlohmann::json utterance_to_json(const SyntheticUtterance& u);
SyntheticUtterance utterance_from_json(const nlohmann::json& j, const ChannelLayout& layout);

// Manifest: config, seed, layout, category sets, degree-pattern table,
// template bank and split sizes.
nlohmann::json corpus_manifest(const CorpusWorld& world, const Corpus& corpus);

void write_corpus(const std::string& dir, const CorpusWorld& world, const Corpus& corpus);
std::vector<SyntheticUtterance> read_split(const std::string& dir, DataSplit split, const ChannelLayout& layout);
nlohmann::json read_manifest(const std::string& dir);

}  // namespace stylecodec
