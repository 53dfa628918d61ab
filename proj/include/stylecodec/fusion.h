#pragma once

// Timbre path: an attention encoder that turns prompt speech frames into a
// unit timbre embedding, and a conditional normalization that injects the
// timbre into the embedded codec after generation. The toy decoder reads
// attributes and content back through the exact pattern oracle and reads the
// timbre out of the modulated hidden state.

#include <Eigen/Dense>

#include <vector>

#include "stylecodec/codec.h"
#include "stylecodec/nn.h"
#include "stylecodec/rng.h"

namespace stylecodec {

struct FusionConfig {
    int frame_dim = 32;   // speech-frame feature size
    int timbre_dim = 32;
    int extractor_dim = 64;
    int extractor_heads = 4;
    int extractor_blocks = 2;
    int hidden_dim = 64;  // codec-embedding width seen by cond_norm
    int readout_hidden = 64;
    float norm_eps = 1e-5f;
    // Divide the centered hidden state by the variance instead of the
    // standard deviation.
    bool paper_exact_eq4 = false;

    void validate() const;
};

class TimbreExtractor {
public:
    TimbreExtractor(nn::ParamStore& store, const FusionConfig& cfg, Rng& init_rng);

    // 1 x timbre_dim, unit L2 norm. Throws on an empty prompt.
    nn::Var extract(nn::Tape& t, const nn::Mat& prompt_frames) const;
    Eigen::VectorXd extract(const nn::Mat& prompt_frames) const;

private:
    nn::Var P(nn::Tape& t, const std::string& n) const { return t.param(store_.get(n)); }
    nn::ParamStore& store_;
    FusionConfig cfg_;
};

struct FinalUtterance {
    VotedAttributes attributes;
    std::vector<int> frame_phonemes;  // -1 where the content channels disagree
    Eigen::VectorXd timbre_readout;   // unit norm
};

class FusionDecoder {
public:
    FusionDecoder(nn::ParamStore& store, const FusionConfig& cfg, const PatternScheme& scheme, Rng& init_rng);

    const FusionConfig& config() const { return cfg_; }

    // T x hidden_dim embedding of the full codec (sum over channels).
    nn::Var embed_codec(nn::Tape& t, const CodecMatrix& codec) const;
    // Time-axis normalization, then scale W_gamma t and shift W_beta t.
    nn::Var cond_norm(nn::Tape& t, nn::Var hidden, nn::Var timbre) const;
    // 1 x timbre_dim unit readout of the timbre carried by the fused state.
    nn::Var timbre_readout(nn::Tape& t, const CodecMatrix& codec, nn::Var timbre) const;

    // Throws std::invalid_argument when the timbre is not unit norm.
    FinalUtterance assemble(const CodecMatrix& codec, const Eigen::VectorXd& timbre) const;

private:
    nn::Var P(nn::Tape& t, const std::string& n) const { return t.param(store_.get(n)); }
    nn::ParamStore& store_;
    FusionConfig cfg_;
    PatternScheme scheme_;
};

// Per-frame phoneme ids recovered from the content channels.
std::vector<int> decode_content(const CodecMatrix& codec, int text_vocab);

nn::Mat to_row(const Eigen::VectorXd& v);
Eigen::VectorXd from_row(const nn::Mat& m);

}  // namespace stylecodec
