#pragma once

// Encoder-decoder codec generator: text encoder, cross-attention style
// fusion, duration predictor, length regulator, and a bidirectional masked
// token decoder trained one channel at a time and decoded by
// confidence-ranked iterative sampling.

#include <cstdint>
#include <span>
#include <vector>

#include "stylecodec/codec.h"
#include "stylecodec/nn.h"
#include "stylecodec/rng.h"

namespace stylecodec {

enum class ConfidenceMode { SampledProbability, MaxProbability };

struct GeneratorConfig {
    int text_vocab = 40;
    int style_dim = 16;
    ChannelLayout layout;
    int d_model = 128;
    int heads = 4;
    int ff_mult = 2;
    int text_blocks = 2;
    int decoder_blocks = 4;
    int conv_kernel = 3;
    int first_channel_iterations = 8;
    int later_channel_iterations = 4;
    double initial_temperature = 1.0;
    ConfidenceMode confidence = ConfidenceMode::SampledProbability;

    void validate() const;
};

struct MaskPlan {
    int channel = 0;
    double ratio = 0.0;
    std::vector<uint8_t> mask;  // 1 = masked (predicted), 0 = visible

    int masked_count() const;
};

// Mask ratio p = cos(u), u ~ U[0, pi/2]; entries i.i.d. Bernoulli(p).
MaskPlan sample_mask(Rng& rng, int T, int channel);
MaskPlan mask_from_angle(Rng& rng, int T, int channel, double angle);

struct DecodeSchedule {
    std::vector<int> iterations;  // per channel
    double initial_temperature = 1.0;

    static DecodeSchedule standard(const GeneratorConfig& cfg);
    // Cumulative committed positions after iteration j (0-based) of J.
    static int committed_after(int T, int j, int J);
    // Positions committed at iteration j.
    static int retain_count(int T, int j, int J);
    double temperature(int j, int J) const;
};

struct DecodeTrace {
    // Per channel, per iteration: positions committed at that iteration.
    std::vector<std::vector<std::vector<int>>> commits;
};

class CodecGenerator {
public:
    CodecGenerator(nn::ParamStore& store, GeneratorConfig cfg, Rng& init_rng);

    const GeneratorConfig& config() const { return cfg_; }

    // L x d hidden sequence. Throws on empty input or out-of-vocabulary ids.
    nn::Var text_encode(nn::Tape& t, std::span<const int> content) const;
    // Cross-attention over a single style memory slot; residual output.
    nn::Var fuse_style(nn::Tape& t, nn::Var text_hidden, nn::Var style) const;
    // L x 1 predicted log-durations.
    nn::Var predict_log_durations(nn::Tape& t, nn::Var text_state) const;
    nn::Var duration_loss(nn::Tape& t, nn::Var log_durations, std::span<const int> target) const;
    static std::vector<int> round_durations(const nn::Mat& log_durations);
    // Repeats phoneme row i durations[i] times.
    static nn::Var length_regulate(nn::Tape& t, nn::Var text_state, std::span<const int> durations);

    // T x codebook logits for channel plan.channel. Conditioning: frames,
    // channels < i as given, visible tokens of channel i, MASK elsewhere.
    nn::Var decoder_logits(nn::Tape& t, nn::Var frames, const TokenGrid& tokens, int channel,
                           std::span<const uint8_t> mask) const;

    struct CodecLoss {
        nn::Var loss;
        bool skipped = false;
    };
    // Cross-entropy over masked positions of plan.channel. An empty mask
    // yields a zero constant and skipped = true.
    CodecLoss codec_loss(nn::Tape& t, nn::Var frames, const CodecMatrix& target, const MaskPlan& plan) const;

    CodecMatrix iterative_decode(const nn::Mat& frames, const DecodeSchedule& schedule, Rng& rng,
                                 DecodeTrace* trace = nullptr) const;

private:
    nn::Var block_attention(nn::Tape& t, nn::Var x, const std::string& prefix) const;
    nn::Var block_feedforward(nn::Tape& t, nn::Var x, const std::string& prefix) const;
    nn::Var block_conv(nn::Tape& t, nn::Var x, const std::string& prefix) const;
    nn::Var norm(nn::Tape& t, nn::Var x, const std::string& prefix) const;
    nn::Var P(nn::Tape& t, const std::string& name) const { return t.param(store_.get(name)); }

    nn::ParamStore& store_;
    GeneratorConfig cfg_;
    nn::Mat text_pe_;
    nn::Mat frame_pe_;
};

// Standard sinusoidal table, rows = positions.
nn::Mat sinusoid_table(int positions, int dim);
// Frame table whose fastest component has period 2 frames.
nn::Mat frame_position_table(int positions, int dim);

}  // namespace stylecodec
