#pragma once

// The assembled system: style-text encoder, SMSD head, codec generator and
// the timbre path, plus the inference pipeline that chains them.

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <vector>

#include "json.hpp"
#include "stylecodec/codec.h"
#include "stylecodec/dataset.h"
#include "stylecodec/fusion.h"
#include "stylecodec/generator.h"
#include "stylecodec/nn.h"
#include "stylecodec/smsd.h"
#include "stylecodec/style_text.h"

namespace stylecodec {

struct ModelConfig {
    DatasetConfig data;
    GeneratorConfig generator;
    StyleTextConfig style_text;
    SmsdConfig smsd;
    FusionConfig fusion;
    uint64_t init_seed = 11;

    // Fills the derived fields (vocab sizes, dimensions, layout) from `data`.
    static ModelConfig for_data(const DatasetConfig& data);
    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// How the global style vector is chosen at inference.
enum class StyleChoice {
    Sample,        // draw from the mixture (full model)
    ModeMean,      // mean of the highest-weight component (deterministic arm)
    MixtureMean,
};

// Counts uses of inference-only paths; training must leave these untouched.
struct InferenceCounters {
    long smsd_samples = 0;
    long predicted_duration_uses = 0;
    long decodes = 0;
};

struct SynthesisRequest {
    StylePrompt prompt;
    std::vector<int> content;
    Eigen::VectorXd timbre;  // unit norm
    StyleChoice style_choice = StyleChoice::Sample;
    std::optional<std::vector<int>> durations;  // overrides the predictor when set
    std::optional<Eigen::VectorXd> style_vector; // overrides SMSD when set
};

struct SynthesisResult {
    CodecMatrix codec;
    FinalUtterance output;
    Eigen::VectorXd style_vector;
    int component = -1;
    std::vector<int> durations;
    bool all_oov = false;
};

class StyleCodecModel {
public:
    StyleCodecModel(ModelConfig cfg, Vocabulary vocab);
    StyleCodecModel(const StyleCodecModel&) = delete;
    StyleCodecModel& operator=(const StyleCodecModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    const PatternScheme& scheme() const { return scheme_; }
    const StyleExtractor& style_extractor() const { return extractor_; }

    // Generator, style-text encoder and SMSD head.
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    // Timbre extractor and fusion decoder, trained as a separate stage.
    nn::ParamStore& fusion_params() { return fusion_params_; }
    const nn::ParamStore& fusion_params() const { return fusion_params_; }

    const CodecGenerator& generator() const { return *generator_; }
    const StyleTextEncoder& style_text() const { return *style_text_; }
    const TimbreExtractor& timbre_extractor() const { return *timbre_; }
    const FusionDecoder& fusion() const { return *fusion_; }

    // Double-precision copy of the SMSD head weights.
    SmsdHead smsd_head() const;
    // Adds scale * grads into the float gradient buffers of the head.
    void add_smsd_grads(const SmsdHead& grads, double scale);

    // Ground-truth style vector of a codec.
    Eigen::VectorXd target_style(const CodecMatrix& codec) const;
    Eigen::VectorXd style_semantics(const std::vector<int>& ids) const;
    MixtureParams style_mixture(const std::vector<int>& ids, Rng* noise_rng = nullptr) const;

    SynthesisResult synthesize(const SynthesisRequest& req, Rng& rng);

    InferenceCounters& counters() { return counters_; }
    const InferenceCounters& counters() const { return counters_; }

private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    PatternScheme scheme_;
    StyleExtractor extractor_;
    nn::ParamStore params_;
    nn::ParamStore fusion_params_;
    std::unique_ptr<StyleTextEncoder> style_text_;
    std::unique_ptr<CodecGenerator> generator_;
    std::unique_ptr<TimbreExtractor> timbre_;
    std::unique_ptr<FusionDecoder> fusion_;
    InferenceCounters counters_;
};

// Names of the float parameters that mirror the SMSD head.
inline constexpr const char* kSmsdPrefix = "smsd.";

Eigen::VectorXd standard_normal(Rng& rng, int n);

}  // namespace stylecodec
