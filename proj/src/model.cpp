#include "stylecodec/model.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stylecodec {

using nlohmann::json;

namespace {

std::string_view confidence_name(ConfidenceMode m) {
    return m == ConfidenceMode::MaxProbability ? "max_probability" : "sampled_probability";
}

ConfidenceMode parse_confidence(std::string_view s) {
    if (s == "max_probability") return ConfidenceMode::MaxProbability;
    if (s == "sampled_probability") return ConfidenceMode::SampledProbability;
    throw std::invalid_argument("unknown confidence mode: " + std::string(s));
}

}  // namespace

Eigen::VectorXd standard_normal(Rng& rng, int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

ModelConfig ModelConfig::for_data(const DatasetConfig& data) {
    ModelConfig m;
    m.data = data;
    m.generator.text_vocab = data.text_vocab;
    m.generator.style_dim = data.style_dim;
    m.generator.layout = data.layout;
    m.style_text.out_dim = data.style_dim;
    m.smsd.input_dim = data.style_dim;
    m.smsd.output_dim = data.style_dim;
    m.fusion.frame_dim = data.timbre_dim;
    m.fusion.timbre_dim = data.timbre_dim;
    return m;
}

void ModelConfig::validate() const {
    data.validate();
    generator.validate();
    smsd.validate();
    fusion.validate();
    if (generator.layout != data.layout || generator.text_vocab != data.text_vocab || generator.style_dim != data.style_dim) {
        throw std::invalid_argument("model config: generator does not match the dataset");
    }
    if (style_text.out_dim != smsd.input_dim || smsd.output_dim != data.style_dim) {
        throw std::invalid_argument("model config: style dimensions disagree");
    }
    if (fusion.timbre_dim != data.timbre_dim || fusion.frame_dim != data.timbre_dim) {
        throw std::invalid_argument("model config: timbre dimensions disagree");
    }
    if (data.text_vocab > data.layout.codebook_size) {
        throw std::invalid_argument("model config: text vocabulary must fit in the codebook");
    }
}

json ModelConfig::to_json() const {
    const auto& g = generator;
    const auto& s = smsd;
    return json{
        {"data", data.to_json()},
        {"generator",
         {{"d_model", g.d_model},
          {"heads", g.heads},
          {"ff_mult", g.ff_mult},
          {"text_blocks", g.text_blocks},
          {"decoder_blocks", g.decoder_blocks},
          {"conv_kernel", g.conv_kernel},
          {"first_channel_iterations", g.first_channel_iterations},
          {"later_channel_iterations", g.later_channel_iterations},
          {"initial_temperature", g.initial_temperature},
          {"confidence", confidence_name(g.confidence)}}},
        {"style_text",
         {{"embed_dim", style_text.embed_dim},
          {"hidden_dim", style_text.hidden_dim},
          {"filler_dropout", style_text.filler_dropout},
          {"frozen", style_text.frozen}}},
        {"smsd",
         {{"hidden_dim", s.hidden_dim},
          {"components", s.components},
          {"mode", noise_mode_name(s.mode)},
          {"fixed_sigma", s.fixed_sigma},
          {"var_floor", s.var_floor},
          {"exact_constant", s.exact_constant},
          {"reduced_form", s.reduced_form},
          {"inference_noise", s.inference_noise}}},
        {"fusion",
         {{"extractor_dim", fusion.extractor_dim},
          {"extractor_heads", fusion.extractor_heads},
          {"extractor_blocks", fusion.extractor_blocks},
          {"hidden_dim", fusion.hidden_dim},
          {"readout_hidden", fusion.readout_hidden},
          {"norm_eps", fusion.norm_eps},
          {"paper_exact_eq4", fusion.paper_exact_eq4}}},
        {"init_seed", init_seed},
    };
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig m = for_data(DatasetConfig::from_json(j.at("data")));
    const auto& g = j.at("generator");
    m.generator.d_model = g.at("d_model");
    m.generator.heads = g.at("heads");
    m.generator.ff_mult = g.at("ff_mult");
    m.generator.text_blocks = g.at("text_blocks");
    m.generator.decoder_blocks = g.at("decoder_blocks");
    m.generator.conv_kernel = g.at("conv_kernel");
    m.generator.first_channel_iterations = g.at("first_channel_iterations");
    m.generator.later_channel_iterations = g.at("later_channel_iterations");
    m.generator.initial_temperature = g.at("initial_temperature");
    m.generator.confidence = parse_confidence(g.at("confidence").get<std::string>());
    const auto& st = j.at("style_text");
    m.style_text.embed_dim = st.at("embed_dim");
    m.style_text.hidden_dim = st.at("hidden_dim");
    m.style_text.filler_dropout = st.at("filler_dropout");
    m.style_text.frozen = st.at("frozen");
    const auto& s = j.at("smsd");
    m.smsd.hidden_dim = s.at("hidden_dim");
    m.smsd.components = s.at("components");
    m.smsd.mode = parse_noise_mode(s.at("mode").get<std::string>());
    m.smsd.fixed_sigma = s.at("fixed_sigma");
    m.smsd.var_floor = s.at("var_floor");
    m.smsd.exact_constant = s.at("exact_constant");
    m.smsd.reduced_form = s.at("reduced_form");
    m.smsd.inference_noise = s.at("inference_noise");
    const auto& f = j.at("fusion");
    m.fusion.extractor_dim = f.at("extractor_dim");
    m.fusion.extractor_heads = f.at("extractor_heads");
    m.fusion.extractor_blocks = f.at("extractor_blocks");
    m.fusion.hidden_dim = f.at("hidden_dim");
    m.fusion.readout_hidden = f.at("readout_hidden");
    m.fusion.norm_eps = f.at("norm_eps");
    m.fusion.paper_exact_eq4 = f.at("paper_exact_eq4");
    m.init_seed = j.at("init_seed");
    return m;
}

StyleCodecModel::StyleCodecModel(ModelConfig cfg, Vocabulary vocab)
    : cfg_(std::move(cfg)),
      vocab_(std::move(vocab)),
      scheme_(cfg_.data.scheme()),
      extractor_(scheme_, cfg_.data.style_dim, Rng(cfg_.data.seed).derive("style_extractor").next_u64()) {
    cfg_.validate();
    Rng root(cfg_.init_seed);
    Rng r_text = root.derive("style_text");
    Rng r_smsd = root.derive("smsd");
    Rng r_gen = root.derive("generator");
    Rng r_timbre = root.derive("timbre");
    Rng r_fusion = root.derive("fusion");

    style_text_ = std::make_unique<StyleTextEncoder>(params_, cfg_.style_text, vocab_.size(), r_text);
    const SmsdHead head = SmsdHead::init(cfg_.smsd, r_smsd);
    for (const auto& [name, m] : head.groups()) {
        nn::Parameter& p = params_.create(kSmsdPrefix + name, static_cast<int>(m->rows()), static_cast<int>(m->cols()));
        p.value = m->cast<float>();
    }
    generator_ = std::make_unique<CodecGenerator>(params_, cfg_.generator, r_gen);
    timbre_ = std::make_unique<TimbreExtractor>(fusion_params_, cfg_.fusion, r_timbre);
    fusion_ = std::make_unique<FusionDecoder>(fusion_params_, cfg_.fusion, scheme_, r_fusion);
}

SmsdHead StyleCodecModel::smsd_head() const {
    SmsdHead head;
    head.cfg = cfg_.smsd;
    head.fixed_sigma = cfg_.smsd.fixed_sigma;
    for (auto& [name, m] : head.groups()) *m = params_.get(kSmsdPrefix + name).value.cast<double>();
    return head;
}

void StyleCodecModel::add_smsd_grads(const SmsdHead& grads, double scale) {
    for (const auto& [name, m] : grads.groups()) {
        nn::Parameter& p = params_.get(kSmsdPrefix + name);
        if (p.grad.size() == 0) p.grad = nn::Mat::Zero(p.value.rows(), p.value.cols());
        p.grad += (*m * scale).cast<float>();
    }
}

Eigen::VectorXd StyleCodecModel::target_style(const CodecMatrix& codec) const {
    return extractor_.extract(split_style(codec).style);
}

Eigen::VectorXd StyleCodecModel::style_semantics(const std::vector<int>& ids) const {
    nn::Tape t(false);
    return from_row(t.value(style_text_->encode(t, ids)));
}

MixtureParams StyleCodecModel::style_mixture(const std::vector<int>& ids, Rng* noise_rng) const {
    const Eigen::VectorXd x = style_semantics(ids);
    Eigen::VectorXd noise;
    if (cfg_.smsd.inference_noise && noise_rng) noise = standard_normal(*noise_rng, cfg_.smsd.output_dim);
    return mdn_forward(x, smsd_head(), noise);
}

SynthesisResult StyleCodecModel::synthesize(const SynthesisRequest& req, Rng& rng) {
    SynthesisResult res;
    Rng r_style = rng.derive("style");
    Rng r_decode = rng.derive("decode");

    if (req.style_vector) {
        res.style_vector = *req.style_vector;
    } else {
        const std::vector<int> ids = vocab_.encode(req.prompt);
        res.all_oov = std::all_of(ids.begin(), ids.end(), [](int id) { return id == Vocabulary::kOov; });
        const MixtureParams mp = style_mixture(ids, &r_style);
        switch (req.style_choice) {
            case StyleChoice::Sample: {
                SmsdSample s = smsd_sample(mp, r_style);
                ++counters_.smsd_samples;
                res.style_vector = std::move(s.value);
                res.component = s.component;
                break;
            }
            case StyleChoice::ModeMean: {
                Eigen::Index best;
                mp.weights.maxCoeff(&best);
                res.style_vector = mixture_mode_mean(mp);
                res.component = static_cast<int>(best);
                break;
            }
            case StyleChoice::MixtureMean: res.style_vector = mixture_mean(mp); break;
        }
    }

    nn::Tape t(false);
    nn::Var h = generator_->text_encode(t, req.content);
    nn::Var ts = generator_->fuse_style(t, h, t.constant(to_row(res.style_vector)));
    if (req.durations) {
        res.durations = *req.durations;
    } else {
        res.durations = CodecGenerator::round_durations(t.value(generator_->predict_log_durations(t, ts)));
        ++counters_.predicted_duration_uses;
    }
    nn::Var frames = CodecGenerator::length_regulate(t, ts, res.durations);
    res.codec = generator_->iterative_decode(t.value(frames), DecodeSchedule::standard(cfg_.generator), r_decode);
    ++counters_.decodes;
    res.output = fusion_->assemble(res.codec, req.timbre);
    return res;
}

}  // namespace stylecodec
