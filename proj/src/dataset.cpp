#include "stylecodec/dataset.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stylecodec {

using nlohmann::json;

void DatasetConfig::validate() const {
    if (n_speakers <= 0) throw std::invalid_argument("n_speakers must be positive");
    if (text_vocab <= 0) throw std::invalid_argument("text_vocab must be positive");
    if (timbre_dim <= 0 || style_dim <= 0) throw std::invalid_argument("embedding dimensions must be positive");
    if (min_phonemes < 2 || max_phonemes < min_phonemes) throw std::invalid_argument("invalid phoneme length range");
    if (max_frames < 2) throw std::invalid_argument("max_frames must be at least 2");
    if (n_train <= 0 || n_test_in_domain <= 0 || n_test_heldout_style <= 0 || n_test_heldout_speaker <= 0) {
        throw std::invalid_argument("split sizes must be positive");
    }
    if (!(heldout_speaker_fraction > 0.0 && heldout_speaker_fraction < 1.0)) {
        throw std::invalid_argument("heldout_speaker_fraction must be in (0, 1)");
    }
    const int heldout = static_cast<int>(std::ceil(n_speakers * heldout_speaker_fraction));
    if (n_speakers - heldout < 2 || heldout < 1) throw std::invalid_argument("need >= 2 train speakers and >= 1 heldout speaker");
    scheme().validate();
    // Shortest possible utterance must stay within max_frames.
    if (min_phonemes > max_frames) throw std::invalid_argument("max_frames too small for min_phonemes");
}

json DatasetConfig::to_json() const {
    return json{{"seed", seed},
                {"n_speakers", n_speakers},
                {"text_vocab", text_vocab},
                {"layout",
                 {{"n_content", layout.n_content},
                  {"n_prosody", layout.n_prosody},
                  {"n_acoustic", layout.n_acoustic},
                  {"codebook_size", layout.codebook_size}}},
                {"n_emotions", n_emotions},
                {"degree_levels", degree_levels},
                {"timbre_dim", timbre_dim},
                {"style_dim", style_dim},
                {"min_phonemes", min_phonemes},
                {"max_phonemes", max_phonemes},
                {"max_frames", max_frames},
                {"timbre_jitter", timbre_jitter},
                {"duration_jitter", duration_jitter},
                {"speed_multipliers", speed_multipliers},
                {"heldout_speaker_fraction", heldout_speaker_fraction},
                {"n_train", n_train},
                {"n_test_in_domain", n_test_in_domain},
                {"n_test_heldout_style", n_test_heldout_style},
                {"n_test_heldout_speaker", n_test_heldout_speaker}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
    DatasetConfig c;
    c.seed = j.at("seed").get<uint64_t>();
    c.n_speakers = j.at("n_speakers").get<int>();
    c.text_vocab = j.at("text_vocab").get<int>();
    const auto& l = j.at("layout");
    c.layout = ChannelLayout{l.at("n_content").get<int>(), l.at("n_prosody").get<int>(), l.at("n_acoustic").get<int>(),
                             l.at("codebook_size").get<int>()};
    c.n_emotions = j.at("n_emotions").get<int>();
    c.degree_levels = j.at("degree_levels").get<int>();
    c.timbre_dim = j.at("timbre_dim").get<int>();
    c.style_dim = j.at("style_dim").get<int>();
    c.min_phonemes = j.at("min_phonemes").get<int>();
    c.max_phonemes = j.at("max_phonemes").get<int>();
    c.max_frames = j.at("max_frames").get<int>();
    c.timbre_jitter = j.at("timbre_jitter").get<double>();
    c.duration_jitter = j.at("duration_jitter").get<double>();
    c.speed_multipliers = j.at("speed_multipliers").get<std::array<double, 3>>();
    c.heldout_speaker_fraction = j.at("heldout_speaker_fraction").get<double>();
    c.n_train = j.at("n_train").get<int>();
    c.n_test_in_domain = j.at("n_test_in_domain").get<int>();
    c.n_test_heldout_style = j.at("n_test_heldout_style").get<int>();
    c.n_test_heldout_speaker = j.at("n_test_heldout_speaker").get<int>();
    return c;
}

DatasetConfig make_generator_config(uint64_t seed, int n_speakers, int text_vocab, const ChannelLayout& layout) {
    DatasetConfig c;
    c.seed = seed;
    c.n_speakers = n_speakers;
    c.text_vocab = text_vocab;
    c.layout = layout;
    c.validate();
    return c;
}

std::string_view split_name(DataSplit s) {
    switch (s) {
        case DataSplit::Train: return "train";
        case DataSplit::TestInDomain: return "test_in_domain";
        case DataSplit::TestHeldoutStyle: return "test_heldout_style";
        case DataSplit::TestHeldoutSpeaker: return "test_heldout_speaker";
    }
    return "train";
}

DataSplit parse_split(std::string_view s) {
    for (DataSplit d : kAllSplits) {
        if (split_name(d) == s) return d;
    }
    // Short aliases used on the command line.
    if (s == "in_domain") return DataSplit::TestInDomain;
    if (s == "heldout_style") return DataSplit::TestHeldoutStyle;
    if (s == "heldout_speaker") return DataSplit::TestHeldoutSpeaker;
    throw std::invalid_argument("unknown split: " + std::string(s));
}

std::vector<int> SyntheticUtterance::phoneme_per_frame() const {
    std::vector<int> out;
    for (size_t i = 0; i < durations.size(); ++i) out.insert(out.end(), static_cast<size_t>(durations[i]), content_tokens[i]);
    return out;
}

CorpusWorld::CorpusWorld(DatasetConfig cfg, TemplateBank bank) : cfg_(std::move(cfg)), bank_(std::move(bank)) {
    cfg_.validate();
    if (bank_.by_split(TemplateSplit::Heldout).empty()) throw std::invalid_argument("template bank has no heldout templates");
    const Rng root(cfg_.seed);
    Rng spk = root.derive("speakers");
    for (int s = 0; s < cfg_.n_speakers; ++s) {
        gender_.push_back(s % 2 == 0 ? Gender::Male : Gender::Female);
        Eigen::VectorXd t(cfg_.timbre_dim);
        for (int i = 0; i < cfg_.timbre_dim; ++i) t(i) = spk.normal();
        timbre_.push_back(t.normalized());
    }
    Rng dur = root.derive("durations");
    for (int p = 0; p < cfg_.text_vocab; ++p) base_duration_.push_back(dur.range(2, 4));
    Rng proj = root.derive("speech_projection");
    for (int c = 0; c < cfg_.layout.channels(); ++c) {
        nn::Mat m(cfg_.layout.codebook_size, cfg_.timbre_dim);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(proj.normal() * 0.15);
        token_projection_.push_back(std::move(m));
    }
}

Gender CorpusWorld::speaker_gender(int speaker) const { return gender_.at(static_cast<size_t>(speaker)); }
const Eigen::VectorXd& CorpusWorld::speaker_timbre(int speaker) const { return timbre_.at(static_cast<size_t>(speaker)); }

bool CorpusWorld::is_heldout_speaker(int speaker) const {
    const int heldout = static_cast<int>(std::ceil(cfg_.n_speakers * cfg_.heldout_speaker_fraction));
    return speaker >= cfg_.n_speakers - heldout;
}

std::vector<int> CorpusWorld::speakers(bool heldout) const {
    std::vector<int> out;
    for (int s = 0; s < cfg_.n_speakers; ++s) {
        if (is_heldout_speaker(s) == heldout) out.push_back(s);
    }
    return out;
}

nn::Mat CorpusWorld::speech_frames(const SyntheticUtterance& u) const { return speech_frames(u, u.timbre); }

nn::Mat CorpusWorld::speech_frames(const SyntheticUtterance& u, const Eigen::VectorXd& timbre) const {
    if (timbre.size() != cfg_.timbre_dim) throw std::invalid_argument("speech_frames: timbre dimension mismatch");
    const int T = u.frames();
    nn::Mat frames = nn::Mat::Zero(T, cfg_.timbre_dim);
    Rng noise = Rng(cfg_.seed).derive("speech_noise").derive(static_cast<uint64_t>(u.id));
    for (int t = 0; t < T; ++t) {
        for (int c = 0; c < u.codec.channels(); ++c) frames.row(t) += token_projection_[static_cast<size_t>(c)].row(u.codec.tokens(t, c));
        for (int i = 0; i < cfg_.timbre_dim; ++i) {
            frames(t, i) += static_cast<float>(timbre(i) + 0.05 * noise.normal());
        }
    }
    return frames;
}

SyntheticUtterance synth_utterance(const CorpusWorld& world, Rng& rng, const UtteranceRequest& req) {
    const DatasetConfig& cfg = world.config();
    SyntheticUtterance u;
    u.id = req.id;
    if (req.speaker) {
        if (*req.speaker < 0 || *req.speaker >= cfg.n_speakers) throw std::out_of_range("unknown speaker id");
        u.speaker_id = *req.speaker;
    } else {
        const auto pool = world.speakers(false);
        u.speaker_id = pool[rng.below(pool.size())];
    }

    if (req.labels) {
        u.labels = *req.labels;
    } else {
        u.labels.pitch = static_cast<Level>(rng.below(kLevelCount));
        u.labels.speed = static_cast<Level>(rng.below(kLevelCount));
        u.labels.energy = static_cast<Level>(rng.below(kLevelCount));
        u.labels.emotion = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n_emotions)));
    }
    u.labels.gender = world.speaker_gender(u.speaker_id);

    // Degrees are stored as their level centers so decoding round-trips exactly.
    const PatternScheme scheme = world.scheme();
    AttributeDegrees raw;
    if (req.degrees) {
        raw = *req.degrees;
    } else {
        raw = AttributeDegrees{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    }
    auto center = [&](double d) { return scheme.level_center(scheme.degree_level(d)); };
    u.degrees = AttributeDegrees{center(raw.pitch), center(raw.speed), center(raw.energy), center(raw.emotion)};

    const double mult = cfg.speed_multipliers[static_cast<size_t>(u.labels.speed)];
    for (int attempt = 0;; ++attempt) {
        if (attempt > 1000) throw std::runtime_error("synth_utterance: cannot satisfy max_frames");
        if (req.content) {
            u.content_tokens = *req.content;
        } else {
            const int L = rng.range(cfg.min_phonemes, cfg.max_phonemes);
            u.content_tokens.resize(static_cast<size_t>(L));
            for (auto& p : u.content_tokens) p = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.text_vocab)));
        }
        u.durations.clear();
        int total = 0;
        for (int p : u.content_tokens) {
            if (p < 0 || p >= cfg.text_vocab) throw std::out_of_range("content token outside text vocabulary");
            const double jitter = rng.uniform(1.0 - cfg.duration_jitter, 1.0 + cfg.duration_jitter);
            const int d = std::max(1, static_cast<int>(std::lround(world.base_duration(p) * mult * jitter)));
            u.durations.push_back(d);
            total += d;
        }
        if (total >= 2 && total <= cfg.max_frames) break;
    }

    u.codec = encode_style_pattern(scheme, u.labels, u.degrees, u.phoneme_per_frame());

    const Eigen::VectorXd& base = world.speaker_timbre(u.speaker_id);
    Eigen::VectorXd t = base;
    for (int i = 0; i < cfg.timbre_dim; ++i) t(i) += cfg.timbre_jitter * rng.uniform(-1.0, 1.0) / std::sqrt(cfg.timbre_dim);
    u.timbre = t.normalized();

    u.style_text = generate_style_prompts(world.bank(), u.labels, rng, 1, req.template_split).front();
    return u;
}

Corpus generate_corpus(const CorpusWorld& world) {
    const DatasetConfig& cfg = world.config();
    Corpus corpus;
    corpus.config = cfg;
    const Rng root = Rng(cfg.seed).derive("corpus");
    const auto train_speakers = world.speakers(false);
    const auto heldout_speakers = world.speakers(true);
    int64_t next_id = 0;
    auto fill = [&](DataSplit split, int n) {
        auto& out = corpus.splits[static_cast<size_t>(split)];
        const Rng split_rng = root.derive(split_name(split));
        for (int i = 0; i < n; ++i) {
            // Per-utterance stream: generation order does not matter.
            Rng rng = split_rng.derive(static_cast<uint64_t>(i));
            UtteranceRequest req;
            req.id = next_id++;
            if (split == DataSplit::TestHeldoutSpeaker) {
                req.speaker = heldout_speakers[rng.below(heldout_speakers.size())];
            } else {
                req.speaker = train_speakers[rng.below(train_speakers.size())];
            }
            req.template_split = split == DataSplit::TestHeldoutStyle ? TemplateSplit::Heldout : TemplateSplit::Train;
            out.push_back(synth_utterance(world, rng, req));
        }
    };
    fill(DataSplit::Train, cfg.n_train);
    fill(DataSplit::TestInDomain, cfg.n_test_in_domain);
    fill(DataSplit::TestHeldoutStyle, cfg.n_test_heldout_style);
    fill(DataSplit::TestHeldoutSpeaker, cfg.n_test_heldout_speaker);
    return corpus;
}

json utterance_to_json(const SyntheticUtterance& u) {
    std::vector<int> flat(static_cast<size_t>(u.codec.tokens.size()));
    for (int t = 0; t < u.codec.frames(); ++t) {
        for (int c = 0; c < u.codec.channels(); ++c) flat[static_cast<size_t>(t * u.codec.channels() + c)] = u.codec.tokens(t, c);
    }
    json j;
    j["id"] = u.id;
    j["speaker_id"] = u.speaker_id;
    j["content_tokens"] = u.content_tokens;
    j["style_text"] = u.style_text.text();
    if (u.style_text.template_id) j["template_id"] = *u.style_text.template_id;
    j["labels"] = {{"gender", gender_name(u.labels.gender)},
                   {"pitch", level_name(u.labels.pitch)},
                   {"speed", speed_name(u.labels.speed)},
                   {"energy", level_name(u.labels.energy)},
                   {"emotion", emotion_name(u.labels.emotion)}};
    j["degrees"] = {{"pitch", u.degrees.pitch}, {"speed", u.degrees.speed}, {"energy", u.degrees.energy}, {"emotion", u.degrees.emotion}};
    j["durations"] = u.durations;
    j["codec"] = {{"frames", u.codec.frames()}, {"channels", u.codec.channels()}, {"tokens", flat}};
    j["timbre"] = std::vector<double>(u.timbre.data(), u.timbre.data() + u.timbre.size());
    return j;
}

SyntheticUtterance utterance_from_json(const json& j, const ChannelLayout& layout) {
    SyntheticUtterance u;
    u.id = j.at("id").get<int64_t>();
    u.speaker_id = j.at("speaker_id").get<int>();
    u.content_tokens = j.at("content_tokens").get<std::vector<int>>();
    u.style_text = StylePrompt::from_text(j.at("style_text").get<std::string>());
    if (j.contains("template_id")) u.style_text.template_id = j.at("template_id").get<int>();
    const auto& l = j.at("labels");
    u.labels.gender = parse_gender(l.at("gender").get<std::string>());
    u.labels.pitch = parse_level(l.at("pitch").get<std::string>());
    u.labels.speed = parse_level(l.at("speed").get<std::string>());
    u.labels.energy = parse_level(l.at("energy").get<std::string>());
    u.labels.emotion = parse_emotion(l.at("emotion").get<std::string>());
    const auto& d = j.at("degrees");
    u.degrees = AttributeDegrees{d.at("pitch").get<double>(), d.at("speed").get<double>(), d.at("energy").get<double>(),
                                 d.at("emotion").get<double>()};
    u.durations = j.at("durations").get<std::vector<int>>();
    const auto& c = j.at("codec");
    const int T = c.at("frames").get<int>(), N = c.at("channels").get<int>();
    if (N != layout.channels()) throw std::runtime_error("record channel count does not match layout");
    const auto flat = c.at("tokens").get<std::vector<int>>();
    if (flat.size() != static_cast<size_t>(T * N)) throw std::runtime_error("record codec size mismatch");
    u.codec.layout = layout;
    u.codec.tokens.resize(T, N);
    for (int t = 0; t < T; ++t) {
        for (int ch = 0; ch < N; ++ch) u.codec.tokens(t, ch) = flat[static_cast<size_t>(t * N + ch)];
    }
    const auto timbre = j.at("timbre").get<std::vector<double>>();
    u.timbre = Eigen::Map<const Eigen::VectorXd>(timbre.data(), static_cast<Eigen::Index>(timbre.size()));
    return u;
}

json corpus_manifest(const CorpusWorld& world, const Corpus& corpus) {
    const DatasetConfig& cfg = world.config();
    const PatternScheme scheme = world.scheme();
    json categories;
    categories["gender"] = {"male", "female"};
    categories["pitch"] = {"low", "normal", "high"};
    categories["speed"] = {"slow", "normal", "fast"};
    categories["energy"] = {"low", "normal", "high"};
    for (int e = 0; e < cfg.n_emotions; ++e) categories["emotion"].push_back(emotion_name(e));

    // Degree-pattern table: the style-channel tokens of every label value at
    // every degree level (even frame, odd frame).
    json patterns = json::array();
    for (int level = 0; level < cfg.degree_levels; ++level) {
        const double c = scheme.level_center(level);
        AttributeLabels labels;
        for (int e = 0; e < cfg.n_emotions; ++e) {
            labels.emotion = e;
            labels.pitch = labels.speed = labels.energy = static_cast<Level>(e % kLevelCount);
            labels.gender = static_cast<Gender>(e % kGenderCount);
            const std::vector<int> ph(2, 0);
            const CodecMatrix m = encode_style_pattern(scheme, labels, AttributeDegrees{c, c, c, c}, ph);
            json row;
            row["degree"] = c;
            row["labels"] = {{"gender", gender_name(labels.gender)},
                             {"pitch", level_name(labels.pitch)},
                             {"speed", speed_name(labels.speed)},
                             {"energy", level_name(labels.energy)},
                             {"emotion", emotion_name(e)}};
            std::vector<int> even, odd;
            for (int s = 0; s < cfg.layout.style_channels(); ++s) {
                even.push_back(m.tokens(0, cfg.layout.first_style_channel() + s));
                odd.push_back(m.tokens(1, cfg.layout.first_style_channel() + s));
            }
            row["style_tokens_even"] = even;
            row["style_tokens_odd"] = odd;
            patterns.push_back(row);
        }
    }
    json sizes;
    for (DataSplit s : kAllSplits) sizes[std::string(split_name(s))] = corpus.split(s).size();
    return json{{"schema_version", 1},
                {"config", cfg.to_json()},
                {"seed", cfg.seed},
                {"layout", cfg.to_json().at("layout")},
                {"categories", categories},
                {"degree_patterns", patterns},
                {"templates", world.bank().serialize()},
                {"heldout_speakers", world.speakers(true)},
                {"split_sizes", sizes}};
}

void write_corpus(const std::string& dir, const CorpusWorld& world, const Corpus& corpus) {
    std::filesystem::create_directories(dir);
    for (DataSplit s : kAllSplits) {
        std::ofstream out(std::filesystem::path(dir) / (std::string(split_name(s)) + ".jsonl"));
        if (!out) throw std::runtime_error("cannot write split file in " + dir);
        for (const auto& u : corpus.split(s)) out << utterance_to_json(u).dump() << '\n';
    }
    std::ofstream man(std::filesystem::path(dir) / "manifest.json");
    if (!man) throw std::runtime_error("cannot write manifest in " + dir);
    man << corpus_manifest(world, corpus).dump(2) << '\n';
}

std::vector<SyntheticUtterance> read_split(const std::string& dir, DataSplit split, const ChannelLayout& layout) {
    const auto path = std::filesystem::path(dir) / (std::string(split_name(split)) + ".jsonl");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing split file: " + path.string());
    std::vector<SyntheticUtterance> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(utterance_from_json(json::parse(line), layout));
    }
    return out;
}

json read_manifest(const std::string& dir) {
    std::ifstream in(std::filesystem::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("missing manifest.json in " + dir);
    return json::parse(in);
}

}  // namespace stylecodec
