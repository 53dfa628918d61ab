#include "stylecodec/codec.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

namespace stylecodec {

namespace {

constexpr std::array<std::string_view, kMaxEmotions> kEmotionNames = {
    "neutral", "happy", "sad", "angry", "surprised", "fearful", "disgusted", "tender"};

// Attribute streams written into the style channels.
enum class Stream { Pitch, Speed, Energy, Gender, Emotion, DetailPitchEnergy, DetailSpeedGender };

struct ChannelStreams {
    Stream even;
    Stream odd;
};

ChannelStreams streams_for(int style_index) {
    switch (style_index) {
        case 0: return {Stream::Pitch, Stream::Speed};
        case 1: return {Stream::Energy, Stream::Gender};
        case 2: return {Stream::Emotion, Stream::Emotion};
        default: return {Stream::DetailPitchEnergy, Stream::DetailSpeedGender};
    }
}

int stream_code_count(const PatternScheme& s, Stream st) {
    switch (st) {
        case Stream::Pitch:
        case Stream::Speed:
        case Stream::Energy: return kLevelCount * s.degree_levels;
        case Stream::Gender: return kGenderCount;
        case Stream::Emotion: return s.n_emotions * s.degree_levels;
        case Stream::DetailPitchEnergy: return kLevelCount * kLevelCount;
        case Stream::DetailSpeedGender: return kLevelCount * kGenderCount;
    }
    return 0;
}

bool has_degree(Stream st) {
    return st == Stream::Pitch || st == Stream::Speed || st == Stream::Energy || st == Stream::Emotion;
}

// Offset of the odd-frame stream inside the codebook.
int odd_offset(const PatternScheme& s, const ChannelStreams& cs) {
    return cs.even == cs.odd ? 0 : s.layout.codebook_size / 2;
}

struct StreamValue {
    Stream stream;
    int bin;
    int level;  // -1 when the stream carries no degree
};

int stream_value_code(const PatternScheme& s, Stream st, int bin, int level) {
    return has_degree(st) ? bin * s.degree_levels + level : bin;
}

std::optional<StreamValue> decode_token(const PatternScheme& s, int style_index, int phase, int token) {
    const ChannelStreams cs = streams_for(style_index);
    const Stream st = phase == 0 ? cs.even : cs.odd;
    const int local = token - (phase == 0 ? 0 : odd_offset(s, cs));
    if (local < 0 || local >= stream_code_count(s, st)) return std::nullopt;
    if (has_degree(st)) return StreamValue{st, local / s.degree_levels, local % s.degree_levels};
    return StreamValue{st, local, -1};
}

int label_bin(const AttributeLabels& l, Stream st) {
    switch (st) {
        case Stream::Pitch: return static_cast<int>(l.pitch);
        case Stream::Speed: return static_cast<int>(l.speed);
        case Stream::Energy: return static_cast<int>(l.energy);
        case Stream::Gender: return static_cast<int>(l.gender);
        case Stream::Emotion: return l.emotion;
        case Stream::DetailPitchEnergy: return static_cast<int>(l.pitch) * kLevelCount + static_cast<int>(l.energy);
        case Stream::DetailSpeedGender: return static_cast<int>(l.speed) * kGenderCount + static_cast<int>(l.gender);
    }
    return 0;
}

double stream_degree(const AttributeDegrees& d, Stream st) {
    switch (st) {
        case Stream::Pitch: return d.pitch;
        case Stream::Speed: return d.speed;
        case Stream::Energy: return d.energy;
        case Stream::Emotion: return d.emotion;
        default: return 0.0;
    }
}

}  // namespace

std::string_view gender_name(Gender g) { return g == Gender::Male ? "male" : "female"; }

std::string_view level_name(Level l) {
    switch (l) {
        case Level::Low: return "low";
        case Level::Normal: return "normal";
        case Level::High: return "high";
    }
    return "normal";
}

std::string_view speed_name(Level l) {
    switch (l) {
        case Level::Low: return "slow";
        case Level::Normal: return "normal";
        case Level::High: return "fast";
    }
    return "normal";
}

Gender parse_gender(std::string_view s) {
    if (s == "male") return Gender::Male;
    if (s == "female") return Gender::Female;
    throw std::invalid_argument("unknown gender: " + std::string(s));
}

Level parse_level(std::string_view s) {
    if (s == "low" || s == "slow") return Level::Low;
    if (s == "normal") return Level::Normal;
    if (s == "high" || s == "fast") return Level::High;
    throw std::invalid_argument("unknown level: " + std::string(s));
}

std::string_view emotion_name(int e) {
    if (e < 0 || e >= kMaxEmotions) throw std::out_of_range("emotion index out of range");
    return kEmotionNames[static_cast<size_t>(e)];
}

int parse_emotion(std::string_view s) {
    for (int e = 0; e < kMaxEmotions; ++e) {
        if (kEmotionNames[static_cast<size_t>(e)] == s) return e;
    }
    throw std::invalid_argument("unknown emotion: " + std::string(s));
}

void ChannelLayout::validate() const {
    if (n_content < 0 || n_prosody < 0 || n_acoustic < 0) throw std::invalid_argument("channel counts must be >= 0");
    if (channels() <= 0) throw std::invalid_argument("layout has no channels");
    if (codebook_size < 2) throw std::invalid_argument("codebook_size must be >= 2");
}

std::vector<int> CodecMatrix::channel(int i) const {
    std::vector<int> out(static_cast<size_t>(frames()));
    for (int t = 0; t < frames(); ++t) out[static_cast<size_t>(t)] = tokens(t, i);
    return out;
}

void PatternScheme::validate() const {
    layout.validate();
    if (layout.n_content < 1) throw std::invalid_argument("pattern scheme needs at least one content channel");
    if (layout.style_channels() < 3) throw std::invalid_argument("pattern scheme needs at least three style channels");
    if (n_emotions < 2 || n_emotions > kMaxEmotions) throw std::invalid_argument("n_emotions must be in [2, 8]");
    if (degree_levels < 1) throw std::invalid_argument("degree_levels must be positive");
    for (int s = 0; s < layout.style_channels(); ++s) {
        const ChannelStreams cs = streams_for(s);
        const int budget = cs.even == cs.odd ? layout.codebook_size : layout.codebook_size / 2;
        if (stream_code_count(*this, cs.even) > budget || stream_code_count(*this, cs.odd) > budget) {
            throw std::invalid_argument("codebook_size too small for the style pattern set");
        }
    }
}

int PatternScheme::degree_level(double degree) const {
    if (!(degree >= 0.0 && degree < 1.0)) throw std::invalid_argument("degree must lie in [0, 1)");
    return std::min(degree_levels - 1, static_cast<int>(std::floor(degree * degree_levels)));
}

double PatternScheme::level_center(int level) const { return (level + 0.5) / degree_levels; }

int content_code(const ChannelLayout& layout, int channel, int phoneme) {
    return (phoneme * (2 * channel + 1) + channel) % layout.codebook_size;
}

CodecMatrix encode_style_pattern(const PatternScheme& scheme, const AttributeLabels& labels,
                                 const AttributeDegrees& degrees, std::span<const int> phoneme_per_frame) {
    scheme.validate();
    if (labels.emotion < 0 || labels.emotion >= scheme.n_emotions) throw std::invalid_argument("emotion out of range");
    const ChannelLayout& L = scheme.layout;
    const int T = static_cast<int>(phoneme_per_frame.size());
    CodecMatrix c;
    c.layout = L;
    c.tokens = TokenGrid::Zero(T, L.channels());
    for (int t = 0; t < T; ++t) {
        for (int ch = 0; ch < L.n_content; ++ch) c.tokens(t, ch) = content_code(L, ch, phoneme_per_frame[static_cast<size_t>(t)]);
        for (int s = 0; s < L.style_channels(); ++s) {
            const ChannelStreams cs = streams_for(s);
            const int phase = t % 2;
            const Stream st = phase == 0 ? cs.even : cs.odd;
            const int level = has_degree(st) ? scheme.degree_level(stream_degree(degrees, st)) : -1;
            const int code = stream_value_code(scheme, st, label_bin(labels, st), level);
            c.tokens(t, L.first_style_channel() + s) = code + (phase == 0 ? 0 : odd_offset(scheme, cs));
        }
    }
    return c;
}

DecodedAttributes decode_attributes(const PatternScheme& scheme, const CodecMatrix& codec) {
    if (!(codec.layout == scheme.layout)) throw std::invalid_argument("codec layout does not match pattern scheme");
    const ChannelLayout& L = scheme.layout;
    if (codec.channels() != L.channels()) throw std::invalid_argument("codec channel count mismatch");
    std::map<Stream, std::pair<int, int>> seen;  // stream -> (bin, level)
    for (int t = 0; t < codec.frames(); ++t) {
        for (int s = 0; s < L.style_channels(); ++s) {
            const int token = codec.tokens(t, L.first_style_channel() + s);
            auto v = decode_token(scheme, s, t % 2, token);
            if (!v) {
                throw UnknownPattern("token " + std::to_string(token) + " at frame " + std::to_string(t) +
                                     ", style channel " + std::to_string(s) + " is not a pattern code");
            }
            auto [it, inserted] = seen.emplace(v->stream, std::make_pair(v->bin, v->level));
            if (!inserted && it->second != std::make_pair(v->bin, v->level)) {
                throw UnknownPattern("inconsistent stream values within style channel " + std::to_string(s));
            }
        }
    }
    for (Stream st : {Stream::Pitch, Stream::Speed, Stream::Energy, Stream::Gender, Stream::Emotion}) {
        if (!seen.contains(st)) throw UnknownPattern("codec too short to carry every attribute stream");
    }
    DecodedAttributes out;
    auto level_of = [&](Stream st) { return static_cast<Level>(seen.at(st).first); };
    out.labels.gender = static_cast<Gender>(seen.at(Stream::Gender).first);
    out.labels.pitch = level_of(Stream::Pitch);
    out.labels.speed = level_of(Stream::Speed);
    out.labels.energy = level_of(Stream::Energy);
    out.labels.emotion = seen.at(Stream::Emotion).first;
    if (out.labels.pitch > Level::High || out.labels.speed > Level::High || out.labels.energy > Level::High) {
        throw UnknownPattern("level bin out of range");
    }
    out.degrees.pitch = scheme.level_center(seen.at(Stream::Pitch).second);
    out.degrees.speed = scheme.level_center(seen.at(Stream::Speed).second);
    out.degrees.energy = scheme.level_center(seen.at(Stream::Energy).second);
    out.degrees.emotion = scheme.level_center(seen.at(Stream::Emotion).second);
    if (auto it = seen.find(Stream::DetailPitchEnergy); it != seen.end()) {
        if (it->second.first != label_bin(out.labels, Stream::DetailPitchEnergy)) {
            throw UnknownPattern("detail stream disagrees with pitch/energy");
        }
    }
    if (auto it = seen.find(Stream::DetailSpeedGender); it != seen.end()) {
        if (it->second.first != label_bin(out.labels, Stream::DetailSpeedGender)) {
            throw UnknownPattern("detail stream disagrees with speed/gender");
        }
    }
    return out;
}

VotedAttributes vote_attributes(const PatternScheme& scheme, const CodecMatrix& codec) {
    const ChannelLayout& L = scheme.layout;
    if (codec.channels() != L.channels()) throw std::invalid_argument("codec channel count mismatch");
    // attr -> bin -> level -> count
    const int max_bins = std::max(kLevelCount, scheme.n_emotions);
    const int levels = scheme.degree_levels;
    std::array<std::vector<int>, 5> counts;
    for (auto& c : counts) c.assign(static_cast<size_t>(max_bins * levels), 0);
    auto attr_of = [](Stream st) {
        switch (st) {
            case Stream::Gender: return 0;
            case Stream::Pitch: return 1;
            case Stream::Speed: return 2;
            case Stream::Energy: return 3;
            case Stream::Emotion: return 4;
            default: return -1;
        }
    };
    for (int t = 0; t < codec.frames(); ++t) {
        for (int s = 0; s < L.style_channels(); ++s) {
            auto v = decode_token(scheme, s, t % 2, codec.tokens(t, L.first_style_channel() + s));
            if (!v) continue;
            const int a = attr_of(v->stream);
            if (a < 0) continue;
            const int level = v->level < 0 ? 0 : v->level;
            counts[static_cast<size_t>(a)][static_cast<size_t>(v->bin * levels + level)]++;
        }
    }
    VotedAttributes out;
    for (int a = 0; a < 5; ++a) {
        const auto& c = counts[static_cast<size_t>(a)];
        int best_bin = -1, best_total = 0;
        for (int b = 0; b < max_bins; ++b) {
            int total = 0;
            for (int l = 0; l < levels; ++l) total += c[static_cast<size_t>(b * levels + l)];
            if (total > best_total) {
                best_total = total;
                best_bin = b;
            }
        }
        out.bins[static_cast<size_t>(a)] = best_bin;
        if (a >= 1 && best_bin >= 0) {
            int best_level = 0, best_count = -1;
            for (int l = 0; l < levels; ++l) {
                if (c[static_cast<size_t>(best_bin * levels + l)] > best_count) {
                    best_count = c[static_cast<size_t>(best_bin * levels + l)];
                    best_level = l;
                }
            }
            out.degrees[static_cast<size_t>(a - 1)] = scheme.level_center(best_level);
        }
    }
    return out;
}

StyleSplit split_style(const CodecMatrix& codec) {
    const ChannelLayout& L = codec.layout;
    if (codec.channels() != L.channels()) throw std::invalid_argument("codec channel count mismatch");
    StyleSplit out;
    out.content = codec.tokens.leftCols(L.n_content);
    out.style = codec.tokens.rightCols(L.style_channels());
    return out;
}

CodecMatrix merge_style(const ChannelLayout& layout, const TokenGrid& content, const TokenGrid& style) {
    if (content.rows() != style.rows() || content.cols() != layout.n_content || style.cols() != layout.style_channels()) {
        throw std::invalid_argument("merge_style: shape mismatch");
    }
    CodecMatrix c;
    c.layout = layout;
    c.tokens.resize(content.rows(), layout.channels());
    c.tokens.leftCols(layout.n_content) = content;
    c.tokens.rightCols(layout.style_channels()) = style;
    return c;
}

StyleExtractor::StyleExtractor(const PatternScheme& scheme, int dim, uint64_t seed) : scheme_(scheme), dim_(dim) {
    scheme_.validate();
    if (dim <= 0) throw std::invalid_argument("style dimension must be positive");
    Rng rng(seed);
    auto gaussian = [&](double sd) {
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v(i) = rng.normal() * sd;
        return v;
    };
    auto unit = [&](double norm) {
        Eigen::VectorXd v = gaussian(1.0);
        return Eigen::VectorXd(v.normalized() * norm);
    };
    // Label anchors and a per-stream degree direction: degree moves the
    // embedding along a line so neighbouring degrees stay neighbours.
    constexpr double kAnchorScale = 0.5;
    constexpr double kDegreeSpan = 2.0;
    std::map<Stream, std::vector<Eigen::VectorXd>> anchors;
    std::map<Stream, Eigen::VectorXd> directions;
    for (Stream st : {Stream::Pitch, Stream::Speed, Stream::Energy, Stream::Gender, Stream::Emotion,
                      Stream::DetailPitchEnergy, Stream::DetailSpeedGender}) {
        const int bins = has_degree(st) ? stream_code_count(scheme_, st) / scheme_.degree_levels : stream_code_count(scheme_, st);
        for (int b = 0; b < bins; ++b) anchors[st].push_back(gaussian(kAnchorScale));
        directions[st] = unit(kDegreeSpan);
    }
    const int C = scheme_.layout.codebook_size;
    table_.resize(static_cast<size_t>(scheme_.layout.style_channels()));
    for (int s = 0; s < scheme_.layout.style_channels(); ++s) {
        auto& row = table_[static_cast<size_t>(s)];
        row.resize(static_cast<size_t>(C));
        for (int code = 0; code < C; ++code) row[static_cast<size_t>(code)] = gaussian(kAnchorScale);
        const ChannelStreams cs = streams_for(s);
        for (int phase = 0; phase < 2; ++phase) {
            const Stream st = phase == 0 ? cs.even : cs.odd;
            const int offset = phase == 0 ? 0 : odd_offset(scheme_, cs);
            for (int local = 0; local < stream_code_count(scheme_, st); ++local) {
                auto v = decode_token(scheme_, s, phase, local + offset);
                Eigen::VectorXd e = anchors[st][static_cast<size_t>(v->bin)];
                if (v->level >= 0) e += (scheme_.level_center(v->level) - 0.5) * directions[st];
                row[static_cast<size_t>(local + offset)] = e;
            }
        }
    }
}

Eigen::VectorXd StyleExtractor::extract(const TokenGrid& style_channels) const {
    if (style_channels.cols() != scheme_.layout.style_channels()) {
        throw std::invalid_argument("style extractor: wrong number of style channels");
    }
    const Eigen::Index T = style_channels.rows();
    if (T == 0) throw std::invalid_argument("style extractor: empty codec");
    Eigen::VectorXd y = Eigen::VectorXd::Zero(dim_);
    for (Eigen::Index s = 0; s < style_channels.cols(); ++s) {
        for (int phase = 0; phase < 2; ++phase) {
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim_);
            int n = 0;
            for (Eigen::Index t = phase; t < T; t += 2) {
                const int code = style_channels(t, s);
                if (code < 0 || code >= scheme_.layout.codebook_size) throw std::out_of_range("style token out of range");
                acc += table_[static_cast<size_t>(s)][static_cast<size_t>(code)];
                ++n;
            }
            if (n == 0) continue;
            // A single-frame codec carries only the even phase; weight it fully.
            const double w = T == 1 ? 1.0 : 0.5;
            y += w * acc / n;
        }
    }
    return y;
}

}  // namespace stylecodec
