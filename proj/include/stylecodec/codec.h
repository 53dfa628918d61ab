#pragma once

// Synthetic factorized codec. Content, prosody and acoustic channels hold
// discrete tokens; style attributes are written into the prosody/acoustic
// channels through an injective label -> token-pattern map so that decoding
// the attributes back from any codec matrix is exact.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stylecodec/rng.h"

namespace stylecodec {

enum class Gender : uint8_t { Male = 0, Female = 1 };
// Shared three-way scale for pitch, speed and energy.
enum class Level : uint8_t { Low = 0, Normal = 1, High = 2 };

inline constexpr int kGenderCount = 2;
inline constexpr int kLevelCount = 3;
inline constexpr int kMaxEmotions = 8;

std::string_view gender_name(Gender g);
std::string_view level_name(Level l);        // low / normal / high
std::string_view speed_name(Level l);        // slow / normal / fast
Gender parse_gender(std::string_view s);
Level parse_level(std::string_view s);       // accepts both naming schemes

// Emotion names for the first kMaxEmotions classes; index 0 is neutral.
std::string_view emotion_name(int e);
int parse_emotion(std::string_view s);

struct AttributeLabels {
    Gender gender = Gender::Male;
    Level pitch = Level::Normal;
    Level speed = Level::Normal;   // Low = slow, High = fast
    Level energy = Level::Normal;
    int emotion = 0;

    bool operator==(const AttributeLabels&) const = default;
};

// Intensity of a style inside its label bin, in [0, 1).
struct AttributeDegrees {
    double pitch = 0.5;
    double speed = 0.5;
    double energy = 0.5;
    double emotion = 0.5;

    bool operator==(const AttributeDegrees&) const = default;
};

struct ChannelLayout {
    int n_content = 2;
    int n_prosody = 1;
    int n_acoustic = 3;
    int codebook_size = 64;

    int channels() const { return n_content + n_prosody + n_acoustic; }
    int style_channels() const { return n_prosody + n_acoustic; }
    int first_style_channel() const { return n_content; }
    void validate() const;

    bool operator==(const ChannelLayout&) const = default;
};

using TokenGrid = Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// T x N token grid; row t holds the N codes of frame t, column i the sequence
// of channel i.
struct CodecMatrix {
    TokenGrid tokens;
    ChannelLayout layout;

    int frames() const { return static_cast<int>(tokens.rows()); }
    int channels() const { return static_cast<int>(tokens.cols()); }
    std::vector<int> channel(int i) const;
    bool operator==(const CodecMatrix& o) const { return layout == o.layout && tokens == o.tokens; }
};

class UnknownPattern : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Parameters of the label -> pattern construction shared by generation,
// decoding and style extraction.
struct PatternScheme {
    ChannelLayout layout;
    int n_emotions = 5;
    int degree_levels = 5;

    void validate() const;
    // Quantizes a degree in [0,1) to its level and returns the level center.
    int degree_level(double degree) const;
    double level_center(int level) const;
};

// Frame-periodic token pattern for the style channels. Even and odd frames of
// a channel may carry different attribute streams.
CodecMatrix encode_style_pattern(const PatternScheme& scheme, const AttributeLabels& labels,
                                 const AttributeDegrees& degrees, std::span<const int> phoneme_per_frame);

// Content channel codes for a phoneme id.
int content_code(const ChannelLayout& layout, int channel, int phoneme);

struct DecodedAttributes {
    AttributeLabels labels;
    AttributeDegrees degrees;
};

// Exact inverse of the pattern map. Throws UnknownPattern when any style
// token is outside the pattern set or streams disagree.
DecodedAttributes decode_attributes(const PatternScheme& scheme, const CodecMatrix& codec);

// Per-attribute majority vote over the frames carrying each stream, used to
// score generated codecs. Attributes with no valid vote are reported absent.
struct VotedAttributes {
    std::array<int, 5> bins{-1, -1, -1, -1, -1};   // gender, pitch, speed, energy, emotion
    std::array<double, 4> degrees{-1, -1, -1, -1}; // pitch, speed, energy, emotion
    bool has(int attr) const { return bins[static_cast<size_t>(attr)] >= 0; }
};
VotedAttributes vote_attributes(const PatternScheme& scheme, const CodecMatrix& codec);

struct StyleSplit {
    TokenGrid content;  // T x n_content
    TokenGrid style;    // T x (n_prosody + n_acoustic), prosody first
};
StyleSplit split_style(const CodecMatrix& codec);
CodecMatrix merge_style(const ChannelLayout& layout, const TokenGrid& content, const TokenGrid& style);

// Fixed embedding-sum map from style channels to a global style vector.
class StyleExtractor {
public:
    StyleExtractor(const PatternScheme& scheme, int dim, uint64_t seed);

    Eigen::VectorXd extract(const TokenGrid& style_channels) const;
    int dim() const { return dim_; }

private:
    PatternScheme scheme_;
    int dim_;
    // [style channel][code] -> embedding
    std::vector<std::vector<Eigen::VectorXd>> table_;
};

}  // namespace stylecodec
