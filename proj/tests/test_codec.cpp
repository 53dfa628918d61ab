#include <gtest/gtest.h>

#include <cmath>

#include "stylecodec/codec.h"
#include "stylecodec/dataset.h"

using namespace stylecodec;

namespace {

const CorpusWorld& world() {
    static const CorpusWorld w(DatasetConfig{}, TemplateBank::load_default());
    return w;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace

TEST(Codec, DefaultLayoutHasSixChannels) {
    const ChannelLayout layout;
    EXPECT_EQ(layout.channels(), 6);
    EXPECT_EQ(layout.style_channels(), 4);
    EXPECT_EQ(layout.codebook_size, 64);
}

TEST(Codec, LabelNamesRoundTrip) {
    for (int l = 0; l < kLevelCount; ++l) {
        EXPECT_EQ(parse_level(level_name(static_cast<Level>(l))), static_cast<Level>(l));
        EXPECT_EQ(parse_level(speed_name(static_cast<Level>(l))), static_cast<Level>(l));
    }
    for (int e = 0; e < 5; ++e) EXPECT_EQ(parse_emotion(emotion_name(e)), e);
    EXPECT_EQ(parse_gender("female"), Gender::Female);
    EXPECT_THROW(parse_level("loudest"), std::invalid_argument);
}

TEST(Codec, GeneratedUtterancesDecodeToTheirLabels) {
    Rng rng(1);
    for (int i = 0; i < 300; ++i) {
        const SyntheticUtterance u = synth_utterance(world(), rng);
        const DecodedAttributes d = decode_attributes(world().scheme(), u.codec);
        ASSERT_EQ(d.labels, u.labels);
    }
}

TEST(Codec, PinnedDegreeDecodesExactly) {
    Rng rng(2);
    UtteranceRequest req;
    req.labels = AttributeLabels{Gender::Male, Level::High, Level::Normal, Level::Low, 2};
    req.degrees = AttributeDegrees{0.9, 0.5, 0.1, 0.3};
    const SyntheticUtterance u = synth_utterance(world(), rng, req);
    const DecodedAttributes d = decode_attributes(world().scheme(), u.codec);
    EXPECT_EQ(d.labels.pitch, Level::High);
    EXPECT_NEAR(d.degrees.pitch, 0.9, 1e-6);
    EXPECT_NEAR(d.degrees.speed, 0.5, 1e-6);
    EXPECT_NEAR(d.degrees.energy, 0.1, 1e-6);
    EXPECT_NEAR(d.degrees.emotion, 0.3, 1e-6);
}

TEST(Codec, IdenticalLabelsAndDegreesGiveIdenticalProsodyPattern) {
    UtteranceRequest req;
    req.speaker = 0;
    req.labels = AttributeLabels{Gender::Male, Level::Low, Level::High, Level::Normal, 1};
    req.degrees = AttributeDegrees{0.3, 0.7, 0.5, 0.1};
    req.content = std::vector<int>{3, 5, 7, 9};
    Rng a(3), b(3);
    const SyntheticUtterance ua = synth_utterance(world(), a, req);
    const SyntheticUtterance ub = synth_utterance(world(), b, req);
    EXPECT_EQ(split_style(ua.codec).style, split_style(ub.codec).style);
}

TEST(Codec, AllZeroCodecIsUnknownPattern) {
    CodecMatrix c;
    c.tokens = TokenGrid::Zero(10, 6);
    EXPECT_THROW(decode_attributes(world().scheme(), c), UnknownPattern);
}

TEST(Codec, SplitAndMergeArePartition) {
    Rng rng(4);
    const SyntheticUtterance u = synth_utterance(world(), rng);
    const StyleSplit s = split_style(u.codec);
    EXPECT_EQ(s.content.cols(), 2);
    EXPECT_EQ(s.style.cols(), 4);
    EXPECT_EQ(s.content.rows(), u.frames());
    EXPECT_EQ(merge_style(u.codec.layout, s.content, s.style), u.codec);
    for (int t = 0; t < u.frames(); ++t) {
        for (int c = 0; c < 4; ++c) EXPECT_EQ(s.style(t, c), u.codec.tokens(t, 2 + c));
    }
}

TEST(Codec, SplitWithoutProsodyChannels) {
    CodecMatrix c;
    c.layout = ChannelLayout{2, 0, 3, 64};
    c.tokens = TokenGrid::Zero(4, 5);
    for (int t = 0; t < 4; ++t) {
        for (int i = 0; i < 5; ++i) c.tokens(t, i) = t * 5 + i;
    }
    const StyleSplit s = split_style(c);
    EXPECT_EQ(s.style.cols(), 3);
    EXPECT_EQ(s.style(1, 0), 7);
    EXPECT_EQ(merge_style(c.layout, s.content, s.style), c);
}

TEST(Codec, StyleVectorIgnoresContent) {
    const PatternScheme scheme = world().scheme();
    const StyleExtractor ex(scheme, 16, 99);
    UtteranceRequest req;
    req.speaker = 1;
    req.labels = AttributeLabels{};
    req.degrees = AttributeDegrees{};
    req.content = std::vector<int>{4, 4, 4, 4};
    Rng a(5);
    SyntheticUtterance u = synth_utterance(world(), a, req);
    CodecMatrix other = u.codec;
    for (int t = 0; t < other.frames(); ++t) other.tokens(t, 0) = (other.tokens(t, 0) + 1) % 64;
    EXPECT_EQ(ex.extract(split_style(u.codec).style), ex.extract(split_style(other).style));
}

TEST(Codec, StyleVectorsSeparatePitchBins) {
    // Pairs of generated utterances whose pitch labels are high vs low; every
    // other attribute is drawn by the generator.
    const StyleExtractor ex(world().scheme(), 16, 99);
    Rng rng(6);
    double total = 0.0;
    for (int i = 0; i < 100; ++i) {
        auto draw = [&](Level pitch) {
            UtteranceRequest req;
            AttributeLabels labels;
            labels.pitch = pitch;
            labels.speed = static_cast<Level>(rng.below(3));
            labels.energy = static_cast<Level>(rng.below(3));
            labels.emotion = static_cast<int>(rng.below(5));
            req.labels = labels;
            return synth_utterance(world(), rng, req);
        };
        const auto uh = draw(Level::High);
        const auto ul = draw(Level::Low);
        total += cosine(ex.extract(split_style(uh.codec).style), ex.extract(split_style(ul.codec).style));
    }
    EXPECT_LT(total / 100, 0.5);
}

TEST(Codec, VoteRecoversLabelsOfCleanCodec) {
    Rng rng(7);
    const SyntheticUtterance u = synth_utterance(world(), rng);
    const VotedAttributes v = vote_attributes(world().scheme(), u.codec);
    EXPECT_EQ(v.bins[0], static_cast<int>(u.labels.gender));
    EXPECT_EQ(v.bins[1], static_cast<int>(u.labels.pitch));
    EXPECT_EQ(v.bins[2], static_cast<int>(u.labels.speed));
    EXPECT_EQ(v.bins[3], static_cast<int>(u.labels.energy));
    EXPECT_EQ(v.bins[4], u.labels.emotion);
}
