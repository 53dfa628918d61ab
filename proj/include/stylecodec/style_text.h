#pragma once

// Style prompts: a template bank with train/heldout templates, a keyword
// lexicon consistent with the attribute labels, and the keyword-pooling
// encoder mapping a prompt to the global style semantic vector.

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stylecodec/codec.h"
#include "stylecodec/nn.h"
#include "stylecodec/rng.h"

namespace stylecodec {

enum class TemplateSplit { Train, Heldout };

struct StyleTemplate {
    int id = 0;
    TemplateSplit split = TemplateSplit::Train;
    std::string text;
};

class TemplateBank {
public:
    static TemplateBank parse(std::string_view text);
    static TemplateBank load(const std::string& path);
    // Bundled resource; honours STYLECODEC_TEMPLATES when set.
    static TemplateBank load_default();

    const std::vector<StyleTemplate>& templates() const { return templates_; }
    std::vector<const StyleTemplate*> by_split(TemplateSplit split) const;
    std::string serialize() const;

private:
    std::vector<StyleTemplate> templates_;
};

struct StylePrompt {
    std::vector<std::string> tokens;
    std::optional<int> template_id;

    std::string text() const;
    static StylePrompt from_text(std::string_view text);
    bool operator==(const StylePrompt&) const = default;
};

// Keyword variants for each label value.
const std::vector<std::string>& gender_keywords(Gender g);
const std::vector<std::string>& pitch_keywords(Level l);
const std::vector<std::string>& speed_keywords(Level l);
const std::vector<std::string>& energy_keywords(Level l);
const std::vector<std::string>& emotion_keywords(int emotion);
bool is_style_keyword(std::string_view word);

// n distinct prompts for `labels`, drawn from templates of `split`.
std::vector<StylePrompt> generate_style_prompts(const TemplateBank& bank, const AttributeLabels& labels, Rng& rng,
                                                int n, TemplateSplit split = TemplateSplit::Train);

class Vocabulary {
public:
    static constexpr int kOov = 0;

    // Lexicon plus every word of the train templates; heldout-only words
    // stay out of vocabulary.
    static Vocabulary build(const TemplateBank& bank);
    static Vocabulary from_words(std::vector<std::string> words);

    int id(std::string_view word) const;
    std::vector<int> encode(const StylePrompt& prompt) const;
    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

struct StyleTextConfig {
    int embed_dim = 32;
    int hidden_dim = 64;
    int out_dim = 16;           // must equal the SMSD input dimension
    double filler_dropout = 0.1;
    bool frozen = false;
};

class StyleTextEncoder {
public:
    StyleTextEncoder(nn::ParamStore& store, const StyleTextConfig& cfg, int vocab_size, Rng& init_rng);

    // Returns the 1 x out_dim style semantic vector. Throws on empty input.
    nn::Var encode(nn::Tape& tape, std::span<const int> ids) const;

    const StyleTextConfig& config() const { return cfg_; }

private:
    nn::ParamStore& store_;
    StyleTextConfig cfg_;
};

// Replaces non-keyword tokens by OOV with probability p (training only).
std::vector<int> drop_fillers(const StylePrompt& prompt, const Vocabulary& vocab, double p, Rng& rng);

}  // namespace stylecodec
