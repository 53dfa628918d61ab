#include "stylecodec/style_text.h"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#ifndef STYLECODEC_RESOURCE_DIR
#define STYLECODEC_RESOURCE_DIR "resources"
#endif

namespace stylecodec {

namespace {

using Words = std::vector<std::string>;

const std::array<Words, kGenderCount> kGenderWords = {
    Words{"man", "male", "gentleman", "guy"},
    Words{"woman", "female", "lady", "girl"},
};
const std::array<Words, kLevelCount> kPitchWords = {
    Words{"low-pitched", "deep", "deep-toned"},
    Words{"normal-pitched", "mid-pitched", "moderate-pitched"},
    Words{"high-pitched", "shrill", "high-toned"},
};
const std::array<Words, kLevelCount> kSpeedWords = {
    Words{"slowly", "slow", "unhurried", "leisurely"},
    Words{"steadily", "normal-paced", "moderate-paced"},
    Words{"fast", "quickly", "rapidly", "briskly"},
};
const std::array<Words, kLevelCount> kEnergyWords = {
    Words{"quiet", "softly", "faint", "hushed"},
    Words{"moderate-volume", "normal-volume", "evenly"},
    Words{"loud", "loudly", "forceful", "energetic"},
};
const std::array<Words, kMaxEmotions> kEmotionWords = {
    Words{"neutral", "calm", "plain"},          Words{"happy", "cheerful", "joyful"},
    Words{"sad", "sorrowful", "gloomy"},        Words{"angry", "furious", "irritated"},
    Words{"surprised", "astonished", "amazed"}, Words{"fearful", "scared", "nervous"},
    Words{"disgusted", "repulsed", "revolted"}, Words{"tender", "gentle", "warm"},
};

const std::unordered_set<std::string>& keyword_set() {
    static const std::unordered_set<std::string> set = [] {
        std::unordered_set<std::string> s;
        auto add = [&](const auto& groups) {
            for (const auto& g : groups) s.insert(g.begin(), g.end());
        };
        add(kGenderWords);
        add(kPitchWords);
        add(kSpeedWords);
        add(kEnergyWords);
        add(kEmotionWords);
        return s;
    }();
    return set;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream is{std::string(text)};
    std::string w;
    while (is >> w) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        out.push_back(std::move(w));
    }
    return out;
}

const std::string& pick(const Words& words, Rng& rng) { return words[rng.below(words.size())]; }

}  // namespace

const std::vector<std::string>& gender_keywords(Gender g) { return kGenderWords[static_cast<size_t>(g)]; }
const std::vector<std::string>& pitch_keywords(Level l) { return kPitchWords[static_cast<size_t>(l)]; }
const std::vector<std::string>& speed_keywords(Level l) { return kSpeedWords[static_cast<size_t>(l)]; }
const std::vector<std::string>& energy_keywords(Level l) { return kEnergyWords[static_cast<size_t>(l)]; }
const std::vector<std::string>& emotion_keywords(int emotion) {
    if (emotion < 0 || emotion >= kMaxEmotions) throw std::out_of_range("emotion index out of range");
    return kEmotionWords[static_cast<size_t>(emotion)];
}
bool is_style_keyword(std::string_view word) { return keyword_set().contains(std::string(word)); }

TemplateBank TemplateBank::parse(std::string_view text) {
    TemplateBank bank;
    std::istringstream is{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("template line " + std::to_string(line_no) + ": missing split tag");
        const std::string tag = line.substr(0, tab);
        StyleTemplate t;
        t.id = static_cast<int>(bank.templates_.size());
        if (tag == "train") {
            t.split = TemplateSplit::Train;
        } else if (tag == "heldout") {
            t.split = TemplateSplit::Heldout;
        } else {
            throw std::runtime_error("template line " + std::to_string(line_no) + ": unknown split tag '" + tag + "'");
        }
        t.text = line.substr(tab + 1);
        for (std::string_view slot : {"{gender}", "{pitch}", "{speed}", "{energy}", "{emotion}"}) {
            if (t.text.find(slot) == std::string::npos) {
                throw std::runtime_error("template line " + std::to_string(line_no) + ": missing placeholder " + std::string(slot));
            }
        }
        bank.templates_.push_back(std::move(t));
    }
    if (bank.by_split(TemplateSplit::Train).empty()) throw std::runtime_error("template bank has no train templates");
    return bank;
}

TemplateBank TemplateBank::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open template bank: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

TemplateBank TemplateBank::load_default() {
    if (const char* env = std::getenv("STYLECODEC_TEMPLATES")) return load(env);
    return load(std::string(STYLECODEC_RESOURCE_DIR) + "/style_templates.txt");
}

std::vector<const StyleTemplate*> TemplateBank::by_split(TemplateSplit split) const {
    std::vector<const StyleTemplate*> out;
    for (const auto& t : templates_) {
        if (t.split == split) out.push_back(&t);
    }
    return out;
}

std::string TemplateBank::serialize() const {
    std::string out;
    for (const auto& t : templates_) {
        out += t.split == TemplateSplit::Train ? "train\t" : "heldout\t";
        out += t.text;
        out += '\n';
    }
    return out;
}

std::string StylePrompt::text() const {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

StylePrompt StylePrompt::from_text(std::string_view text) { return StylePrompt{tokenize(text), std::nullopt}; }

std::vector<StylePrompt> generate_style_prompts(const TemplateBank& bank, const AttributeLabels& labels, Rng& rng,
                                                int n, TemplateSplit split) {
    if (n < 1) throw std::invalid_argument("generate_style_prompts: n must be >= 1");
    const auto pool = bank.by_split(split);
    if (pool.empty()) throw std::invalid_argument("generate_style_prompts: no templates for split");
    std::vector<StylePrompt> out;
    std::set<std::string> seen;
    const int max_attempts = 64 * n;
    for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < n; ++attempt) {
        const StyleTemplate& tpl = *pool[rng.below(pool.size())];
        std::vector<std::string> tokens;
        for (auto& w : tokenize(tpl.text)) {
            if (w == "{gender}") {
                tokens.push_back(pick(gender_keywords(labels.gender), rng));
            } else if (w == "{pitch}") {
                tokens.push_back(pick(pitch_keywords(labels.pitch), rng));
            } else if (w == "{speed}") {
                tokens.push_back(pick(speed_keywords(labels.speed), rng));
            } else if (w == "{energy}") {
                tokens.push_back(pick(energy_keywords(labels.energy), rng));
            } else if (w == "{emotion}") {
                tokens.push_back(pick(emotion_keywords(labels.emotion), rng));
            } else {
                tokens.push_back(std::move(w));
            }
        }
        StylePrompt p{std::move(tokens), tpl.id};
        if (seen.insert(p.text()).second) out.push_back(std::move(p));
    }
    if (static_cast<int>(out.size()) < n) throw std::runtime_error("generate_style_prompts: template bank too small for n distinct prompts");
    return out;
}

Vocabulary Vocabulary::build(const TemplateBank& bank) {
    std::set<std::string> words(keyword_set().begin(), keyword_set().end());
    for (const auto* t : bank.by_split(TemplateSplit::Train)) {
        for (auto& w : tokenize(t->text)) {
            if (w.front() != '{') words.insert(w);
        }
    }
    std::vector<std::string> list{"<oov>"};
    list.insert(list.end(), words.begin(), words.end());
    return from_words(std::move(list));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
    if (words.empty() || words[0] != "<oov>") throw std::invalid_argument("vocabulary must start with <oov>");
    Vocabulary v;
    v.words_ = std::move(words);
    for (size_t i = 0; i < v.words_.size(); ++i) v.index_.emplace(v.words_[i], static_cast<int>(i));
    return v;
}

int Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kOov : it->second;
}

std::vector<int> Vocabulary::encode(const StylePrompt& prompt) const {
    std::vector<int> ids;
    ids.reserve(prompt.tokens.size());
    for (const auto& w : prompt.tokens) ids.push_back(id(w));
    return ids;
}

std::vector<int> drop_fillers(const StylePrompt& prompt, const Vocabulary& vocab, double p, Rng& rng) {
    std::vector<int> ids = vocab.encode(prompt);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (!is_style_keyword(prompt.tokens[i]) && rng.bernoulli(p)) ids[i] = Vocabulary::kOov;
    }
    return ids;
}

StyleTextEncoder::StyleTextEncoder(nn::ParamStore& store, const StyleTextConfig& cfg, int vocab_size, Rng& init_rng)
    : store_(store), cfg_(cfg) {
    auto& emb = store.create("style_text.embed", vocab_size, cfg.embed_dim);
    nn::init_normal(emb, init_rng, 0.3f);
    // OOV starts neutral; it only learns through filler dropout.
    emb.value.row(Vocabulary::kOov).setZero();
    auto& query = store.create("style_text.pool_query", 1, cfg.embed_dim);
    nn::init_normal(query, init_rng, 0.1f);
    nn::init_glorot(store.create("style_text.w1", cfg.embed_dim, cfg.hidden_dim), init_rng);
    store.create("style_text.b1", 1, cfg.hidden_dim);
    nn::init_glorot(store.create("style_text.w2", cfg.hidden_dim, cfg.out_dim), init_rng);
    store.create("style_text.b2", 1, cfg.out_dim);
    for (const char* name : {"style_text.embed", "style_text.pool_query", "style_text.w1", "style_text.b1",
                             "style_text.w2", "style_text.b2"}) {
        store.get(name).trainable = !cfg.frozen;
    }
}

nn::Var StyleTextEncoder::encode(nn::Tape& tape, std::span<const int> ids) const {
    if (ids.empty()) throw std::invalid_argument("style prompt must not be empty");
    auto P = [&](const char* n) { return tape.param(store_.get(n)); };
    nn::Var e = nn::gather_rows(tape, P("style_text.embed"), ids);
    // Single-query attention pooling over the prompt words.
    nn::Var pooled = nn::attention(tape, P("style_text.pool_query"), e, e, 1);
    nn::Var h = nn::tanh(tape, nn::linear(tape, pooled, P("style_text.w1"), P("style_text.b1")));
    return nn::linear(tape, h, P("style_text.w2"), P("style_text.b2"));
}

}  // namespace stylecodec
